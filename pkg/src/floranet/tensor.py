"""Dense tensors, deterministic random numbers, and the binary tensor file format.

Every value that moves through the toolkit (images, feature maps, weights,
gradients) is a Tensor: a row-major float array of rank 1 to 4 with the
channels-last N x H x W x C layout for image data.
"""

from __future__ import annotations

import struct
from typing import Sequence

import numpy as np

MAGIC = b"FTNSR1"
_DTYPE_CODE = {"f32": 0, "f64": 1}
_CODE_DTYPE = {0: "f32", 1: "f64"}
_NP_DTYPE = {"f32": np.float32, "f64": np.float64}
# on-disk representation is always little-endian
_LE_DTYPE = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}

MAX_RANK = 4


class TensorError(ValueError):
    """Invalid tensor construction or operation."""


class ShapeMismatch(TensorError):
    def __init__(self, a_shape, b_shape, what: str = "shape mismatch"):
        self.a_shape = tuple(a_shape)
        self.b_shape = tuple(b_shape)
        super().__init__(f"{what}: {self.a_shape} vs {self.b_shape}")


class TensorFormatError(TensorError):
    """Malformed tensor file or byte stream."""


class BadMagic(TensorFormatError):
    pass


class TruncatedPayload(TensorFormatError):
    pass


class UnknownDtype(TensorFormatError):
    pass


class Tensor:
    """Dense row-major float array, rank 1..4."""

    __slots__ = ("data",)

    def __init__(self, data, dtype: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is None:
            dtype = "f64" if arr.dtype == np.float64 else "f32"
        if dtype not in _NP_DTYPE:
            raise TensorError(f"unsupported dtype {dtype!r}; expected 'f32' or 'f64'")
        arr = np.ascontiguousarray(arr, dtype=_NP_DTYPE[dtype])
        if arr.ndim < 1 or arr.ndim > MAX_RANK:
            raise TensorError(f"rank must be 1..{MAX_RANK}, got {arr.ndim}")
        if any(e < 1 for e in arr.shape):
            raise TensorError(f"all extents must be >= 1, got shape {arr.shape}")
        self.data = arr

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> str:
        return "f64" if self.data.dtype == np.float64 else "f32"

    @property
    def size(self) -> int:
        return self.data.size

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), self.dtype)

    def tolist(self):
        return self.data.tolist()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"

    @staticmethod
    def zeros(shape: Sequence[int], dtype: str = "f32") -> "Tensor":
        return Tensor(np.zeros(tuple(shape), dtype=_NP_DTYPE[dtype]), dtype)

    @staticmethod
    def full(shape: Sequence[int], value: float, dtype: str = "f32") -> "Tensor":
        return Tensor(np.full(tuple(shape), value, dtype=_NP_DTYPE[dtype]), dtype)


def _as_pair(a: Tensor, b) -> tuple[np.ndarray, np.ndarray | float]:
    """Validate an elementwise operand pair: equal shapes and dtypes, or scalar b."""
    if isinstance(b, Tensor):
        if a.dtype != b.dtype:
            raise TensorError(f"dtype mismatch: {a.dtype} vs {b.dtype}")
        if a.shape != b.shape:
            raise ShapeMismatch(a.shape, b.shape)
        return a.data, b.data
    return a.data, float(b)


def add(a: Tensor, b) -> Tensor:
    x, y = _as_pair(a, b)
    return Tensor(x + y, a.dtype)


def sub(a: Tensor, b) -> Tensor:
    x, y = _as_pair(a, b)
    return Tensor(x - y, a.dtype)


def mul(a: Tensor, b) -> Tensor:
    x, y = _as_pair(a, b)
    return Tensor(x * y, a.dtype)


def scale(a: Tensor, s: float) -> Tensor:
    return Tensor(a.data * float(s), a.dtype)


def maximum(a: Tensor, b) -> Tensor:
    x, y = _as_pair(a, b)
    return Tensor(np.maximum(x, y), a.dtype)


def _check_axes(t: Tensor, axes) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(t.data.ndim))
    if isinstance(axes, int):
        axes = (axes,)
    axes = tuple(int(a) for a in axes)
    for a in axes:
        if a < -t.data.ndim or a >= t.data.ndim:
            raise TensorError(f"axis {a} invalid for rank {t.data.ndim}")
    return axes


def reduce_sum(t: Tensor, axes=None) -> Tensor | float:
    axes = _check_axes(t, axes)
    out = t.data.sum(axis=axes)
    if out.ndim == 0:
        return float(out)
    return Tensor(out, t.dtype)


def reduce_mean(t: Tensor, axes=None) -> Tensor | float:
    axes = _check_axes(t, axes)
    out = t.data.mean(axis=axes)
    if out.ndim == 0:
        return float(out)
    return Tensor(out, t.dtype)


def argmax(t: Tensor, axis: int | None = None):
    """Index of the maximum; ties resolve to the lowest index."""
    if axis is None:
        return int(np.argmax(t.data))
    if axis < -t.data.ndim or axis >= t.data.ndim:
        raise TensorError(f"axis {axis} invalid for rank {t.data.ndim}")
    return np.argmax(t.data, axis=axis)


# ---------------------------------------------------------------------------
# Binary tensor format (little-endian):
#   magic "FTNSR1" (6 bytes) | dtype code u8 (0=f32, 1=f64) | rank u8
#   | rank x u64 extents | row-major payload. No padding, no alignment.
# ---------------------------------------------------------------------------

def tensor_to_bytes(t: Tensor) -> bytes:
    shape = t.shape
    head = MAGIC + struct.pack("<BB", _DTYPE_CODE[t.dtype], len(shape))
    head += struct.pack(f"<{len(shape)}Q", *shape)
    payload = np.ascontiguousarray(t.data, dtype=_LE_DTYPE[t.dtype]).tobytes()
    return head + payload


def tensor_from_bytes(buf: bytes, offset: int = 0) -> tuple[Tensor, int]:
    """Decode one tensor record starting at `offset`; returns (tensor, next offset)."""
    if len(buf) - offset < len(MAGIC) + 2:
        raise TruncatedPayload("record header truncated")
    magic = buf[offset:offset + len(MAGIC)]
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}, expected {MAGIC!r}")
    pos = offset + len(MAGIC)
    code, rank = struct.unpack_from("<BB", buf, pos)
    pos += 2
    if code not in _CODE_DTYPE:
        raise UnknownDtype(f"unknown dtype code {code}")
    if rank < 1 or rank > MAX_RANK:
        raise TensorFormatError(f"rank must be 1..{MAX_RANK}, got {rank}")
    if len(buf) - pos < 8 * rank:
        raise TruncatedPayload("extent list truncated")
    shape = struct.unpack_from(f"<{rank}Q", buf, pos)
    pos += 8 * rank
    if any(e < 1 for e in shape):
        raise TensorFormatError(f"all extents must be >= 1, got {shape}")
    dtype = _CODE_DTYPE[code]
    count = 1
    for e in shape:
        count *= e
    nbytes = count * _LE_DTYPE[dtype].itemsize
    if len(buf) - pos < nbytes:
        have = (len(buf) - pos) // _LE_DTYPE[dtype].itemsize
        raise TruncatedPayload(f"declared {count} elements, {have} present")
    arr = np.frombuffer(buf, dtype=_LE_DTYPE[dtype], count=count, offset=pos)
    pos += nbytes
    return Tensor(arr.reshape(shape).astype(_NP_DTYPE[dtype]), dtype), pos


def write_tensor(path, t: Tensor) -> None:
    with open(path, "wb") as f:
        f.write(tensor_to_bytes(t))


def read_tensor(path) -> Tensor:
    with open(path, "rb") as f:
        buf = f.read()
    t, pos = tensor_from_bytes(buf)
    if pos != len(buf):
        raise TensorFormatError(f"{len(buf) - pos} trailing bytes after payload")
    return t


class Rng:
    """Deterministic counter-based random stream.

    Built on Philox so an identical seed yields an identical stream on every
    platform. `child(*key)` derives an independent, reproducible substream,
    used to give each (epoch, sample, node, ...) its own generator.
    """

    def __init__(self, seed: int, _key: tuple[int, ...] = ()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._key = tuple(int(k) for k in _key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self._key)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def child(self, *key: int) -> "Rng":
        return Rng(self.seed, self._key + key)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low: int, high: int | None = None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def shuffle(self, seq: list) -> None:
        self._gen.shuffle(seq)
