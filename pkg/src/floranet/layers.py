"""Layer nodes: forward and backward computation plus parameter accounting.

Each LayerNode describes one layer of an architecture (kind + hyperparameters
+ input edges). Parameters live beside the node in a Model; the functions here
are stateless given (node, params, inputs).

Conventions: channels-last N x H x W x C, same-padding pads more on the
bottom/right, convolutions followed by batch norm carry no bias.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from .tensor import Tensor, Rng

KINDS = (
    "Input",
    "ZeroPad",
    "Conv2D",
    "DepthwiseConv2D",
    "SeparableConv2D",
    "BatchNorm",
    "Activation",
    "MaxPool",
    "AvgPool",
    "GlobalAvgPool",
    "Flatten",
    "Dense",
    "Softmax",
    "Concat",
    "Add",
)


class LayerError(ValueError):
    """Layer misuse: bad hyperparameters or incompatible input shapes."""


@dataclass
class Parameter:
    """One weight tensor with its gradient buffer.

    moving_stat marks batch-norm running statistics, which are never
    gradient-updated and therefore never trainable.
    """

    name: str
    values: Tensor
    grads: Tensor
    trainable: bool = True
    moving_stat: bool = False

    def __post_init__(self):
        if self.grads.shape != self.values.shape:
            raise LayerError(
                f"parameter {self.name}: grads shape {self.grads.shape} "
                f"!= values shape {self.values.shape}"
            )
        if self.moving_stat and self.trainable:
            raise LayerError(f"parameter {self.name}: moving statistics are not trainable")

    @staticmethod
    def of(name: str, values: np.ndarray, dtype: str, trainable: bool = True,
           moving_stat: bool = False) -> "Parameter":
        v = Tensor(values, dtype)
        return Parameter(name, v, Tensor.zeros(v.shape, dtype), trainable, moving_stat)


@dataclass
class LayerNode:
    """One architecture node: kind, hyperparameters, and producer edges."""

    kind: str
    name: str
    inputs: list[int] = field(default_factory=list)
    in_channels: int = 0
    filters: int = 0            # output channels (Conv2D / SeparableConv2D)
    kernel: int = 1
    stride: int = 1
    padding: str = "same"       # same | valid
    use_bias: bool = False
    activation: str = ""        # relu | relu6 on Activation; softmax fused on Dense
    pad: tuple = ()             # ((top, bottom), (left, right)) for ZeroPad
    units: int = 0              # Dense output width
    bn_momentum: float = 0.99
    bn_epsilon: float = 1e-3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise LayerError(f"unknown layer kind {self.kind!r}")
        if isinstance(self.pad, list):
            self.pad = tuple(tuple(p) for p in self.pad)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["inputs"] = list(self.inputs)
        d["pad"] = [list(p) for p in self.pad]
        return d

    @staticmethod
    def from_dict(d: dict) -> "LayerNode":
        d = dict(d)
        d["pad"] = tuple(tuple(p) for p in d.get("pad", ()))
        return LayerNode(**d)


# ---------------------------------------------------------------------------
# Parameter shapes and counting
# ---------------------------------------------------------------------------

def param_shapes(node: LayerNode) -> list[tuple[str, tuple[int, ...], bool]]:
    """(name, shape, moving_stat) for every parameter tensor of the node."""
    k, cin, f = node.kernel, node.in_channels, node.filters
    if node.kind == "Conv2D":
        shapes = [("kernel", (k, k, cin, f), False)]
        if node.use_bias:
            shapes.append(("bias", (f,), False))
        return shapes
    if node.kind == "DepthwiseConv2D":
        shapes = [("kernel", (k, k, cin), False)]
        if node.use_bias:
            shapes.append(("bias", (cin,), False))
        return shapes
    if node.kind == "SeparableConv2D":
        shapes = [("depthwise", (k, k, cin), False), ("pointwise", (cin, f), False)]
        if node.use_bias:
            shapes.append(("bias", (f,), False))
        return shapes
    if node.kind == "BatchNorm":
        c = node.in_channels
        return [("gamma", (c,), False), ("beta", (c,), False),
                ("moving_mean", (c,), True), ("moving_var", (c,), True)]
    if node.kind == "Dense":
        return [("kernel", (node.in_channels, node.units), False),
                ("bias", (node.units,), False)]
    return []


def layer_param_count(node: LayerNode) -> dict:
    """Total / trainable / non-trainable parameter counts of one node."""
    total = trainable = non_trainable = 0
    for _, shape, moving in param_shapes(node):
        n = 1
        for e in shape:
            n *= e
        total += n
        if moving:
            non_trainable += n
        else:
            trainable += n
    return {"total": total, "trainable": trainable, "non_trainable": non_trainable}


def init_params(node: LayerNode, rng: Rng, dtype: str = "f32") -> list[Parameter]:
    """He-uniform kernels, zero biases, identity batch-norm statistics."""
    params = []
    for pname, shape, moving in param_shapes(node):
        if pname in ("kernel", "depthwise", "pointwise"):
            if node.kind == "DepthwiseConv2D" or pname == "depthwise":
                fan_in = node.kernel * node.kernel
            elif node.kind == "Dense":
                fan_in = node.in_channels
            elif pname == "pointwise":
                fan_in = node.in_channels
            else:
                fan_in = node.kernel * node.kernel * node.in_channels
            limit = np.sqrt(6.0 / max(fan_in, 1))
            values = rng.uniform(-limit, limit, shape)
        elif pname == "gamma":
            values = np.ones(shape)
        elif pname == "moving_var":
            values = np.ones(shape)
        else:  # bias, beta, moving_mean
            values = np.zeros(shape)
        params.append(Parameter.of(pname, values, dtype,
                                   trainable=not moving, moving_stat=moving))
    return params


# ---------------------------------------------------------------------------
# Shape algebra
# ---------------------------------------------------------------------------

def _pad_amount(size: int, k: int, s: int) -> tuple[int, int]:
    """Same-padding totals for one spatial dim, extra pixel on the bottom/right."""
    out = -(-size // s)
    total = max((out - 1) * s + k - size, 0)
    return total // 2, total - total // 2


def _conv_out(size: int, k: int, s: int, padding: str) -> int:
    if padding == "same":
        return -(-size // s)
    return (size - k) // s + 1


def node_output_shape(node: LayerNode, in_shapes: list[tuple[int, ...]]) -> tuple[int, ...]:
    """Output shape (without the batch dim) from the documented shape rules."""
    kind = node.kind
    if kind == "Input":
        return in_shapes[0]
    x = in_shapes[0]
    if kind == "ZeroPad":
        (t, b), (l, r) = node.pad
        return (x[0] + t + b, x[1] + l + r, x[2])
    if kind in ("Conv2D", "SeparableConv2D"):
        h = _conv_out(x[0], node.kernel, node.stride, node.padding)
        w = _conv_out(x[1], node.kernel, node.stride, node.padding)
        if h < 1 or w < 1:
            raise LayerError(f"{node.name}: kernel {node.kernel} does not fit input {x}")
        return (h, w, node.filters)
    if kind == "DepthwiseConv2D":
        h = _conv_out(x[0], node.kernel, node.stride, node.padding)
        w = _conv_out(x[1], node.kernel, node.stride, node.padding)
        if h < 1 or w < 1:
            raise LayerError(f"{node.name}: kernel {node.kernel} does not fit input {x}")
        return (h, w, x[2])
    if kind in ("MaxPool", "AvgPool"):
        h = _conv_out(x[0], node.kernel, node.stride, node.padding)
        w = _conv_out(x[1], node.kernel, node.stride, node.padding)
        if h < 1 or w < 1:
            raise LayerError(f"{node.name}: pool {node.kernel} does not fit input {x}")
        return (h, w, x[2])
    if kind in ("BatchNorm", "Activation", "Softmax"):
        return x
    if kind == "GlobalAvgPool":
        return (x[2],)
    if kind == "Flatten":
        return (x[0] * x[1] * x[2],)
    if kind == "Dense":
        return (node.units,)
    if kind == "Concat":
        h, w = x[0], x[1]
        for s in in_shapes[1:]:
            if s[0] != h or s[1] != w:
                raise LayerError(f"{node.name}: spatial mismatch {x} vs {s}")
        return (h, w, sum(s[2] for s in in_shapes))
    if kind == "Add":
        for s in in_shapes[1:]:
            if s != x:
                raise LayerError(f"{node.name}: shape mismatch {x} vs {s}")
        return x
    raise LayerError(f"unknown layer kind {kind!r}")


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def _check_channels(node: LayerNode, x: np.ndarray):
    if x.shape[-1] != node.in_channels:
        raise LayerError(
            f"{node.name}: expected {node.in_channels} input channels, got {x.shape[-1]}"
        )


def _pad_spatial(x: np.ndarray, k: int, s: int, padding: str, value: float = 0.0):
    if padding == "valid":
        return x, (0, 0)
    pt, pb = _pad_amount(x.shape[1], k, s)
    pl, pr = _pad_amount(x.shape[2], k, s)
    if pt == pb == pl == pr == 0:
        return x, (0, 0)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)),
                mode="constant", constant_values=value)
    return xp, (pt, pl)


def _windows(xp: np.ndarray, k: int, s: int) -> np.ndarray:
    """(N, OH, OW, C, k, k) sliding view over padded input."""
    v = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    return v[:, ::s, ::s]


def _scatter_windows(gxp: np.ndarray, gwin: np.ndarray, k: int, s: int):
    """Accumulate per-window gradients (N, OH, OW, C, k, k) back onto the padded grid."""
    oh, ow = gwin.shape[1], gwin.shape[2]
    for i in range(k):
        for j in range(k):
            gxp[:, i:i + s * oh:s, j:j + s * ow:s, :] += gwin[:, :, :, :, i, j]


def _unpad(gxp: np.ndarray, offset: tuple[int, int], shape) -> np.ndarray:
    pt, pl = offset
    return gxp[:, pt:pt + shape[1], pl:pl + shape[2], :]


def _conv_forward(node, x, w, b):
    k, s = node.kernel, node.stride
    xp, off = _pad_spatial(x, k, s, node.padding)
    win = _windows(xp, k, s)                       # (N,OH,OW,C,k,k)
    n, oh, ow = win.shape[0], win.shape[1], win.shape[2]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(
        n * oh * ow, k * k * node.in_channels)
    y = cols @ w.reshape(k * k * node.in_channels, node.filters)
    if b is not None:
        y += b
    y = y.reshape(n, oh, ow, node.filters)
    return y, (x.shape, xp.shape, off, cols)


def _conv_backward(node, params, cache, gy, accumulate):
    x_shape, xp_shape, off, cols = cache
    k, s, cin, f = node.kernel, node.stride, node.in_channels, node.filters
    n, oh, ow = gy.shape[0], gy.shape[1], gy.shape[2]
    g2 = gy.reshape(n * oh * ow, f)
    w = params[0].values.data
    if accumulate:
        params[0].grads.data += (cols.T @ g2).reshape(k, k, cin, f).transpose(0, 1, 2, 3)
        if node.use_bias:
            params[1].grads.data += g2.sum(axis=0)
    gcols = g2 @ w.reshape(k * k * cin, f).T
    gwin = gcols.reshape(n, oh, ow, k, k, cin).transpose(0, 1, 2, 5, 3, 4)
    gxp = np.zeros(xp_shape, dtype=gy.dtype)
    _scatter_windows(gxp, gwin, k, s)
    return _unpad(gxp, off, x_shape)


def _depthwise_forward(node, x, w, b):
    k, s = node.kernel, node.stride
    xp, off = _pad_spatial(x, k, s, node.padding)
    win = _windows(xp, k, s)                       # (N,OH,OW,C,k,k)
    y = np.einsum("nhwcij,ijc->nhwc", win, w, optimize=True)
    if b is not None:
        y += b
    return y, (x.shape, xp.shape, off, win)


def _depthwise_backward(node, kernel_p, bias_p, cache, gy, accumulate):
    x_shape, xp_shape, off, win = cache
    k, s = node.kernel, node.stride
    w = kernel_p.values.data
    if accumulate:
        kernel_p.grads.data += np.einsum("nhwcij,nhwc->ijc", win, gy, optimize=True)
        if bias_p is not None:
            bias_p.grads.data += gy.sum(axis=(0, 1, 2))
    gwin = gy[..., None, None] * w.transpose(2, 0, 1)[None, None, None, :, :, :]
    gxp = np.zeros(xp_shape, dtype=gy.dtype)
    _scatter_windows(gxp, gwin, k, s)
    return _unpad(gxp, off, x_shape)


def layer_forward(node: LayerNode, params: list[Parameter],
                  inputs: list[np.ndarray], mode: str = "infer"):
    """Run one node. Returns (output, cache); cache feeds layer_backward."""
    kind = node.kind
    x = inputs[0]

    if kind == "Input":
        return x, None

    if kind == "ZeroPad":
        (t, b), (l, r) = node.pad
        y = np.pad(x, ((0, 0), (t, b), (l, r), (0, 0)))
        return y, (x.shape,)

    if kind == "Conv2D":
        _check_channels(node, x)
        w = params[0].values.data
        b = params[1].values.data if node.use_bias else None
        return _conv_forward(node, x, w, b)

    if kind == "DepthwiseConv2D":
        _check_channels(node, x)
        w = params[0].values.data
        b = params[1].values.data if node.use_bias else None
        return _depthwise_forward(node, x, w, b)

    if kind == "SeparableConv2D":
        _check_channels(node, x)
        dw = params[0].values.data
        pw = params[1].values.data
        b = params[2].values.data if node.use_bias else None
        mid, dcache = _depthwise_forward(node, x, dw, None)
        y = mid @ pw
        if b is not None:
            y += b
        return y, (dcache, mid)

    if kind == "BatchNorm":
        _check_channels(node, x)
        gamma, beta, rmean, rvar = (p.values.data for p in params)
        eps = node.bn_epsilon
        axes = tuple(range(x.ndim - 1))
        if mode == "train":
            mu = x.mean(axis=axes)
            var = x.var(axis=axes)
            inv = 1.0 / np.sqrt(var + eps)
            xhat = (x - mu) * inv
            y = gamma * xhat + beta
            m = node.bn_momentum
            rmean *= m
            rmean += (1.0 - m) * mu
            rvar *= m
            rvar += (1.0 - m) * var
            return y, ("train", xhat, inv)
        inv = 1.0 / np.sqrt(rvar + eps)
        xhat = (x - rmean) * inv
        y = gamma * xhat + beta
        return y, ("infer", xhat, inv)

    if kind == "Activation":
        if node.activation == "relu":
            return np.maximum(x, 0), (x > 0,)
        if node.activation == "relu6":
            return np.clip(x, 0, 6), ((x > 0) & (x < 6),)
        raise LayerError(f"{node.name}: unknown activation {node.activation!r}")

    if kind == "MaxPool":
        k, s = node.kernel, node.stride
        xp, off = _pad_spatial(x, k, s, node.padding, value=-np.inf)
        win = _windows(xp, k, s)
        flat = win.reshape(win.shape[:4] + (k * k,))
        idx = flat.argmax(axis=-1)
        y = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
        return y, (x.shape, xp.shape, off, idx)

    if kind == "AvgPool":
        k, s = node.kernel, node.stride
        xp, off = _pad_spatial(x, k, s, node.padding)
        win = _windows(xp, k, s)
        if node.padding == "same" and off != (0, 0):
            ones = np.ones((1,) + x.shape[1:3] + (1,), dtype=x.dtype)
            op, _ = _pad_spatial(ones, k, s, node.padding)
            count = _windows(op, k, s).sum(axis=(-1, -2))   # valid cells per window
        else:
            count = None
        ssum = win.sum(axis=(-1, -2))
        y = ssum / (count if count is not None else k * k)
        return y, (x.shape, xp.shape, off, count)

    if kind == "GlobalAvgPool":
        return x.mean(axis=(1, 2)), (x.shape,)

    if kind == "Flatten":
        n = x.shape[0]
        return np.ascontiguousarray(x).reshape(n, -1), (x.shape,)

    if kind == "Dense":
        if x.shape[-1] != node.in_channels:
            raise LayerError(
                f"{node.name}: expected {node.in_channels} input features, got {x.shape[-1]}"
            )
        w, b = params[0].values.data, params[1].values.data
        z = x @ w + b
        if node.activation == "softmax":
            y = _softmax(z)
            return y, (x, y)
        return z, (x, None)

    if kind == "Softmax":
        y = _softmax(x)
        return y, (y,)

    if kind == "Concat":
        for a in inputs[1:]:
            if a.shape[:-1] != x.shape[:-1]:
                raise LayerError(f"{node.name}: spatial mismatch {x.shape} vs {a.shape}")
        y = np.concatenate(inputs, axis=-1)
        return y, tuple(a.shape[-1] for a in inputs)

    if kind == "Add":
        y = x.copy()
        for a in inputs[1:]:
            if a.shape != x.shape:
                raise LayerError(f"{node.name}: shape mismatch {x.shape} vs {a.shape}")
            y += a
        return y, (len(inputs),)

    raise LayerError(f"unknown layer kind {kind!r}")


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def layer_backward(node: LayerNode, params: list[Parameter], cache, gy: np.ndarray,
                   accumulate: bool = True, from_logits: bool = False) -> list[np.ndarray]:
    """Gradient w.r.t. each input; adds parameter gradients unless frozen.

    from_logits applies only to a Dense node with fused softmax: gy is then
    the gradient w.r.t. the pre-softmax logits (softmax+cross-entropy fusion).
    """
    if cache is None and node.kind != "Input":
        raise LayerError(f"{node.name}: backward before forward")
    kind = node.kind

    if kind == "Input":
        return [gy]

    if kind == "ZeroPad":
        (t, b), (l, r) = node.pad
        (x_shape,) = cache
        return [gy[:, t:t + x_shape[1], l:l + x_shape[2], :]]

    if kind == "Conv2D":
        return [_conv_backward(node, params, cache, gy, accumulate)]

    if kind == "DepthwiseConv2D":
        bias_p = params[1] if node.use_bias else None
        return [_depthwise_backward(node, params[0], bias_p, cache, gy, accumulate)]

    if kind == "SeparableConv2D":
        dcache, mid = cache
        pw = params[1].values.data
        if accumulate:
            params[1].grads.data += np.tensordot(mid, gy, axes=([0, 1, 2], [0, 1, 2]))
            if node.use_bias:
                params[2].grads.data += gy.sum(axis=(0, 1, 2))
        gmid = gy @ pw.T
        return [_depthwise_backward(node, params[0], None, dcache, gmid, accumulate)]

    if kind == "BatchNorm":
        bn_mode, xhat, inv = cache
        gamma = params[0].values.data
        if accumulate:
            params[0].grads.data += (gy * xhat).sum(axis=tuple(range(gy.ndim - 1)))
            params[1].grads.data += gy.sum(axis=tuple(range(gy.ndim - 1)))
        if bn_mode == "infer":
            return [gy * gamma * inv]
        axes = tuple(range(gy.ndim - 1))
        m = float(np.prod([gy.shape[a] for a in axes]))
        gxhat = gy * gamma
        gx = (inv / m) * (m * gxhat - gxhat.sum(axis=axes)
                          - xhat * (gxhat * xhat).sum(axis=axes))
        return [gx]

    if kind == "Activation":
        (mask,) = cache
        return [gy * mask]

    if kind == "MaxPool":
        x_shape, xp_shape, off, idx = cache
        k, s = node.kernel, node.stride
        oh, ow = idx.shape[1], idx.shape[2]
        gxp = np.zeros(xp_shape, dtype=gy.dtype)
        for w in range(k * k):
            i, j = divmod(w, k)
            contrib = np.where(idx == w, gy, 0)
            gxp[:, i:i + s * oh:s, j:j + s * ow:s, :] += contrib
        return [_unpad(gxp, off, x_shape)]

    if kind == "AvgPool":
        x_shape, xp_shape, off, count = cache
        k, s = node.kernel, node.stride
        oh, ow = gy.shape[1], gy.shape[2]
        g = gy / (count if count is not None else k * k)
        gxp = np.zeros(xp_shape, dtype=gy.dtype)
        for i in range(k):
            for j in range(k):
                gxp[:, i:i + s * oh:s, j:j + s * ow:s, :] += g
        return [_unpad(gxp, off, x_shape)]

    if kind == "GlobalAvgPool":
        (x_shape,) = cache
        h, w = x_shape[1], x_shape[2]
        gx = np.broadcast_to(gy[:, None, None, :] / (h * w), x_shape)
        return [np.ascontiguousarray(gx)]

    if kind == "Flatten":
        (x_shape,) = cache
        return [gy.reshape(x_shape)]

    if kind == "Dense":
        x, y = cache
        w = params[0].values.data
        if node.activation == "softmax" and not from_logits:
            gz = (gy - (gy * y).sum(axis=-1, keepdims=True)) * y
        else:
            gz = gy
        if accumulate:
            params[0].grads.data += x.T @ gz
            params[1].grads.data += gz.sum(axis=0)
        return [gz @ w.T]

    if kind == "Softmax":
        (y,) = cache
        gx = (gy - (gy * y).sum(axis=-1, keepdims=True)) * y
        return [gx]

    if kind == "Concat":
        widths = cache
        out, pos = [], 0
        for c in widths:
            out.append(np.ascontiguousarray(gy[..., pos:pos + c]))
            pos += c
        return out

    if kind == "Add":
        (n,) = cache
        return [gy] * n

    raise LayerError(f"unknown layer kind {kind!r}")
