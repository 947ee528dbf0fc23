"""Dataset ingestion, deterministic splitting, augmentation, and batching.

Input layout is one subdirectory per class under a root directory; labels are
the lexicographic order of the class directory names, so they are stable
across machines. A synthetic generator provides a desk-scale stand-in dataset
whose classes are separable stripe patterns.
"""

from __future__ import annotations

import colorsys
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .tensor import Rng

log = logging.getLogger("floranet.data")

IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png")


class DataError(ValueError):
    pass


@dataclass
class AugmentConfig:
    """Online augmentation ranges; a zero config is the identity transform.

    rotation_range and shear_range are degrees, shifts are fractions of the
    image side, zoom_range is a fraction around 1.
    """

    rotation_range: float = 0.0
    width_shift_range: float = 0.0
    height_shift_range: float = 0.0
    shear_range: float = 0.0
    zoom_range: float = 0.0

    def __post_init__(self):
        for name in ("rotation_range", "width_shift_range", "height_shift_range",
                     "shear_range", "zoom_range"):
            if getattr(self, name) < 0:
                raise DataError(f"{name} must be >= 0")

    def is_identity(self) -> bool:
        return not (self.rotation_range or self.width_shift_range or
                    self.height_shift_range or self.shear_range or self.zoom_range)

    def to_dict(self) -> dict:
        return {"rotation_range": self.rotation_range,
                "width_shift_range": self.width_shift_range,
                "height_shift_range": self.height_shift_range,
                "shear_range": self.shear_range,
                "zoom_range": self.zoom_range}

    @staticmethod
    def from_dict(d: dict) -> "AugmentConfig":
        return AugmentConfig(**d)


# The ranges used throughout: rotation 0.4 deg, width shift 0.2, height
# shift 0.3, shear 0.2 deg, zoom 0.2.
DEFAULT_AUGMENT = AugmentConfig(rotation_range=0.4, width_shift_range=0.2,
                                height_shift_range=0.3, shear_range=0.2,
                                zoom_range=0.2)


@dataclass
class DatasetIndex:
    """Class names plus (source, class index) sample records.

    A source is either a filesystem path or an in-memory H x W x 3 float
    array in [0, 1] (synthetic data).
    """

    class_names: list[str]
    samples: list[tuple[object, int]]
    source_root: str = ""
    exclusions: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        if sorted(self.class_names) != self.class_names:
            raise DataError("class_names must be sorted")
        if len(set(self.class_names)) != len(self.class_names):
            raise DataError("class_names must be duplicate-free")
        k = len(self.class_names)
        for _, ci in self.samples:
            if not (0 <= ci < k):
                raise DataError(f"class index {ci} out of range for {k} classes")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def subset(self, picks: list[int]) -> "DatasetIndex":
        return DatasetIndex(self.class_names, [self.samples[i] for i in picks],
                            self.source_root)


def scan_dataset(root) -> DatasetIndex:
    """Index a class-per-directory image tree.

    Empty class directories are skipped with a warning; undecodable files are
    recorded as exclusions and left out of the sample list.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    names: list[str] = []
    per_class_files: list[list[Path]] = []
    exclusions: list[tuple[str, str]] = []
    for d in class_dirs:
        files = sorted(p for p in d.iterdir()
                       if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())
        kept = []
        for p in files:
            try:
                with Image.open(p) as im:
                    im.verify()
                kept.append(p)
            except (UnidentifiedImageError, OSError) as exc:
                exclusions.append((str(p), f"undecodable: {exc}"))
        if not kept:
            log.warning("skipping empty class directory %s", d)
            continue
        names.append(d.name)
        per_class_files.append(kept)
    if len(names) < 2:
        raise DataError(f"need >= 2 non-empty class directories under {root}")
    samples = [(p, ci) for ci, files in enumerate(per_class_files) for p in files]
    return DatasetIndex(names, samples, str(root), exclusions)


def write_exclusion_report(index: DatasetIndex, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for p, reason in index.exclusions:
            f.write(f"{p}\t{reason}\n")


def split_dataset(index: DatasetIndex, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Per-class stratified split into (train, validation, test) indices.

    Within each class, samples are shuffled by the seed; the first
    floor(f_train * n) go to train, the next floor(f_val * n) to validation,
    the remainder to test.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"fractions must sum to 1, got {fractions}")
    rng = Rng(seed)
    by_class: dict[int, list[int]] = {}
    for i, (_, ci) in enumerate(index.samples):
        by_class.setdefault(ci, []).append(i)
    train, val, test = [], [], []
    for ci in sorted(by_class):
        ids = np.array(by_class[ci])
        ids = ids[rng.child(ci).permutation(len(ids))]
        n = len(ids)
        n_train = int(math.floor(fractions[0] * n))
        n_val = int(math.floor(fractions[1] * n))
        parts = (ids[:n_train], ids[n_train:n_train + n_val], ids[n_train + n_val:])
        if any(len(p) == 0 for p in parts):
            raise DataError(
                f"class {index.class_names[ci]!r} has {n} samples, too few to "
                f"populate train/validation/test under fractions {fractions}")
        train.extend(parts[0].tolist())
        val.extend(parts[1].tolist())
        test.extend(parts[2].tolist())
    return index.subset(train), index.subset(val), index.subset(test)


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Plain bilinear resample with half-pixel centers and edge clamping."""
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    return _sample_bilinear(img, *np.meshgrid(ys, xs, indexing="ij"))


def _sample_bilinear(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample img at fractional (y, x) grids; out-of-bounds clamps to the edge."""
    h, w = img.shape[:2]
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[..., None]
    wx = (xs - x0)[..., None]
    top = img[y0, x0] * (1 - wx) + img[y0, x1] * wx
    bot = img[y1, x0] * (1 - wx) + img[y1, x1] * wx
    return top * (1 - wy) + bot * wy


def load_image(source, target_hw: tuple[int, int]) -> np.ndarray:
    """Decode and scale one sample to H x W x 3 float32 in [0, 1]."""
    if isinstance(source, np.ndarray):
        img = source.astype(np.float64, copy=False)
    else:
        try:
            with Image.open(source) as im:
                img = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        except (UnidentifiedImageError, OSError) as exc:
            raise DataError(f"cannot decode image {source}: {exc}") from exc
    out = bilinear_resize(img, target_hw[0], target_hw[1])
    return out.astype(np.float32)


def augment(image: np.ndarray, config: AugmentConfig, rng: Rng) -> np.ndarray:
    """Random affine perturbation: rotate, shift, shear, zoom.

    Output pixels outside the source are filled from the nearest edge, so
    values never leave [0, 1]. A zero config returns the input bit-for-bit.
    """
    if config.is_identity():
        return image.copy()
    h, w = image.shape[:2]
    theta = math.radians(float(rng.uniform(-config.rotation_range,
                                           config.rotation_range)))
    shear = math.radians(float(rng.uniform(-config.shear_range, config.shear_range)))
    tx = float(rng.uniform(-config.width_shift_range, config.width_shift_range)) * w
    ty = float(rng.uniform(-config.height_shift_range, config.height_shift_range)) * h
    zoom = float(rng.uniform(1.0 - config.zoom_range, 1.0 + config.zoom_range))

    # forward map: rotate @ shear @ zoom about the center, then translate
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    rot = np.array([[cos_t, -sin_t], [sin_t, cos_t]])
    shr = np.array([[1.0, -math.sin(shear)], [0.0, math.cos(shear)]])
    zm = np.array([[zoom, 0.0], [0.0, zoom]])
    fwd = rot @ shr @ zm
    inv = np.linalg.inv(fwd)

    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    dy, dx = yy - cy - ty, xx - cx - tx
    src_y = inv[0, 0] * dy + inv[0, 1] * dx + cy
    src_x = inv[1, 0] * dy + inv[1, 1] * dx + cx
    out = _sample_bilinear(image.astype(np.float64, copy=False), src_y, src_x)
    return out.astype(image.dtype)


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), num_classes), dtype=np.float32)
    out[np.arange(len(labels)), labels] = 1.0
    return out


def make_batches(index: DatasetIndex, target_hw: tuple[int, int],
                 batch_size: int = 32, seed: int = 0, epoch: int = 0,
                 augment_config: AugmentConfig | None = None,
                 shuffle: bool = True):
    """Yield (images N x H x W x 3, one-hot N x K) batches for one epoch.

    Order is a permutation seeded by (seed, epoch); every sample appears
    exactly once per epoch, the last batch may be short. Augmentation draws
    come from a per-(epoch, position) substream, so batching is deterministic
    regardless of how batches are consumed.
    """
    if len(index) == 0:
        raise DataError("empty dataset index")
    rng = Rng(seed)
    order = rng.child(1000 + epoch).permutation(len(index)) if shuffle \
        else np.arange(len(index))
    k = index.num_classes
    for start in range(0, len(order), batch_size):
        chunk = order[start:start + batch_size]
        imgs = np.empty((len(chunk), target_hw[0], target_hw[1], 3), dtype=np.float32)
        labels = np.empty(len(chunk), dtype=np.int64)
        for row, pos in enumerate(chunk):
            src, ci = index.samples[int(pos)]
            img = load_image(src, target_hw)
            if augment_config is not None and not augment_config.is_identity():
                img = augment(img, augment_config, rng.child(2_000_000 + epoch, int(pos)))
            imgs[row] = img
            labels[row] = ci
        yield imgs, one_hot(labels, k)


def num_batches(n_samples: int, batch_size: int) -> int:
    return -(-n_samples // batch_size)


def synth_dataset(num_classes: int, per_class: int, image_size: int,
                  seed: int = 0) -> DatasetIndex:
    """In-memory dataset of oriented stripe patterns, one angle+palette per class."""
    if num_classes < 2:
        raise DataError(f"num_classes must be >= 2, got {num_classes}")
    rng = Rng(seed)
    samples: list[tuple[object, int]] = []
    yy, xx = np.meshgrid(np.linspace(0, 1, image_size),
                         np.linspace(0, 1, image_size), indexing="ij")
    for ci in range(num_classes):
        angle = math.pi * ci / num_classes
        fg = np.array(colorsys.hsv_to_rgb(ci / num_classes, 0.85, 1.0))
        bg = np.array(colorsys.hsv_to_rgb((ci / num_classes + 0.5) % 1.0, 0.85, 0.45))
        u = xx * math.cos(angle) + yy * math.sin(angle)
        for i in range(per_class):
            r = rng.child(ci, i)
            phase = float(r.uniform(0, 2 * math.pi))
            stripe = 0.5 + 0.5 * np.sin(2 * math.pi * 3.0 * u + phase)
            img = stripe[..., None] * fg + (1.0 - stripe)[..., None] * bg
            img += r.uniform(-0.03, 0.03, img.shape)
            samples.append((np.clip(img, 0.0, 1.0).astype(np.float32), ci))
    names = [f"synth_{ci:02d}" for ci in range(num_classes)]
    return DatasetIndex(names, samples, source_root=f"synth:{num_classes}x{per_class}x{image_size}")


def save_synth_dataset(index: DatasetIndex, out_dir) -> None:
    """Materialize an in-memory dataset as PNG files in class directories."""
    out = Path(out_dir)
    counters: dict[int, int] = {}
    for src, ci in index.samples:
        d = out / index.class_names[ci]
        d.mkdir(parents=True, exist_ok=True)
        i = counters.get(ci, 0)
        counters[ci] = i + 1
        arr = (np.asarray(src) * 255.0).round().astype(np.uint8)
        Image.fromarray(arr).save(d / f"{i:04d}.png")
