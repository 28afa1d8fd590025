"""Dataset handling: seeded synthetic two-class images, stratified splits,
and a bit-exact on-disk format.

The synthetic task is a desk-scale stand-in for a binary medical-imaging
problem: class 0 images are smooth low-frequency fields, class 1 images add
a localized bright lesion-like bump. Per-class mean intensity is equalized
so the label never leaks through a global brightness statistic.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .util import new_rng

DATASET_MAGIC = b"SEDD"
DATASET_VERSION = 1


class DatasetFormatError(ValueError):
    """Base class for dataset file rejections."""


class BadMagicError(DatasetFormatError):
    pass


class TruncatedFileError(DatasetFormatError):
    pass


class LabelRangeError(DatasetFormatError):
    pass


class PixelRangeError(DatasetFormatError):
    pass


@dataclass
class LabeledDataset:
    """Images (n, C, H, W) in [0, 1], integer labels, and class names."""

    images: np.ndarray
    labels: np.ndarray
    class_names: list[str]
    provenance: str = "synthetic"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError(f"images must be n x C x H x W, got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError("one label per image required")
        lo, hi = float(self.images.min()), float(self.images.max())
        if lo < 0.0 or hi > 1.0:
            raise PixelRangeError(f"pixel values outside [0, 1]: min={lo}, max={hi}")
        k = len(self.class_names)
        if self.labels.min() < 0 or self.labels.max() >= k:
            raise LabelRangeError(f"labels must lie in [0, {k})")
        present = np.unique(self.labels)
        if len(present) != k:
            raise ValueError("every class needs at least one example")

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def subset(self, indices) -> "LabeledDataset":
        return LabeledDataset(self.images[indices], self.labels[indices],
                              self.class_names, self.provenance)


@dataclass
class SplitSpec:
    """Train/val/test fractions (positive, summing to 1) plus a shuffle seed."""

    train: float = 0.8
    val: float = 0.1
    test: float = 0.1
    seed: int = 0

    def __post_init__(self):
        fractions = (self.train, self.val, self.test)
        if any(f <= 0 for f in fractions):
            raise ValueError("all split fractions must be positive")
        if abs(sum(fractions) - 1.0) > 1e-9:
            raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")


def _gaussian_bump(size: int, cy: float, cx: float, sigma: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return np.exp(-(((yy - cy) ** 2) + ((xx - cx) ** 2)) / (2.0 * sigma * sigma))


def synth_generate(n: int, image_size: int = 32, seed: int = 0) -> LabeledDataset:
    """Deterministic two-class image set, n/2 examples per class.

    Both classes share the same smooth random field construction plus a
    label-independent brightness/contrast jitter. Class 1 adds a localized
    bump whose amplitude varies per image (a spread of detection margins, so
    small-budget attacks have work to do); the bump's integrated mass is
    removed again, keeping per-class mean intensity equal. The classes are
    therefore only separable through spatial structure.
    """
    if n < 2 or n % 2:
        raise ValueError(f"n must be an even count >= 2, got {n}")
    rng = new_rng(seed, "synth")
    half = n // 2
    s = image_size
    bump_sigma = 0.15 * s
    images = np.empty((n, 1, s, s), dtype=np.float64)
    labels = np.concatenate([np.zeros(half, dtype=np.int64), np.ones(half, dtype=np.int64)])

    for i in range(n):
        base = np.full((s, s), 0.40)
        for _ in range(4):
            cy, cx = rng.uniform(0, s, size=2)
            sigma = rng.uniform(0.20 * s, 0.45 * s)
            amp = rng.uniform(-0.08, 0.08)
            base += amp * _gaussian_bump(s, cy, cx, sigma)
        if labels[i] == 1:
            margin = 1.5 * bump_sigma
            cy, cx = rng.uniform(margin, s - margin, size=2)
            bump = rng.uniform(0.08, 0.38) * _gaussian_bump(s, cy, cx, bump_sigma)
            base += bump
            base -= bump.sum() / (s * s)  # keep the class means aligned
        base = (base - 0.40) * rng.uniform(0.75, 1.25) + 0.40 + rng.uniform(-0.05, 0.05)
        base += rng.normal(0.0, 0.03, size=(s, s))
        images[i, 0] = base

    images = np.clip(images, 0.0, 1.0).astype(np.float32)
    images = np.repeat(images, 3, axis=1)  # grayscale replicated to 3 channels
    return LabeledDataset(images, labels, ["normal", "lesion"], provenance="synthetic")


def split_dataset(data: LabeledDataset, spec: SplitSpec) -> tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    """Disjoint, exhaustive, label-stratified partition, deterministic per seed.

    Val and test sizes round per class; the remainder lands in train. A split
    that would leave some class empty is rejected.
    """
    rng = new_rng(spec.seed, "split")
    train_idx: list[np.ndarray] = []
    val_idx: list[np.ndarray] = []
    test_idx: list[np.ndarray] = []
    for cls in range(data.num_classes):
        idx = np.flatnonzero(data.labels == cls)
        rng.shuffle(idx)
        n_c = len(idx)
        n_val = int(np.floor(spec.val * n_c + 0.5))
        n_test = int(np.floor(spec.test * n_c + 0.5))
        n_train = n_c - n_val - n_test
        if min(n_train, n_val, n_test) < 1:
            raise ValueError(
                f"class {cls} would get an empty split "
                f"(train={n_train}, val={n_val}, test={n_test})"
            )
        val_idx.append(idx[:n_val])
        test_idx.append(idx[n_val : n_val + n_test])
        train_idx.append(idx[n_val + n_test :])
    train = np.sort(np.concatenate(train_idx))
    val = np.sort(np.concatenate(val_idx))
    test = np.sort(np.concatenate(test_idx))
    return data.subset(train), data.subset(val), data.subset(test)


# ---------------------------------------------------------------------------
# file format: magic "SEDD", version u16, count u32, C/H/W u32, K u32,
# labels u16 LE, images f32 LE (row-major, image-major), then class names as
# length-prefixed UTF-8
# ---------------------------------------------------------------------------


def save_dataset(data: LabeledDataset, path) -> None:
    n, c, h, w = data.images.shape
    k = data.num_classes
    out = DATASET_MAGIC + struct.pack("<HIIIII", DATASET_VERSION, n, c, h, w, k)
    out += data.labels.astype("<u2").tobytes()
    out += np.ascontiguousarray(data.images, dtype="<f4").tobytes()
    for name in data.class_names:
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
    with open(path, "wb") as fh:
        fh.write(out)


def load_dataset(path) -> LabeledDataset:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 4 or buf[:4] != DATASET_MAGIC:
        raise BadMagicError(f"bad dataset magic {buf[:4]!r}")
    if len(buf) < 26:
        raise TruncatedFileError("dataset header truncated")
    version, n, c, h, w, k = struct.unpack_from("<HIIIII", buf, 4)
    if version != DATASET_VERSION:
        raise DatasetFormatError(f"unsupported dataset version {version}")
    pos = 26
    end_labels = pos + 2 * n
    if len(buf) < end_labels:
        raise TruncatedFileError("label block truncated")
    labels = np.frombuffer(buf[pos:end_labels], dtype="<u2").astype(np.int64)
    pos = end_labels
    end_images = pos + 4 * n * c * h * w
    if len(buf) < end_images:
        raise TruncatedFileError("image payload truncated")
    images = np.frombuffer(buf[pos:end_images], dtype="<f4").reshape(n, c, h, w)
    pos = end_images
    names = []
    for _ in range(k):
        if len(buf) < pos + 2:
            raise TruncatedFileError("class-name block truncated")
        (ln,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        if len(buf) < pos + ln:
            raise TruncatedFileError("class-name block truncated")
        names.append(buf[pos : pos + ln].decode("utf-8"))
        pos += ln
    if labels.size and labels.max() >= k:
        raise LabelRangeError(f"label {labels.max()} outside [0, {k})")
    lo, hi = float(images.min()), float(images.max())
    if lo < 0.0 or hi > 1.0:
        raise PixelRangeError(f"pixel values outside [0, 1]: min={lo}, max={hi}")
    return LabeledDataset(images.copy(), labels, names, provenance="external file")
