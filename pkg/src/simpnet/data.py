"""Dataset loading (MNIST IDX, CIFAR-10 binary), augmentation, batching.

Both on-disk formats are parsed bit-exactly and validated up front;
malformed files raise FormatError, never crash downstream. Images are
held as float32 in [0, 1], NCHW. IDX integers are big-endian per that
format; everything else in the project is little-endian.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import FormatError
from .rng import SplitRng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR10_RECORD_BYTES = 3073  # 1 label byte + 3 * 1024 channel-planar pixels
CIFAR10_BATCH_RECORDS = 10000
CIFAR10_BATCH_BYTES = CIFAR10_BATCH_RECORDS * CIFAR10_RECORD_BYTES


@dataclass
class Dataset:
    images: np.ndarray  # (N, c, h, w) float32
    labels: np.ndarray  # (N,) int64
    name: str
    num_classes: int
    mean: np.ndarray | None = None  # per-channel, set by normalize()
    std: np.ndarray | None = None

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise FormatError(
                f"image/label count mismatch: {len(self.images)} images vs {len(self.labels)} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise FormatError(f"labels outside [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)

    @property
    def sample_shape(self):
        return tuple(self.images.shape[1:])

    def subset(self, n: int) -> "Dataset":
        """First n examples (deterministic desk-scale truncation)."""
        n = min(n, len(self))
        return replace(self, images=self.images[:n], labels=self.labels[:n])


# ---------------------------------------------------------------------------
# MNIST IDX


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated IDX file: expected {n} bytes for {what}, got {len(buf)}")
    return buf


def read_idx_images(path) -> np.ndarray:
    """Raw (N, h, w) uint8 pixel array from an IDX image file."""
    with open(path, "rb") as f:
        magic, count, h, w = struct.unpack(">IIII", _read_exact(f, 16, "image header"))
        if magic != IDX_IMAGES_MAGIC:
            raise FormatError(f"bad IDX image magic 0x{magic:08x} (expected 0x{IDX_IMAGES_MAGIC:08x})")
        data = _read_exact(f, count * h * w, "pixel data")
        if f.read(1):
            raise FormatError("trailing bytes after IDX pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(count, h, w)


def read_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic, count = struct.unpack(">II", _read_exact(f, 8, "label header"))
        if magic != IDX_LABELS_MAGIC:
            raise FormatError(f"bad IDX label magic 0x{magic:08x} (expected 0x{IDX_LABELS_MAGIC:08x})")
        data = _read_exact(f, count, "label data")
        if f.read(1):
            raise FormatError("trailing bytes after IDX label data")
    return np.frombuffer(data, dtype=np.uint8)


def write_idx_images(images: np.ndarray, path):
    """Serialize (N, h, w) or (N, 1, h, w) pixels to IDX; float input in
    [0, 1] is re-quantized by rounding so a load/save round trip is
    byte-exact."""
    if images.ndim == 4:
        images = images[:, 0]
    if images.dtype != np.uint8:
        images = np.rint(images * 255.0).astype(np.uint8)
    n, h, w = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w))
        f.write(np.ascontiguousarray(images).tobytes())


def write_idx_labels(labels: np.ndarray, path):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


def load_mnist(images_path, labels_path) -> Dataset:
    """IDX pair -> Dataset of (N, 1, h, w) float32 pixels in [0, 1]."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise FormatError(f"IDX count mismatch: {len(images)} images vs {len(labels)} labels")
    if labels.size and labels.max() > 9:
        raise FormatError(f"label byte {labels.max()} out of range for 10 classes")
    x = (images.astype(np.float32) / 255.0)[:, None, :, :]
    return Dataset(x, labels.astype(np.int64), name="mnist", num_classes=10)


# ---------------------------------------------------------------------------
# CIFAR-10 binary


def load_cifar10(batch_paths) -> Dataset:
    """One or more CIFAR-10 binary batch files -> (N, 3, 32, 32) Dataset.

    Each record is 3073 bytes: label byte then 3072 channel-planar
    (R, G, B) row-major pixels.
    """
    if isinstance(batch_paths, (str, os.PathLike)):
        batch_paths = [batch_paths]
    all_images, all_labels = [], []
    for path in batch_paths:
        size = os.path.getsize(path)
        if size % CIFAR10_RECORD_BYTES != 0:
            raise FormatError(f"{path}: size {size} is not a multiple of {CIFAR10_RECORD_BYTES}")
        with open(path, "rb") as f:
            raw = np.frombuffer(f.read(), dtype=np.uint8)
        records = raw.reshape(-1, CIFAR10_RECORD_BYTES)
        labels = records[:, 0]
        if labels.size and labels.max() > 9:
            raise FormatError(f"{path}: label byte {labels.max()} out of range for 10 classes")
        images = records[:, 1:].reshape(-1, 3, 32, 32)
        all_images.append(images)
        all_labels.append(labels)
    x = np.concatenate(all_images).astype(np.float32) / 255.0
    y = np.concatenate(all_labels).astype(np.int64)
    return Dataset(x, y, name="cifar10", num_classes=10)


# ---------------------------------------------------------------------------
# normalization & augmentation


def normalize(dataset: Dataset, mean: np.ndarray | None = None, std: np.ndarray | None = None) -> Dataset:
    """Per-channel (x - mean) / std. Statistics are computed in float64
    from this dataset when not given (fit on train, reuse on test)."""
    if mean is None:
        mean = dataset.images.astype(np.float64).mean(axis=(0, 2, 3))
    if std is None:
        std = dataset.images.astype(np.float64).std(axis=(0, 2, 3))
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    x = (dataset.images - mean[None, :, None, None].astype(np.float32)) / std[
        None, :, None, None
    ].astype(np.float32)
    return replace(dataset, images=x.astype(np.float32), mean=mean, std=std)


@dataclass(frozen=True)
class AugmentPolicy:
    pad: int = 0
    crop: int = 0  # 0 means keep the input size
    mirror_p: float = 0.0


def augment(batch: np.ndarray, policy: AugmentPolicy, rng: SplitRng) -> np.ndarray:
    """Zero-pad, random-crop back, and mirror, independently per image."""
    n, c, h, w = batch.shape
    crop = policy.crop or h
    if crop > h + 2 * policy.pad:
        raise ValueError(f"crop {crop} exceeds padded size {h + 2 * policy.pad}")
    if policy.pad == 0 and crop == h and policy.mirror_p == 0.0:
        return batch
    if policy.pad > 0:
        padded = np.pad(batch, ((0, 0), (0, 0), (policy.pad, policy.pad), (policy.pad, policy.pad)))
    else:
        padded = batch
    span_y = padded.shape[2] - crop + 1
    span_x = padded.shape[3] - crop + 1
    oy = rng.integers(n, span_y)
    ox = rng.integers(n, span_x)
    flip = rng.coin(n, policy.mirror_p)
    out = np.empty((n, c, crop, crop), dtype=batch.dtype)
    for i in range(n):
        view = padded[i, :, oy[i] : oy[i] + crop, ox[i] : ox[i] + crop]
        out[i] = view[:, :, ::-1] if flip[i] else view
    return out


def batches(dataset: Dataset, batch_size: int, rng: SplitRng | None = None):
    """Yield (x, labels) minibatches; deterministic permutation when an
    rng is given, natural order otherwise. The last short batch is kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = len(dataset)
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        yield dataset.images[idx], dataset.labels[idx]


# ---------------------------------------------------------------------------
# path resolution for the CLI


def mnist_paths(data_dir, split: str):
    prefix = "train" if split == "train" else "t10k"
    return (
        os.path.join(data_dir, f"{prefix}-images-idx3-ubyte"),
        os.path.join(data_dir, f"{prefix}-labels-idx1-ubyte"),
    )


def cifar10_paths(data_dir, split: str):
    base = os.path.join(data_dir, "cifar-10-batches-bin")
    if not os.path.isdir(base):
        base = data_dir
    if split == "train":
        return [os.path.join(base, f"data_batch_{i}.bin") for i in range(1, 6)]
    return [os.path.join(base, "test_batch.bin")]


def load_split(dataset_name: str, data_dir, split: str) -> Dataset:
    if dataset_name == "mnist":
        return load_mnist(*mnist_paths(data_dir, split))
    if dataset_name == "cifar10":
        return load_cifar10(cifar10_paths(data_dir, split))
    raise ValueError(f"unknown dataset {dataset_name!r} (expected mnist or cifar10)")
