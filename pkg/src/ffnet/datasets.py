"""Dataset loading and label-overlay sample construction.

Loaders read the canonical binary files from a local directory:

* MNIST IDX: big-endian headers, magic 2051 (images) / 2049 (labels);
  plain or gzip-compressed files are accepted, with either the historic
  hyphenated names (train-images-idx3-ubyte) or dotted ones
  (train-images.idx3-ubyte).
* CIFAR-10 binary: data_batch_1..5.bin and test_batch.bin, one 3073-byte
  record per image (1 label byte + 3072 channel-major RGB bytes), looked up
  in dir_path or dir_path/cifar-10-batches-bin.

Pixel bytes are scaled by 1/255. Overlay samples write a one-hot label into
the first J pixels of row 0: channel 0 carries the code, the same positions
in any remaining channels are zeroed, so the label is always recoverable as
the argmax of the overlay region.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Tuple

import numpy as np

from .tensor import ConfigError

DEFAULT_OVERLAY_VALUE = 1.0


class DataError(Exception):
    """A dataset file is missing, truncated, or malformed."""


@dataclass
class Dataset:
    images: np.ndarray          # (N, C, H, W) float32
    labels: np.ndarray          # (N,) int64 in [0, num_classes)
    num_classes: int = 10
    channel_mean: Optional[np.ndarray] = None  # set by standardize_per_channel
    channel_std: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise DataError(
                f"images ({self.images.shape[0]}) and labels ({self.labels.shape[0]}) disagree"
            )

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, n: int) -> "Dataset":
        """First n samples (deterministic slice, file order)."""
        return Dataset(images=self.images[:n], labels=self.labels[:n],
                       num_classes=self.num_classes,
                       channel_mean=self.channel_mean, channel_std=self.channel_std)


@dataclass
class LabeledBatch:
    x: np.ndarray   # (N, C, H, W) float32
    y: np.ndarray   # (N,) int64
    z: np.ndarray   # (N, J) float32 one-hot

    @property
    def num_classes(self) -> int:
        return self.z.shape[1]


def one_hot(y: np.ndarray, num_classes: int) -> np.ndarray:
    z = np.zeros((y.shape[0], num_classes), dtype=np.float32)
    z[np.arange(y.shape[0]), y] = 1.0
    return z


def make_batch(x: np.ndarray, y: np.ndarray, num_classes: int) -> LabeledBatch:
    return LabeledBatch(x=x, y=y.astype(np.int64), z=one_hot(y, num_classes))


# ---------------------------------------------------------------------------
# MNIST IDX
# ---------------------------------------------------------------------------

_MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def _find_file(dir_path: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx"),
                 stem.replace("-idx", ".idx") + ".gz"):
        p = dir_path / name
        if p.exists():
            return p
    raise DataError(f"missing dataset file {stem}[.gz] in {dir_path}")


def _read_bytes(path: Path) -> bytes:
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def _parse_idx_images(raw: bytes, source: str) -> np.ndarray:
    if len(raw) < 16:
        raise DataError(f"{source}: truncated IDX header")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != 2051:
        raise DataError(f"{source}: bad magic {magic}, expected 2051")
    need = 16 + count * rows * cols
    if len(raw) < need:
        raise DataError(f"{source}: truncated file ({len(raw)} bytes, need {need})")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=count * rows * cols, offset=16)
    return pixels.reshape(count, 1, rows, cols).astype(np.float32) / 255.0


def _parse_idx_labels(raw: bytes, source: str) -> np.ndarray:
    if len(raw) < 8:
        raise DataError(f"{source}: truncated IDX header")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != 2049:
        raise DataError(f"{source}: bad magic {magic}, expected 2049")
    if len(raw) < 8 + count:
        raise DataError(f"{source}: truncated file")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=8).astype(np.int64)


def load_mnist(dir_path) -> Tuple[Dataset, Dataset]:
    """Load the four IDX files from dir_path; returns (train, test)."""
    d = Path(dir_path)
    if not d.is_dir():
        raise DataError(f"data directory not found: {d}")
    splits = []
    for img_key, lbl_key in (("train_images", "train_labels"),
                             ("test_images", "test_labels")):
        img_path = _find_file(d, _MNIST_FILES[img_key])
        lbl_path = _find_file(d, _MNIST_FILES[lbl_key])
        images = _parse_idx_images(_read_bytes(img_path), img_path.name)
        labels = _parse_idx_labels(_read_bytes(lbl_path), lbl_path.name)
        if images.shape[0] != labels.shape[0]:
            raise DataError(
                f"{img_path.name}: {images.shape[0]} images but {labels.shape[0]} labels"
            )
        splits.append(Dataset(images=images, labels=labels, num_classes=10))
    return splits[0], splits[1]


# ---------------------------------------------------------------------------
# CIFAR-10 binary
# ---------------------------------------------------------------------------

_CIFAR_RECORD = 3073  # 1 label byte + 3 * 32 * 32 pixel bytes


def _parse_cifar_batch(raw: bytes, source: str) -> Tuple[np.ndarray, np.ndarray]:
    if len(raw) == 0 or len(raw) % _CIFAR_RECORD:
        raise DataError(
            f"{source}: size {len(raw)} is not a multiple of {_CIFAR_RECORD}"
        )
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, _CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    images = rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return images, labels


def load_cifar10(dir_path) -> Tuple[Dataset, Dataset]:
    """Load the six binary batch files; returns (train, test)."""
    d = Path(dir_path)
    if (d / "cifar-10-batches-bin").is_dir():
        d = d / "cifar-10-batches-bin"
    if not d.is_dir():
        raise DataError(f"data directory not found: {d}")
    train_parts = []
    for i in range(1, 6):
        p = d / f"data_batch_{i}.bin"
        if not p.exists():
            raise DataError(f"missing dataset file {p}")
        train_parts.append(_parse_cifar_batch(p.read_bytes(), p.name))
    test_p = d / "test_batch.bin"
    if not test_p.exists():
        raise DataError(f"missing dataset file {test_p}")
    test_images, test_labels = _parse_cifar_batch(test_p.read_bytes(), test_p.name)
    train = Dataset(images=np.concatenate([p[0] for p in train_parts]),
                    labels=np.concatenate([p[1] for p in train_parts]),
                    num_classes=10)
    test = Dataset(images=test_images, labels=test_labels, num_classes=10)
    return train, test


def standardize_per_channel(train: Dataset, test: Dataset) -> Tuple[Dataset, Dataset]:
    """Standardize both splits with per-channel stats computed on train."""
    mean = train.images.mean(axis=(0, 2, 3), dtype=np.float64).astype(np.float32)
    std = train.images.std(axis=(0, 2, 3), dtype=np.float64).astype(np.float32)
    std = np.maximum(std, 1e-6)
    m, s = mean.reshape(1, -1, 1, 1), std.reshape(1, -1, 1, 1)

    def apply(ds: Dataset) -> Dataset:
        return Dataset(images=(ds.images - m) / s, labels=ds.labels,
                       num_classes=ds.num_classes, channel_mean=mean, channel_std=std)

    return apply(train), apply(test)


# ---------------------------------------------------------------------------
# Label overlays
# ---------------------------------------------------------------------------

def _check_overlay_fits(x: np.ndarray, num_classes: int) -> None:
    h, w = x.shape[2], x.shape[3]
    if num_classes > h * w:
        raise ConfigError(f"{num_classes} classes do not fit in {h}x{w} pixels")


def overlay_labels(x: np.ndarray, labels: np.ndarray, num_classes: int,
                   overlay_value: float = DEFAULT_OVERLAY_VALUE) -> np.ndarray:
    """Return a copy of x with one-hot labels written into the overlay region.

    The region is the first J pixels of the image plane in row-major order
    (row 0 for the usual 28/32-wide inputs). Channel 0 carries the code;
    the region is zeroed in every channel first.
    """
    _check_overlay_fits(x, num_classes)
    out = x.copy()
    flat = out.reshape(x.shape[0], x.shape[1], -1)
    flat[:, :, :num_classes] = 0.0
    flat[np.arange(x.shape[0]), 0, labels] = overlay_value
    return out


def neutralize_overlay(x: np.ndarray, num_classes: int, kind: str = "zero",
                       overlay_value: float = DEFAULT_OVERLAY_VALUE) -> np.ndarray:
    """Blank the overlay region: 'zero' clears it, 'uniform' writes v/J everywhere."""
    _check_overlay_fits(x, num_classes)
    out = x.copy()
    flat = out.reshape(x.shape[0], x.shape[1], -1)
    flat[:, :, :num_classes] = 0.0
    if kind == "uniform":
        flat[:, 0, :num_classes] = overlay_value / num_classes
    elif kind != "zero":
        raise ConfigError(f"unknown neutral overlay kind {kind!r}")
    return out


def make_positive(batch: LabeledBatch,
                  overlay_value: float = DEFAULT_OVERLAY_VALUE) -> np.ndarray:
    """Overlay every sample with its TRUE label."""
    return overlay_labels(batch.x, batch.y, batch.num_classes, overlay_value)


def make_negative(batch: LabeledBatch, rng: np.random.Generator,
                  overlay_value: float = DEFAULT_OVERLAY_VALUE):
    """Overlay every sample with a uniformly random WRONG label.

    Returns (tensor, wrong_labels).
    """
    j = batch.num_classes
    if j < 2:
        raise ConfigError("negative overlays need at least 2 classes")
    offsets = rng.integers(0, j - 1, size=batch.y.shape[0])
    wrong = np.where(offsets >= batch.y, offsets + 1, offsets).astype(np.int64)
    return overlay_labels(batch.x, wrong, j, overlay_value), wrong


def make_all_overlays(x: np.ndarray, num_classes: int,
                      overlay_value: float = DEFAULT_OVERLAY_VALUE) -> np.ndarray:
    """All candidate overlays, label-major: output[j*N + n] = overlay(x[n], j)."""
    _check_overlay_fits(x, num_classes)
    n = x.shape[0]
    reps = np.tile(x, (num_classes, 1, 1, 1))
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), n)
    return overlay_labels(reps, labels, num_classes, overlay_value)


# ---------------------------------------------------------------------------
# Batch iteration
# ---------------------------------------------------------------------------

def batch_iter(ds: Dataset, batch_size: int, shuffle: bool = True,
               seed: int = 0, epoch: int = 0) -> Iterator[LabeledBatch]:
    """Yield LabeledBatch slices; shuffle order is a pure function of (seed, epoch)."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    n = len(ds)
    if shuffle:
        order = np.random.default_rng((seed, epoch)).permutation(n)
    else:
        order = np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        yield make_batch(ds.images[idx], ds.labels[idx], ds.num_classes)
