"""
Datasets: CIFAR binary batches and synthetic Gaussian blobs.

CIFAR binary record layout (32×32, R/G/B planes, row-major):
  cifar10:  <1 x label><3072 x pixel>
  cifar100: <1 x coarse label><1 x fine label><3072 x pixel>   (fine label is used)
"""
import os
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import ArtifactIOError, DataError

PIXELS = 3 * 32 * 32
CIFAR_FILES = {
    "cifar10": {"train": [f"data_batch_{i}.bin" for i in range(1, 6)], "test": ["test_batch.bin"]},
    "cifar100": {"train": ["train.bin"], "test": ["test.bin"]},
}
CIFAR_CLASSES = {"cifar10": 10, "cifar100": 100}


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray          # [N, C, H, W] or [N, D]
    labels: np.ndarray          # int64 [N]
    num_classes: int
    split: str = "train"
    name: str = ""

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise DataError(f"{self.name}: {self.images.shape[0]} inputs vs "
                            f"{self.labels.shape[0]} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"{self.name}: labels outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def input_shape(self) -> Tuple[int, ...]:
        return tuple(self.images.shape[1:])

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.num_classes, self.split, self.name)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class CifarRecords:
    labels: np.ndarray                  # uint8 [N] (fine label for cifar100)
    pixels: np.ndarray                  # uint8 [N, 3, 32, 32]
    coarse: Optional[np.ndarray] = None  # uint8 [N], cifar100 only


def record_size(variant: str) -> int:
    if variant not in CIFAR_FILES:
        raise DataError(f"unknown CIFAR variant {variant!r}")
    return PIXELS + (2 if variant == "cifar100" else 1)


def parse_cifar_records(blob: bytes, variant: str, source: str = "<bytes>") -> CifarRecords:
    size = record_size(variant)
    if len(blob) % size:
        offset = (len(blob) // size) * size
        raise DataError(f"{source}: truncated record at byte offset {offset} "
                        f"({len(blob) - offset} of {size} bytes)")
    raw = np.frombuffer(blob, dtype=np.uint8).reshape(-1, size)
    if variant == "cifar100":
        return CifarRecords(raw[:, 1].copy(), raw[:, 2:].reshape(-1, 3, 32, 32).copy(),
                            raw[:, 0].copy())
    return CifarRecords(raw[:, 0].copy(), raw[:, 1:].reshape(-1, 3, 32, 32).copy())


def encode_cifar_records(records: CifarRecords, variant: str) -> bytes:
    n = records.labels.shape[0]
    head = [records.labels.reshape(n, 1)]
    if variant == "cifar100":
        coarse = records.coarse if records.coarse is not None else np.zeros(n, dtype=np.uint8)
        head = [coarse.reshape(n, 1), records.labels.reshape(n, 1)]
    body = records.pixels.reshape(n, PIXELS)
    return np.concatenate(head + [body], axis=1).astype(np.uint8).tobytes()


def read_cifar_file(path: str, variant: str) -> CifarRecords:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except FileNotFoundError as e:
        raise DataError(f"missing CIFAR file {path}") from e
    except OSError as e:
        raise ArtifactIOError(f"cannot read {path}: {e}") from e
    return parse_cifar_records(blob, variant, source=path)


def load_cifar(dir_path: str, variant: str = "cifar10", split: str = "train",
               mean: Optional[Sequence[float]] = None,
               std: Optional[Sequence[float]] = None) -> Dataset:
    """Pixels scaled to [0, 1]; standardized per channel when `mean`/`std` are given."""
    if split not in ("train", "test"):
        raise DataError(f"unknown split {split!r}")
    parts = [read_cifar_file(os.path.join(dir_path, name), variant)
             for name in CIFAR_FILES[variant][split]]
    labels = np.concatenate([p.labels for p in parts]).astype(np.int64)
    images = np.concatenate([p.pixels for p in parts]).astype(np.float64) / 255.0
    ds = Dataset(images, labels, CIFAR_CLASSES[variant], split, variant)
    if mean is not None and std is not None:
        ds = standardize(ds, mean, std)
    return ds


def channel_stats(ds: Dataset) -> Tuple[np.ndarray, np.ndarray]:
    axes = (0,) + tuple(range(2, ds.images.ndim))
    return ds.images.mean(axis=axes), ds.images.std(axis=axes)


def standardize(ds: Dataset, mean, std) -> Dataset:
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if np.any(std <= 0):
        raise DataError("standardization std must be > 0")
    shape = (1, -1) + (1,) * (ds.images.ndim - 2)
    images = (ds.images - mean.reshape(shape)) / std.reshape(shape)
    return Dataset(images, ds.labels, ds.num_classes, ds.split, ds.name)


def make_blobs(num_classes: int, per_class: int, dim: int, spread: float, seed: int,
               radius: float = 1.0, split: str = "train") -> Dataset:
    """Gaussian blobs around class means placed on a sphere of `radius`.

    Means depend on `seed` only, so train and test splits share them; samples are
    drawn from a split-specific stream.
    """
    if min(num_classes, per_class, dim) < 1 or spread < 0 or radius <= 0:
        raise DataError("make_blobs needs positive sizes, spread >= 0 and radius > 0")
    means = np.random.default_rng([seed, 0]).standard_normal((num_classes, dim))
    means *= radius / np.linalg.norm(means, axis=1, keepdims=True)
    rng = np.random.default_rng([seed, 1 if split == "train" else 2])
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), per_class)
    x = means[labels] + spread * rng.standard_normal((labels.shape[0], dim))
    order = rng.permutation(labels.shape[0])
    return Dataset(x[order], labels[order], num_classes, split, "blobs")
