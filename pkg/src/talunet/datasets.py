"""MNIST (IDX) and CIFAR-10 (binary batch) readers.

Files are read from local disk only.  Headers and file sizes are checked
before any pixel data is materialized, and pixels are scaled to [0, 1].

MNIST IDX layout: big-endian ``uint32`` magic (0x00000803 images,
0x00000801 labels), one big-endian ``uint32`` per dimension, then raw
``uint8`` values.  CIFAR-10 records are 3073 bytes: a label byte followed
by 1024 red, 1024 green and 1024 blue bytes, each plane row-major.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, LengthError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 3073
CIFAR_RECORDS_PER_FILE = 10000
NUM_CLASSES = 10

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
MNIST_SIZES = {"train": 60000, "test": 10000}
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILE = "test_batch.bin"


@dataclass(frozen=True, eq=False)
class Dataset:
    """Images (N, H, W, C) as float32 in [0, 1] and integer labels in [0, 10)."""

    images: np.ndarray
    labels: np.ndarray
    split: str
    name: str

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.images.ndim != 4:
            raise DataError(f"images must be (N, H, W, C), got {self.images.shape}")

    def __len__(self):
        return len(self.labels)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=NUM_CLASSES)


def _open(path: Path):
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _find(directory: Path, name: str) -> Path:
    for candidate in (name, name + ".gz", name.replace("-idx", ".idx"), name.replace("-idx", ".idx") + ".gz"):
        p = directory / candidate
        if p.exists():
            return p
    raise FileNotFoundError(f"{name} not found in {directory}")


def read_idx(path, expected_magic: int) -> np.ndarray:
    """Parse one IDX file of unsigned bytes, returning an array of its dims."""
    path = Path(path)
    with _open(path) as fh:
        head = fh.read(4)
        if len(head) < 4:
            raise LengthError(f"{path}: file too short for an IDX header")
        (magic,) = struct.unpack(">I", head)
        if magic != expected_magic:
            raise FormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
        ndim = magic & 0xFF
        raw = fh.read(4 * ndim)
        if len(raw) < 4 * ndim:
            raise LengthError(f"{path}: truncated IDX header")
        dims = struct.unpack(f">{ndim}I", raw)
        count = int(np.prod(dims, dtype=np.int64))
        if path.suffix != ".gz":
            available = os.fstat(fh.fileno()).st_size - 4 - 4 * ndim
            if available != count:
                raise LengthError(f"{path}: header promises {count} bytes of data, file holds {available}")
        data = fh.read(count)
        if len(data) != count or (path.suffix == ".gz" and fh.read(1)):
            raise LengthError(f"{path}: header promises {count} bytes of data")
    return np.frombuffer(data, dtype=np.uint8).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as an IDX file (images if 3-d, labels if 1-d)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


def _check_labels(labels: np.ndarray, source) -> np.ndarray:
    if labels.size and labels.max() >= NUM_CLASSES:
        raise DataError(f"{source}: label {int(labels.max())} outside [0, {NUM_CLASSES})")
    return labels.astype(np.int64)


def _scale(pixels: np.ndarray) -> np.ndarray:
    return pixels.astype(np.float32) / np.float32(255.0)


def load_mnist_split(directory, split: str, strict: bool = True) -> Dataset:
    directory = Path(directory)
    image_name, label_name = MNIST_FILES[split]
    image_path, label_path = _find(directory, image_name), _find(directory, label_name)
    images = read_idx(image_path, IDX_IMAGES_MAGIC)
    labels = read_idx(label_path, IDX_LABELS_MAGIC)
    if images.ndim != 3 or images.shape[1:] != (28, 28):
        raise FormatError(f"{image_path}: expected N x 28 x 28 images, header says {images.shape}")
    if labels.ndim != 1 or len(labels) != len(images):
        raise FormatError(f"{label_path}: {labels.shape} labels for {len(images)} images")
    if strict and len(images) != MNIST_SIZES[split]:
        raise LengthError(f"{image_path}: expected {MNIST_SIZES[split]} images, found {len(images)}")
    labels = _check_labels(labels, label_path)
    return Dataset(_scale(images)[..., None], labels, split, "mnist")


def load_mnist(directory, strict: bool = True) -> tuple[Dataset, Dataset]:
    """Read the four MNIST IDX files (plain or gzipped) from ``directory``.

    ``strict`` additionally requires the canonical 60000/10000 split sizes.
    """
    return load_mnist_split(directory, "train", strict), load_mnist_split(directory, "test", strict)


def read_cifar_batch(path) -> tuple[np.ndarray, np.ndarray]:
    """Return (uint8 NHWC images, labels) from one CIFAR-10 binary file."""
    path = Path(path)
    size = path.stat().st_size
    expected = CIFAR_RECORDS_PER_FILE * CIFAR_RECORD
    if size != expected:
        raise LengthError(f"{path}: {size} bytes, expected {expected} ({CIFAR_RECORDS_PER_FILE} x {CIFAR_RECORD})")
    raw = np.fromfile(path, dtype=np.uint8).reshape(CIFAR_RECORDS_PER_FILE, CIFAR_RECORD)
    labels = _check_labels(raw[:, 0], path)
    images = raw[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return np.ascontiguousarray(images), labels


def write_cifar_batch(path, images: np.ndarray, labels) -> None:
    """Inverse of :func:`read_cifar_batch` for uint8 NHWC images."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    planar = images.transpose(0, 3, 1, 2).reshape(len(images), 3072)
    np.concatenate([labels[:, None], planar], axis=1).tofile(path)


def _cifar_dir(directory: Path) -> Path:
    nested = directory / "cifar-10-batches-bin"
    return nested if nested.is_dir() else directory


def load_cifar10(directory) -> tuple[Dataset, Dataset]:
    """Read the five training batches and the test batch from ``directory``."""
    directory = _cifar_dir(Path(directory))
    paths = [directory / name for name in CIFAR_TRAIN_FILES + (CIFAR_TEST_FILE,)]
    for p in paths:
        if not p.exists():
            raise FileNotFoundError(f"{p.name} not found in {directory}")
        if p.stat().st_size != CIFAR_RECORDS_PER_FILE * CIFAR_RECORD:
            raise LengthError(f"{p}: {p.stat().st_size} bytes, expected {CIFAR_RECORDS_PER_FILE * CIFAR_RECORD}")
    train = [read_cifar_batch(p) for p in paths[:5]]
    test_images, test_labels = read_cifar_batch(paths[5])
    train_images = np.concatenate([t[0] for t in train])
    train_labels = np.concatenate([t[1] for t in train])
    return (
        Dataset(_scale(train_images), train_labels, "train", "cifar10"),
        Dataset(_scale(test_images), test_labels, "test", "cifar10"),
    )


def load(name: str, directory) -> tuple[Dataset, Dataset]:
    if name == "mnist":
        return load_mnist(directory)
    if name == "cifar10":
        return load_cifar10(directory)
    raise DataError(f"unknown dataset {name!r}")


def subset(data: Dataset, n_per_class: int, seed: int = 0) -> Dataset:
    """Class-balanced sample of ``n_per_class`` items per class, shuffled."""
    counts = data.class_counts()
    classes = np.flatnonzero(counts)
    if n_per_class < 1:
        raise DataError(f"n_per_class must be positive, got {n_per_class}")
    if n_per_class > counts[classes].min():
        raise DataError(f"asked for {n_per_class} per class but the smallest class has {counts[classes].min()}")
    rng = np.random.default_rng(seed)
    picks = [rng.choice(np.flatnonzero(data.labels == c), n_per_class, replace=False) for c in classes]
    idx = rng.permutation(np.concatenate(picks))
    return Dataset(data.images[idx], data.labels[idx], data.split, data.name)
