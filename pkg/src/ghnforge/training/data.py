"""Datasets for training and evaluation: a built-in synthetic image task
plus a raw binary container for real images.

The synthetic task renders class-conditional Gaussian color blobs onto small
RGB canvases — separable enough that small networks (and predicted weights)
can score well above chance, noisy enough that accuracy is a graded signal.
The container format is a fixed little-endian header followed by raw u8
pixels, with labels in a separate file, so datasets round-trip byte-exactly.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ghnforge.errors import ConfigError, DataError

_IMAGE_MAGIC = b"GHNIMG01"
_LABEL_MAGIC = b"GHNLBL01"
_IMAGE_HEADER = struct.Struct("<8sIHHHBx")  # magic, count, C, H, W, dtype tag
_LABEL_HEADER = struct.Struct("<8sIBxxx")   # magic, count, bytes per label
_DTYPE_U8 = 1


@dataclass
class Dataset:
    """Images as float64 NCHW in [0, 1] with integer labels."""

    images: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.images.ndim != 4:
            raise DataError(f"images must be NCHW, got shape {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise DataError(
                f"labels shape {self.labels.shape} does not match "
                f"{self.images.shape[0]} images")
        if self.num_classes < 2:
            raise DataError(f"need at least 2 classes, got {self.num_classes}")
        if len(self.labels) and (self.labels.min() < 0
                                 or self.labels.max() >= self.num_classes):
            raise DataError("labels out of range for declared class count")

    def __len__(self) -> int:
        return self.images.shape[0]

    def batches(self, batch_size: int, rng: np.random.Generator | None = None):
        """Yield (images, labels) batches; shuffles when an rng is given."""
        if batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {batch_size}")
        order = np.arange(len(self))
        if rng is not None:
            rng.shuffle(order)
        for start in range(0, len(self), batch_size):
            pick = order[start:start + batch_size]
            yield self.images[pick], self.labels[pick]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices)
        return Dataset(self.images[idx], self.labels[idx], self.num_classes)


def synthetic_blobs(num_classes: int = 3, per_class: int = 200,
                    image_size: int = 16, channels: int = 3,
                    noise: float = 0.08, seed: int = 0) -> Dataset:
    """Class-conditional Gaussian blobs on an RGB canvas.

    Each class owns a fixed color, center, and width drawn once from the
    seed; samples jitter the center and amplitude and add pixel noise, then
    clip to [0, 1].  Classes are well separated in color and position, so the
    task is easy for a matched network yet graded under weak features.
    """
    if num_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {num_classes}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:image_size, 0:image_size].astype(np.float64)

    colors = rng.uniform(0.35, 1.0, (num_classes, channels))
    colors[np.arange(num_classes), np.arange(num_classes) % channels] = 1.0
    angles = 2.0 * np.pi * (np.arange(num_classes) + rng.uniform(0, 1)) / num_classes
    radius = image_size / 4.0
    centers = (image_size / 2.0
               + radius * np.stack([np.sin(angles), np.cos(angles)], axis=1))
    widths = rng.uniform(0.16, 0.24, num_classes) * image_size

    images = np.empty((num_classes * per_class, channels, image_size, image_size))
    labels = np.empty(num_classes * per_class, dtype=np.int64)
    row = 0
    for cls in range(num_classes):
        for _ in range(per_class):
            cy, cx = centers[cls] + rng.normal(0.0, image_size / 16.0, 2)
            amp = rng.uniform(0.8, 1.0)
            blob = amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2)
                                / (2.0 * widths[cls] ** 2))
            img = colors[cls][:, None, None] * blob[None, :, :]
            img += rng.normal(0.0, noise, img.shape)
            images[row] = np.clip(img, 0.0, 1.0)
            labels[row] = cls
            row += 1
    order = rng.permutation(row)
    return Dataset(images[order], labels[order], num_classes)


# ---------------------------------------------------------------- raw binary

def write_images(path: str | Path, images: np.ndarray) -> None:
    """Write an NCHW u8 image stack: fixed header then raw pixels."""
    arr = np.asarray(images)
    if arr.ndim != 4:
        raise DataError(f"images must be NCHW, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        raise DataError(f"container stores u8 pixels, got dtype {arr.dtype}")
    n, c, h, w = arr.shape
    header = _IMAGE_HEADER.pack(_IMAGE_MAGIC, n, c, h, w, _DTYPE_U8)
    Path(path).write_bytes(header + arr.tobytes())


def read_images(path: str | Path) -> np.ndarray:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _IMAGE_HEADER.size:
        raise DataError(f"{path.name}: truncated image header")
    magic, n, c, h, w, tag = _IMAGE_HEADER.unpack_from(blob)
    if magic != _IMAGE_MAGIC:
        raise DataError(f"{path.name}: not an image container")
    if tag != _DTYPE_U8:
        raise DataError(f"{path.name}: unsupported pixel dtype tag {tag}")
    expect = _IMAGE_HEADER.size + n * c * h * w
    if len(blob) != expect:
        raise DataError(f"{path.name}: payload is {len(blob) - _IMAGE_HEADER.size}"
                        f" bytes, header promises {expect - _IMAGE_HEADER.size}")
    return np.frombuffer(blob, dtype=np.uint8,
                         offset=_IMAGE_HEADER.size).reshape(n, c, h, w).copy()


def write_labels(path: str | Path, labels: np.ndarray) -> None:
    """Write labels as u8, or u16 little-endian when any exceeds 255."""
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise DataError(f"labels must be 1-D, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer) or (len(arr) and arr.min() < 0):
        raise DataError("labels must be non-negative integers")
    wide = bool(len(arr) and arr.max() > 0xFF)
    if len(arr) and arr.max() > 0xFFFF:
        raise DataError("labels exceed the 16-bit container range")
    payload = arr.astype("<u2" if wide else "u1").tobytes()
    header = _LABEL_HEADER.pack(_LABEL_MAGIC, len(arr), 2 if wide else 1)
    Path(path).write_bytes(header + payload)


def read_labels(path: str | Path) -> np.ndarray:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _LABEL_HEADER.size:
        raise DataError(f"{path.name}: truncated label header")
    magic, n, width = _LABEL_HEADER.unpack_from(blob)
    if magic != _LABEL_MAGIC:
        raise DataError(f"{path.name}: not a label container")
    if width not in (1, 2):
        raise DataError(f"{path.name}: unsupported label width {width}")
    if len(blob) != _LABEL_HEADER.size + n * width:
        raise DataError(f"{path.name}: label payload size mismatch")
    dtype = "<u2" if width == 2 else "u1"
    return np.frombuffer(blob, dtype=dtype,
                         offset=_LABEL_HEADER.size).astype(np.int64)


def save_dataset(prefix: str | Path, ds: Dataset) -> tuple[Path, Path]:
    """Write ``<prefix>.img``/``<prefix>.lab`` from a float dataset."""
    prefix = Path(prefix)
    pixels = np.clip(np.round(ds.images * 255.0), 0, 255).astype(np.uint8)
    img_path = prefix.with_suffix(".img")
    lab_path = prefix.with_suffix(".lab")
    write_images(img_path, pixels)
    write_labels(lab_path, ds.labels)
    return img_path, lab_path


def load_dataset(prefix: str | Path, num_classes: int | None = None) -> Dataset:
    """Read ``<prefix>.img``/``<prefix>.lab`` back into float form."""
    prefix = Path(prefix)
    images = read_images(prefix.with_suffix(".img")).astype(np.float64) / 255.0
    labels = read_labels(prefix.with_suffix(".lab"))
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if len(labels) else 2
    return Dataset(images, labels, num_classes)
