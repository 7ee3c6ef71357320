"""Dataset plumbing: synthetic template data, IDX file ingestion, and
per-device partitioning.

The synthetic task draws one fixed random spatial template per class (a
coarse random grid upsampled to the image size, scaled by the separation
parameter) and adds white Gaussian noise per sample. A nearest-template
classifier solves it, which gives the tests an independent oracle.
"""

from __future__ import annotations

import struct

import numpy as np

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

TEMPLATE_GRID = 4       # coarse cells per side before upsampling


class IdxFormatError(ValueError):
    """Malformed IDX file."""


def make_templates(classes: int, image_size: int, channels: int,
                   class_separation: float, rng: np.random.Generator) -> np.ndarray:
    """(K, C, H, W) class templates."""
    grid = min(TEMPLATE_GRID, image_size)
    coarse = rng.standard_normal((classes, channels, grid, grid))
    reps = int(np.ceil(image_size / grid))
    full = np.repeat(np.repeat(coarse, reps, axis=2), reps, axis=3)[:, :, :image_size, :image_size]
    return (class_separation * full).astype(np.float32)


def generate_synthetic_dataset(classes: int, samples: int, image_size: int,
                               channels: int, class_separation: float,
                               noise_sigma: float, rng: np.random.Generator):
    """Balanced labeled dataset: per-sample = class template + noise.

    Labels are balanced within +-1 and the sample order is shuffled.
    Returns (x, y, templates) with x of shape (N, C, H, W) float32.
    """
    if classes < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    if samples < 1 or image_size < 1 or channels < 1:
        raise ValueError("samples, image_size, and channels must be positive")
    if class_separation < 0 or noise_sigma < 0:
        raise ValueError("class_separation and noise_sigma must be >= 0")
    templates = make_templates(classes, image_size, channels, class_separation, rng)
    base, extra = divmod(samples, classes)
    counts = [base + (1 if k < extra else 0) for k in range(classes)]
    y = np.repeat(np.arange(classes), counts)
    y = y[rng.permutation(samples)]
    noise = rng.standard_normal((samples, channels, image_size, image_size)).astype(np.float32)
    x = templates[y] + np.float32(noise_sigma) * noise
    return x, y.astype(np.int64), templates


def nearest_template_labels(x: np.ndarray, templates: np.ndarray) -> np.ndarray:
    """Independent reference classifier: closest template in L2."""
    flat = x.reshape(x.shape[0], -1)
    t = templates.reshape(templates.shape[0], -1)
    d2 = ((flat[:, None, :] - t[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)


def _read_exact(f, n: int, path: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise IdxFormatError(f"{path}: truncated, expected {n} more bytes, got {len(buf)}")
    return buf


def load_idx(images_path: str, labels_path: str):
    """Parse a big-endian IDX image/label pair.

    Images come back as (N, 1, H, W) float32 scaled to [0, 1], labels as
    int64. Raises IdxFormatError on bad magic, truncation, or a count
    mismatch between the two files.
    """
    with open(images_path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">iiii", _read_exact(f, 16, images_path))
        if magic != IDX_IMAGE_MAGIC:
            raise IdxFormatError(f"{images_path}: bad image magic 0x{magic:08x}")
        pixels = _read_exact(f, count * rows * cols, images_path)
        if f.read(1):
            raise IdxFormatError(f"{images_path}: trailing bytes after pixel data")
    with open(labels_path, "rb") as f:
        magic, label_count = struct.unpack(">ii", _read_exact(f, 8, labels_path))
        if magic != IDX_LABEL_MAGIC:
            raise IdxFormatError(f"{labels_path}: bad label magic 0x{magic:08x}")
        raw_labels = _read_exact(f, label_count, labels_path)
        if f.read(1):
            raise IdxFormatError(f"{labels_path}: trailing bytes after label data")
    if count != label_count:
        raise IdxFormatError(f"image count {count} != label count {label_count}")
    x = np.frombuffer(pixels, dtype=np.uint8).reshape(count, 1, rows, cols)
    y = np.frombuffer(raw_labels, dtype=np.uint8).astype(np.int64)
    return (x.astype(np.float32) / 255.0), y


def encode_idx(x: np.ndarray, y: np.ndarray) -> tuple[bytes, bytes]:
    """Serialize a (N, 1, H, W) image array and labels as an IDX pair.

    Float images are min-max scaled onto the byte range; uint8 input is
    written as-is. Returns (image_bytes, label_bytes).
    """
    if x.ndim != 4 or x.shape[1] != 1:
        raise ValueError(f"IDX export needs (N, 1, H, W) single-channel images, got {x.shape}")
    if x.shape[0] != y.shape[0]:
        raise ValueError("image/label counts differ")
    if x.dtype != np.uint8:
        lo, hi = float(x.min(initial=0.0)), float(x.max(initial=1.0))
        span = hi - lo if hi > lo else 1.0
        x = np.clip(np.rint((x - lo) / span * 255.0), 0, 255).astype(np.uint8)
    n, _, h, w = x.shape
    images = struct.pack(">iiii", IDX_IMAGE_MAGIC, n, h, w) + x.tobytes()
    labels = struct.pack(">ii", IDX_LABEL_MAGIC, n) + np.asarray(y, dtype=np.uint8).tobytes()
    return images, labels


def write_idx(images_path: str, labels_path: str, x: np.ndarray, y: np.ndarray) -> None:
    images, labels = encode_idx(x, y)
    with open(images_path, "wb") as f:
        f.write(images)
    with open(labels_path, "wb") as f:
        f.write(labels)


def partition_data(n_samples: int, n_devices: int, shard_size: int,
                   rng: np.random.Generator) -> list[np.ndarray]:
    """Disjoint uniform-random index shards of exactly shard_size each."""
    if n_devices * shard_size > n_samples:
        raise ValueError(f"cannot carve {n_devices} shards of {shard_size} "
                         f"from {n_samples} samples")
    order = rng.permutation(n_samples)
    return [order[i * shard_size:(i + 1) * shard_size] for i in range(n_devices)]
