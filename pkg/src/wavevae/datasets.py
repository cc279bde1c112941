"""Procedural toy images and the binary dataset file format.

File layout (little-endian)::

    b"WVDS" | version u32 | count u32 | H u32 | W u32 | C u32
    count*H*W*C pixel bytes (u8, row-major, channel-last) | count label bytes (u8)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError

__all__ = [
    "Dataset",
    "CLASS_NAMES",
    "generate",
    "save_dataset",
    "load_dataset",
]

MAGIC = b"WVDS"
VERSION = 1
_HEADER = struct.Struct("<4sIIIII")

CLASS_NAMES = (
    "disk",
    "square",
    "triangle",
    "plus",
    "h-stripes",
    "v-stripes",
    "checker",
    "ring",
    "diagonal",
    "cross",
)


@dataclass
class Dataset:
    images: np.ndarray  # uint8 [N, H, W, C]
    labels: np.ndarray  # uint8 [N]

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.uint8)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if self.images.ndim != 4:
            raise ValueError(f"images must be [N, H, W, C], got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError("need exactly one label per image")

    def __len__(self) -> int:
        return self.images.shape[0]

    def to_float(self) -> np.ndarray:
        """Channel-first float images in [0, 1]."""
        return np.transpose(self.images, (0, 3, 1, 2)).astype(np.float32) / np.float32(255)

    @classmethod
    def from_float(cls, X: np.ndarray, labels) -> "Dataset":
        pixels = np.rint(np.clip(np.asarray(X, dtype=np.float64), 0, 1) * 255)
        return cls(np.transpose(pixels, (0, 2, 3, 1)).astype(np.uint8), labels)

    def subset(self, index) -> "Dataset":
        return Dataset(self.images[index], self.labels[index])


def _mask(label: int, rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cx, cy = size / 2 + rng.uniform(-4, 4, size=2)
    r = rng.uniform(7, 11)
    dx, dy = xx - cx, yy - cy
    dist = np.hypot(dx, dy)
    period = rng.uniform(4, 8)
    phase = rng.uniform(0, 2 * np.pi)
    if label == 0:
        return dist < r
    if label == 1:
        return np.maximum(abs(dx), abs(dy)) < 0.85 * r
    if label == 2:
        return (dy < 0.8 * r) & (abs(dx) < (dy + r) / 2)
    if label == 3:
        bar = r / 3.5
        return ((abs(dx) < bar) & (abs(dy) < r)) | ((abs(dy) < bar) & (abs(dx) < r))
    if label == 4:
        return np.sin(2 * np.pi * yy / period + phase) > 0
    if label == 5:
        return np.sin(2 * np.pi * xx / period + phase) > 0
    if label == 6:
        p = rng.uniform(3, 6)
        return (np.floor((xx + phase) / p) + np.floor((yy + phase) / p)) % 2 == 0
    if label == 7:
        return (dist < r) & (dist > 0.55 * r)
    if label == 8:
        return np.sin(2 * np.pi * (xx + yy) / (period * 1.4) + phase) > 0
    if label == 9:
        arm = r / 4
        return ((abs(dx - dy) < arm) | (abs(dx + dy) < arm)) & (np.maximum(abs(dx), abs(dy)) < r)
    raise ValueError(f"no renderer for class {label}")


_TEXTURES = (4, 5, 6, 8)  # full-frame patterns; halved contrast keeps them as fragile as shapes


def _render(label: int, rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1) - 0.5
    base = rng.uniform(0.25, 0.75, size=3)
    slope = rng.uniform(-0.15, 0.15, size=(2, 3))
    background = base + xx[..., None] * slope[0] + yy[..., None] * slope[1]
    contrast = np.full(3, rng.uniform(0.1, 0.25) * rng.choice([-1.0, 1.0]))
    if label in _TEXTURES:
        contrast *= 0.5
    foreground = background + contrast
    mask = _mask(label, rng, size)[..., None]
    image = np.where(mask, foreground, background) + rng.normal(0, 0.01, size=(size, size, 3))
    return np.rint(np.clip(image, 0, 1) * 255).astype(np.uint8)


def generate(count: int, seed: int, size: int = 32, n_classes: int = 10) -> Dataset:
    """Balanced, shuffled set of procedural shape and texture images."""
    if count < 0:
        raise ValueError("count must be non-negative")
    if not 1 <= n_classes <= len(CLASS_NAMES):
        raise ValueError(f"n_classes must be in [1, {len(CLASS_NAMES)}]")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(count) % n_classes)
    images = np.empty((count, size, size, 3), dtype=np.uint8)
    for i, label in enumerate(labels):
        images[i] = _render(int(label), rng, size)
    return Dataset(images, labels)


def save_dataset(dataset: Dataset, path) -> None:
    n, h, w, c = dataset.images.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, h, w, c))
        fh.write(dataset.images.tobytes())
        fh.write(dataset.labels.tobytes())


def load_dataset(path, n_classes: int | None = None) -> Dataset:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(path, len(raw), f"file shorter than the {_HEADER.size}-byte header")
    magic, version, n, h, w, c = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(path, 0, f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(path, 4, f"unsupported version {version}, expected {VERSION}")
    pixels = n * h * w * c
    expected = _HEADER.size + pixels + n
    if len(raw) != expected:
        raise FormatError(path, min(len(raw), expected), f"file is {len(raw)} bytes, expected {expected}")
    images = np.frombuffer(raw, dtype=np.uint8, count=pixels, offset=_HEADER.size).reshape(n, h, w, c)
    labels = np.frombuffer(raw, dtype=np.uint8, count=n, offset=_HEADER.size + pixels)
    if n_classes is not None and n and labels.max() >= n_classes:
        bad = int(np.argmax(labels >= n_classes))
        raise FormatError(
            path, _HEADER.size + pixels + bad, f"label {labels[bad]} out of range for {n_classes} classes"
        )
    return Dataset(images.copy(), labels.copy())
