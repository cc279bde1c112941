"""Orthonormal 2-D wavelet packet analysis and synthesis with periodic boundaries.

Both directions are written as constant matrix products over the last two
axes, so they are differentiable tensor operations and work on a single image
``[C, H, W]`` or a batch ``[N, C, H, W]`` alike.

Subband naming used throughout: the first letter is the filter applied across
columns (width), the second across rows (height).  ``HL`` is high-pass across
columns and low-pass across rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .tensor import Tensor, add, as_tensor, linear_map

__all__ = [
    "FilterPair",
    "HAAR",
    "DB4",
    "get_filter",
    "WaveletPyramid",
    "wpt_forward",
    "wpt_inverse",
    "split_bands",
    "merge_bands",
]


@dataclass(frozen=True)
class FilterPair:
    name: str
    low: tuple[float, ...]
    high: tuple[float, ...]

    def __post_init__(self):
        lo, hi = np.array(self.low), np.array(self.high)
        if lo.shape != hi.shape or lo.size % 2:
            raise ValueError("low and high filters must have the same even length")
        if not (
            abs(lo @ lo - 1) < 1e-12 and abs(hi @ hi - 1) < 1e-12 and abs(lo @ hi) < 1e-12
        ):
            raise ValueError(f"filter pair {self.name!r} is not orthonormal")
        # quadrature mirror: high[n] = (-1)^n low[L-1-n]
        mirror = lo[::-1] * (-1.0) ** np.arange(lo.size)
        if not np.allclose(hi, mirror, atol=1e-12):
            raise ValueError(f"filter pair {self.name!r} is not a quadrature mirror pair")

    @classmethod
    def from_low(cls, name: str, low) -> "FilterPair":
        low = tuple(float(v) for v in low)
        high = tuple(float(v) for v in np.array(low)[::-1] * (-1.0) ** np.arange(len(low)))
        return cls(name, low, high)


HAAR = FilterPair.from_low("haar", np.array([1.0, 1.0]) / np.sqrt(2.0))

_s3 = np.sqrt(3.0)
DB4 = FilterPair.from_low(
    "db4", np.array([1 + _s3, 3 + _s3, 3 - _s3, 1 - _s3]) / (4 * np.sqrt(2.0))
)

_FILTERS = {"haar": HAAR, "db4": DB4}


def get_filter(name) -> FilterPair:
    if isinstance(name, FilterPair):
        return name
    try:
        return _FILTERS[name]
    except KeyError:
        raise ValueError(f"unknown wavelet filter {name!r}; choose from {sorted(_FILTERS)}") from None


@lru_cache(maxsize=64)
def _analysis(n: int, filt: FilterPair, dtype: np.dtype) -> tuple[np.ndarray, np.ndarray]:
    """Periodized [n/2, n] low- and high-pass decimation matrices."""
    low = np.zeros((n // 2, n))
    high = np.zeros((n // 2, n))
    for k in range(n // 2):
        for t, (a, b) in enumerate(zip(filt.low, filt.high)):
            low[k, (2 * k + t) % n] += a
            high[k, (2 * k + t) % n] += b
    low, high = low.astype(dtype), high.astype(dtype)
    low.flags.writeable = False
    high.flags.writeable = False
    return low, high


@dataclass
class WaveletPyramid:
    """Coarsest LL band plus ``(HL, LH, HH)`` per level, finest level first."""

    ll: Tensor
    highs: list[tuple[Tensor, Tensor, Tensor]]
    original_shape: tuple[int, ...]

    @property
    def levels(self) -> int:
        return len(self.highs)

    def coefficient_count(self) -> int:
        return self.ll.size + sum(b.size for triple in self.highs for b in triple)

    def validate(self) -> None:
        expected = tuple(self.original_shape)
        for level, triple in enumerate(self.highs, start=1):
            h, w = expected[-2] >> level, expected[-1] >> level
            want = expected[:-2] + (h, w)
            for band in triple:
                if band.shape != want:
                    raise ValueError(
                        f"level {level} subband has shape {band.shape}, expected {want}"
                    )
        want = expected[:-2] + (expected[-2] >> self.levels, expected[-1] >> self.levels)
        if self.ll.shape != want:
            raise ValueError(f"LL band has shape {self.ll.shape}, expected {want}")


def _check_divisible(shape, levels: int) -> None:
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    step = 2**levels
    h, w = shape[-2], shape[-1]
    if h % step or w % step:
        raise ValueError(
            f"image {h}x{w} is not divisible by 2^{levels}={step}; "
            f"pad height by {(-h) % step} and width by {(-w) % step}"
        )


def wpt_forward(image, levels: int = 2, filt="haar") -> WaveletPyramid:
    image = as_tensor(image)
    if image.ndim < 2:
        raise ValueError(f"expected an image with at least 2 axes, got shape {image.shape}")
    _check_divisible(image.shape, levels)
    filt = get_filter(filt)
    current = image
    highs = []
    for _ in range(levels):
        lo_r, hi_r = _analysis(current.shape[-2], filt, current.dtype)
        lo_c, hi_c = _analysis(current.shape[-1], filt, current.dtype)
        hl = linear_map(current, lo_r, hi_c)
        lh = linear_map(current, hi_r, lo_c)
        hh = linear_map(current, hi_r, hi_c)
        current = linear_map(current, lo_r, lo_c)
        highs.append((hl, lh, hh))
    return WaveletPyramid(current, highs, tuple(image.shape))


def wpt_inverse(pyramid: WaveletPyramid, filt="haar") -> Tensor:
    pyramid.validate()
    filt = get_filter(filt)
    current = pyramid.ll
    for hl, lh, hh in reversed(pyramid.highs):
        n_r, n_c = 2 * current.shape[-2], 2 * current.shape[-1]
        lo_r, hi_r = _analysis(n_r, filt, current.dtype)
        lo_c, hi_c = _analysis(n_c, filt, current.dtype)
        current = add(
            add(linear_map(current, lo_r.T, lo_c.T), linear_map(hl, lo_r.T, hi_c.T)),
            add(linear_map(lh, hi_r.T, lo_c.T), linear_map(hh, hi_r.T, hi_c.T)),
        )
    return current


def split_bands(pyramid: WaveletPyramid):
    """Separate the LL bypass path from the high-frequency bands."""
    return pyramid.ll, [tuple(triple) for triple in pyramid.highs]


def merge_bands(ll, highs, levels: int | None = None) -> WaveletPyramid:
    ll = as_tensor(ll)
    highs = [tuple(as_tensor(b) for b in triple) for triple in highs]
    if levels is not None and len(highs) != levels:
        raise ValueError(f"high part has {len(highs)} levels, expected {levels}")
    if not highs:
        raise ValueError("high part must contain at least one level")
    for triple in highs:
        if len(triple) != 3:
            raise ValueError("each level needs exactly three subbands (HL, LH, HH)")
    finest = highs[0][0].shape
    shape = finest[:-2] + (2 * finest[-2], 2 * finest[-1])
    pyramid = WaveletPyramid(ll, highs, shape)
    pyramid.validate()
    return pyramid
