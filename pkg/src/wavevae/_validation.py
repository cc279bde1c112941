"""Input checks shared by the estimators."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .tensor import get_default_dtype


def check_images(X, *, ndim: int = 4, value_range: bool = True) -> np.ndarray:
    """Validate a batch of channel-first images and cast to the default float dtype."""
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=get_default_dtype())
    if X.ndim == ndim - 1:
        X = X[None]
    if X.ndim != ndim:
        raise ValueError(f"expected images of shape [N, C, H, W], got {X.shape}")
    if value_range and (X.min(initial=0.0) < 0.0 or X.max(initial=0.0) > 1.0):
        raise ValueError("pixel values must lie in [0, 1]")
    return X


def check_labels(y, n_samples: int, n_classes: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n_samples:
        raise ValueError(f"expected {n_samples} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("labels must be integer class indices")
    y = y.astype(np.int64)
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    return y


def check_seed(seed) -> int:
    seed = int(seed)
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return seed
