"""Attack success rate and feature-space image quality scores.

Features come from the target classifier: the pooled ``conv2`` activations
for the Frechet distance and all three conv layers for the perceptual score.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .classifier import LAYERS

__all__ = [
    "FeatureStats",
    "MetricsReport",
    "asr",
    "feature_stats",
    "fid",
    "score_fid",
    "lpips_distance",
    "score_lpips",
    "evaluate",
    "config_hash",
]

FID_LAYER = "conv2"
LPIPS_LAYERS = LAYERS


@dataclass
class FeatureStats:
    mean: np.ndarray
    covariance: np.ndarray
    count: int

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        self.covariance = np.atleast_2d(np.asarray(self.covariance, dtype=np.float64))
        d = self.mean.shape[0]
        if self.covariance.shape != (d, d):
            raise ValueError(f"covariance {self.covariance.shape} does not match mean dimension {d}")
        if not np.allclose(self.covariance, self.covariance.T, rtol=0, atol=1e-10):
            raise ValueError("covariance must be symmetric")
        if self.count < 2:
            raise ValueError("feature statistics need at least two samples")

    @classmethod
    def from_features(cls, feats: np.ndarray) -> "FeatureStats":
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 2:
            raise ValueError(f"need at least two feature vectors, got shape {feats.shape}")
        mu = feats.mean(axis=0)
        centered = feats - mu
        cov = centered.T @ centered / (feats.shape[0] - 1)
        return cls(mu, (cov + cov.T) / 2, feats.shape[0])


@dataclass
class MetricsReport:
    method: str
    model: str
    asr_percent: float
    score_fid_percent: float
    score_lpips_percent: float
    raw_fid: float
    raw_lpips: float
    eta: float = float("nan")
    epsilon: float = float("nan")
    steps: int = 0
    seed: int = 0
    config_hash: str = ""

    def __post_init__(self):
        for name in ("asr_percent", "score_fid_percent", "score_lpips_percent"):
            value = getattr(self, name)
            if not 0 <= value <= 100:
                raise ValueError(f"{name} must be within [0, 100], got {value}")


def asr(results) -> float:
    """Percentage of results whose prediction differs from the ground-truth label."""
    results = list(results)
    if not results:
        raise ValueError("cannot compute ASR of an empty result list")
    hits = sum(1 for r in results if (r.success if hasattr(r, "success") else bool(r)))
    return 100.0 * hits / len(results)


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((matrix + matrix.T) / 2)
    return (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.T


def fid(a: FeatureStats, b: FeatureStats) -> float:
    """Frechet distance between the Gaussians described by ``a`` and ``b``.

    ``Tr((S1 S2)^(1/2))`` is evaluated as ``Tr((S1^(1/2) S2 S1^(1/2))^(1/2))``,
    which is symmetric PSD, so a clamped eigendecomposition suffices.
    """
    if a.mean.shape != b.mean.shape:
        raise ValueError(f"feature dimensions differ: {a.mean.shape[0]} vs {b.mean.shape[0]}")
    diff = a.mean - b.mean
    root_a = _psd_sqrt(a.covariance)
    inner = root_a @ b.covariance @ root_a
    vals = np.linalg.eigvalsh((inner + inner.T) / 2)
    tr_cross = np.sqrt(np.clip(vals, 0, None)).sum()
    value = diff @ diff + np.trace(a.covariance) + np.trace(b.covariance) - 2 * tr_cross
    return float(max(value, 0.0))


def score_fid(fid_value: float) -> float:
    if fid_value < 0:
        raise ValueError("FID must be non-negative")
    return 100.0 * float(np.sqrt(1.0 - min(fid_value, 200.0) / 200.0))


def feature_stats(images, model, layer: str = FID_LAYER) -> FeatureStats:
    """Mean and unbiased covariance of channel-wise average-pooled features."""
    images = np.asarray(images)
    if images.shape[0] < 2:
        raise ValueError("feature statistics need at least two images")
    (feats,) = model.features(images, [layer])
    return FeatureStats.from_features(feats.mean(axis=(2, 3)))


def _unit(feat: np.ndarray) -> np.ndarray:
    norm = np.sqrt((feat.astype(np.float64) ** 2).sum(axis=1, keepdims=True))
    return feat / (norm + 1e-10)


def lpips_distance(feats_a, feats_b) -> np.ndarray:
    """Per-pair distance from lists of per-layer [N, C, H, W] features.

    Channel vectors are unit-normalized at each site; squared differences are
    summed over channels, averaged over sites, and summed over layers.
    """
    if len(feats_a) != len(feats_b):
        raise ValueError("both inputs need the same layers")
    total = None
    for fa, fb in zip(feats_a, feats_b):
        fa, fb = np.asarray(fa), np.asarray(fb)
        if fa.shape != fb.shape:
            raise ValueError(f"feature shapes differ: {fa.shape} vs {fb.shape}")
        d = ((_unit(fa) - _unit(fb)) ** 2).sum(axis=1).mean(axis=(1, 2))
        total = d if total is None else total + d
    if total is None:
        return np.zeros(0)
    return total


def raw_lpips(x_set, adv_set, model, layers=LPIPS_LAYERS) -> float:
    x_set, adv_set = np.asarray(x_set), np.asarray(adv_set)
    if x_set.shape != adv_set.shape:
        raise ValueError(f"unpaired sets: {x_set.shape} vs {adv_set.shape}")
    if x_set.shape[0] == 0:
        raise ValueError("need at least one image pair")
    layers = list(layers)
    return float(lpips_distance(model.features(x_set, layers), model.features(adv_set, layers)).mean())


def score_lpips(x_set, adv_set, model, layers=LPIPS_LAYERS) -> float:
    """``100 * (1 - distance)``, clamped, so that identical sets score 100."""
    return 100.0 * (1.0 - min(max(raw_lpips(x_set, adv_set, model, layers), 0.0), 1.0))


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def evaluate(
    x_set,
    adv_set,
    results,
    model,
    *,
    method: str,
    model_name: str = "clf",
    eta: float = float("nan"),
    epsilon: float = float("nan"),
    steps: int = 0,
    seed: int = 0,
    fid_layer: str = FID_LAYER,
    lpips_layers=LPIPS_LAYERS,
    config: dict | None = None,
) -> MetricsReport:
    raw_fid = fid(feature_stats(x_set, model, fid_layer), feature_stats(adv_set, model, fid_layer))
    lp = raw_lpips(x_set, adv_set, model, lpips_layers)
    return MetricsReport(
        method=method,
        model=model_name,
        asr_percent=asr(results),
        score_fid_percent=score_fid(raw_fid),
        score_lpips_percent=100.0 * (1.0 - min(max(lp, 0.0), 1.0)),
        raw_fid=raw_fid,
        raw_lpips=lp,
        eta=eta,
        epsilon=epsilon,
        steps=steps,
        seed=seed,
        config_hash=config_hash(config or {}),
    )
