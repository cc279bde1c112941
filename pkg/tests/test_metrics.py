import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import linalg

from wavevae import metrics
from wavevae.attacks import AttackResult
from wavevae.classifier import ConvClassifier
from wavevae.datasets import generate
from wavevae.metrics import FeatureStats, MetricsReport


@pytest.fixture(scope="module")
def clf():
    return ConvClassifier(channels=(4, 4, 8), seed=3).initialize((3, 32, 32))


def _result(success):
    return AttackResult(np.zeros((3, 2, 2)), success, 1, 0.0, "pgd")


def test_asr_arithmetic():
    assert metrics.asr([_result(True)] * 5) == 100.0
    assert metrics.asr([_result(False)] * 5) == 0.0
    outcome = [_result(True)] * 3 + [_result(False)]
    assert metrics.asr(outcome) == 75.0
    assert metrics.asr(outcome) + 100.0 * 1 / 4 == 100.0
    with pytest.raises(ValueError, match="empty"):
        metrics.asr([])


def test_fid_hand_cases():
    a = FeatureStats([0.0], [[1.0]], 10)
    b = FeatureStats([3.0], [[1.0]], 10)
    assert abs(metrics.fid(a, b) - 9.0) <= 1e-8
    assert metrics.fid(a, a) == 0.0
    for d in (1, 4, 17):
        i, j = FeatureStats(np.zeros(d), np.eye(d), 5), FeatureStats(np.zeros(d), 4 * np.eye(d), 5)
        assert abs(metrics.fid(i, j) - d) <= 1e-8


def test_fid_matches_scipy_sqrtm(rng):
    for _ in range(10):
        fa, fb = rng.normal(size=(50, 6)), rng.normal(size=(40, 6)) @ rng.normal(size=(6, 6)) + 1.0
        a, b = FeatureStats.from_features(fa), FeatureStats.from_features(fb)
        cross = linalg.sqrtm(a.covariance @ b.covariance).real
        diff = a.mean - b.mean
        want = diff @ diff + np.trace(a.covariance + b.covariance - 2 * cross)
        assert metrics.fid(a, b) == pytest.approx(want, rel=1e-8, abs=1e-8)
        assert metrics.fid(a, b) == pytest.approx(metrics.fid(b, a), rel=1e-8, abs=1e-8)


def test_fid_rejects_mismatch():
    with pytest.raises(ValueError, match="dimensions"):
        metrics.fid(FeatureStats([0.0], [[1.0]], 2), FeatureStats([0.0, 0.0], np.eye(2), 2))
    with pytest.raises(ValueError, match="symmetric"):
        FeatureStats([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]], 3)
    with pytest.raises(ValueError, match="two"):
        FeatureStats.from_features(np.ones((1, 3)))


def test_score_fid_endpoints():
    assert metrics.score_fid(0.0) == 100.0
    assert metrics.score_fid(200.0) == 0.0 and metrics.score_fid(1e6) == 0.0
    assert abs(metrics.score_fid(50.0) - 86.60) <= 0.01
    assert metrics.score_fid(50.0) == pytest.approx(100 * math.sqrt(0.75), abs=1e-12)
    with pytest.raises(ValueError):
        metrics.score_fid(-1.0)


@given(st.floats(0, 250), st.floats(0, 250))
def test_score_fid_monotone(a, b):
    lo, hi = min(a, b), max(a, b)
    assert metrics.score_fid(lo) >= metrics.score_fid(hi)
    assert 0 <= metrics.score_fid(hi) <= 100


def test_stats_match_two_pass(rng):
    feats = rng.normal(size=(30, 5)) * 3 + 2
    stats = FeatureStats.from_features(feats)
    mean = [sum(col) / len(col) for col in feats.T]
    cov = np.zeros((5, 5))
    for i in range(5):
        for j in range(5):
            cov[i, j] = sum((feats[n, i] - mean[i]) * (feats[n, j] - mean[j]) for n in range(30)) / 29
    np.testing.assert_allclose(stats.mean, mean, rtol=1e-12)
    np.testing.assert_allclose(stats.covariance, cov, rtol=1e-10, atol=1e-12)
    const = FeatureStats.from_features(np.tile([[1.5, -2.0]], (4, 1)))
    np.testing.assert_array_equal(const.mean, [1.5, -2.0])
    assert not const.covariance.any()


def test_feature_stats_of_duplicates(clf):
    X = np.repeat(generate(1, 4).to_float(), 3, axis=0)
    stats = metrics.feature_stats(X, clf)
    assert stats.covariance.shape == (4, 4) and np.abs(stats.covariance).max() <= 1e-12
    with pytest.raises(ValueError):
        metrics.feature_stats(X[:1], clf)


def test_lpips_orthogonal_units():
    a = np.zeros((1, 2, 3, 3))
    b = np.zeros((1, 2, 3, 3))
    a[:, 0], b[:, 1] = 1.0, 1.0
    assert metrics.lpips_distance([a], [b]) == pytest.approx([2.0], abs=1e-9)
    assert metrics.lpips_distance([a, a], [b, a]) == pytest.approx([2.0], abs=1e-9)
    assert metrics.lpips_distance([], []).size == 0


def test_lpips_identity_and_symmetry(clf, rng):
    X = generate(4, 9).to_float()
    Y = np.clip(X + rng.normal(scale=0.1, size=X.shape), 0, 1).astype(np.float32)
    assert metrics.score_lpips(X, X, clf) == 100.0 and metrics.raw_lpips(X, X, clf) == 0.0
    assert metrics.raw_lpips(X, Y, clf) >= 0
    assert metrics.raw_lpips(X, Y, clf) == pytest.approx(metrics.raw_lpips(Y, X, clf), rel=1e-12)
    with pytest.raises(ValueError, match="unpaired"):
        metrics.raw_lpips(X, Y[:2], clf)


def test_evaluate_report(clf):
    X = generate(5, 2).to_float()
    outcome = [_result(i % 2 == 0) for i in range(5)]
    report = metrics.evaluate(X, X, outcome, clf, method="pgd", epsilon=8 / 255, steps=100, config={"a": 1})
    assert report.asr_percent == 60.0 and report.score_fid_percent == 100.0 and report.score_lpips_percent == 100.0
    assert report.config_hash == metrics.config_hash({"a": 1}) != metrics.config_hash({"a": 2})
    with pytest.raises(ValueError):
        MetricsReport("m", "c", 101.0, 0.0, 0.0, 0.0, 0.0)
