"""Latent-space unrestricted attack and pixel-space baselines.

All attacks are untargeted: they ascend the cross-entropy of the true label.
Pixel baselines keep their perturbation inside an l-inf ball of radius
``epsilon`` around the clean image; the latent attack keeps the perturbation
of the continuous encoder output inside an l-inf ball of radius ``eta``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import DivergenceError, Tensor

__all__ = [
    "AttackConfig",
    "AttackResult",
    "METHODS",
    "latent_attack",
    "fgsm",
    "pgd",
    "mim",
    "dim",
    "run_attack",
    "run_campaign",
    "image_seed",
]


@dataclass
class AttackConfig:
    eta: float = 0.3
    lr: float = 0.01
    n_steps: int = 100
    epsilon: float = 8 / 255
    alpha: float | None = None  # iterative step size; None means epsilon / 10
    mu: float = 1.0
    dim_prob: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if self.eta < 0 or self.epsilon < 0 or self.n_steps < 0:
            raise ValueError("eta, epsilon and n_steps must be non-negative")
        if not 0 <= self.dim_prob <= 1:
            raise ValueError(f"dim_prob must lie in [0, 1], got {self.dim_prob}")
        if self.alpha is not None and self.alpha < 0:
            raise ValueError("alpha must be non-negative")

    @property
    def step_size(self) -> float:
        return self.epsilon / 10 if self.alpha is None else self.alpha


@dataclass
class AttackResult:
    x_adv: np.ndarray
    success: bool
    steps_run: int
    final_loss: float
    method: str
    label: int = -1
    prediction: int = -1
    index: int = -1
    linf: float = 0.0
    latent_linf: float | None = None
    transforms_applied: int = 0
    error: str | None = None
    extra: dict = field(default_factory=dict)


def image_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(index)])


def _batch(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[0] != 1:
        raise ValueError(f"attacks take one image [C, H, W], got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("image contains non-finite pixels")
    return x


def _loss_and_grad(clf, x_tensor: Tensor, label: int, leaf: Tensor) -> tuple[float, np.ndarray]:
    loss = T.softmax_cross_entropy(clf.forward(x_tensor), [label])
    loss.backward()
    return loss.item(), leaf.grad


def _finish(method, x, x_adv, label, clf, steps, **extra) -> AttackResult:
    logits = clf.forward(Tensor(x_adv))
    loss = T.softmax_cross_entropy(logits, [label]).item()
    pred = int(np.argmax(logits.data[0]))
    linf = float(np.max(np.abs(x_adv.astype(np.float64) - x.astype(np.float64)), initial=0.0))
    return AttackResult(
        x_adv=x_adv[0],
        success=pred != label,
        steps_run=steps,
        final_loss=loss,
        method=method,
        label=label,
        prediction=pred,
        linf=linf,
        **extra,
    )


def _project(x: np.ndarray, x_adv: np.ndarray, eps: float) -> np.ndarray:
    """Clip into the eps-ball around ``x`` and into [0, 1], exactly.

    The bounds are rounded inward to float32, so no output can sit one ulp
    outside the ball.
    """
    x64 = x.astype(np.float64)
    lo = np.maximum(x64 - eps, 0.0)
    hi = np.minimum(x64 + eps, 1.0)
    lo32, hi32 = lo.astype(np.float32), hi.astype(np.float32)
    # differences of float32 values are exact in float64
    lo32 = np.where(x64 - lo32 > eps, np.nextafter(lo32, np.float32(np.inf)), lo32)
    hi32 = np.where(hi32 - x64 > eps, np.nextafter(hi32, np.float32(-np.inf)), hi32)
    return np.clip(x_adv, lo32, hi32).astype(np.float32)


# -- latent attack -----------------------------------------------------------


def _f32_at_most(value: float) -> np.float32:
    """Largest float32 not exceeding ``value`` (``float32(0.3)`` rounds up)."""
    out = np.float32(value)
    if float(out) > value:
        out = np.nextafter(out, np.float32(-np.inf))
    return out


def latent_attack(x, label: int, vqvae, clf, cfg: AttackConfig) -> AttackResult:
    """Gradient ascent on the continuous latent of the high-frequency bands.

    The perturbation ``zeta`` of every encoded level is kept in ``[-eta, eta]``
    after each step; quantization is re-applied on every forward pass with
    straight-through gradients, and the LL band is taken from ``x`` unchanged.
    """
    x = _batch(x)
    label = int(label)
    pyr = vqvae.pyramid(Tensor(x))
    z0 = [g.z_e.data for g in vqvae.encode(vqvae.pack(pyr))]
    zeta = [np.zeros_like(z) for z in z0]
    eta = _f32_at_most(cfg.eta)

    def render(offsets):
        latents = [T.add(Tensor(z), d) for z, d in zip(z0, offsets)]
        return vqvae.synthesize(pyr, vqvae.decode_latents(latents))

    for step in range(cfg.n_steps):
        leaves = [Tensor(d, requires_grad=True) for d in zeta]
        image = T.clip(render(leaves), 0.0, 1.0)
        loss = T.softmax_cross_entropy(clf.forward(image), [label])
        loss.backward()
        for i, leaf in enumerate(leaves):
            g = leaf.grad
            if not np.all(np.isfinite(g)):
                raise DivergenceError(f"non-finite latent gradient at step {step}")
            zeta[i] = np.clip(zeta[i] + np.float32(cfg.lr) * g, -eta, eta)

    x_adv = np.clip(render([Tensor(d) for d in zeta]).data, 0, 1).astype(np.float32)
    latent_linf = max((float(np.max(np.abs(d), initial=0.0)) for d in zeta), default=0.0)
    return _finish("latent", x, x_adv, label, clf, cfg.n_steps, latent_linf=latent_linf)


# -- pixel-space baselines ---------------------------------------------------


def fgsm(x, label: int, clf, cfg: AttackConfig) -> AttackResult:
    x = _batch(x)
    label = int(label)
    leaf = Tensor(x, requires_grad=True)
    _, g = _loss_and_grad(clf, leaf, label, leaf)
    x_adv = _project(x, x + np.float32(cfg.epsilon) * np.sign(g), cfg.epsilon)
    return _finish("fgsm", x, x_adv, label, clf, 1)


def _resize_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Bilinear interpolation weights mapping ``n_in`` samples to ``n_out`` (half-pixel centres)."""
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        src = min(max((i + 0.5) * n_in / n_out - 0.5, 0.0), n_in - 1.0)
        lo = int(math.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        m[i, lo] += 1 - frac
        m[i, hi] += frac
    return m


def diverse_input(x: Tensor, rng: np.random.Generator) -> Tensor:
    """Random shrink to [0.9 H, H] then zero-pad back to H at a random offset."""
    h, w = x.shape[-2:]
    size = int(rng.integers(math.ceil(0.9 * h), h + 1))
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    size_w = int(round(size * w / h))
    shrunk = T.linear_map(x, _resize_matrix(size, h), _resize_matrix(size_w, w))
    return T.pad2d(shrunk, top, h - size - top, left, w - size_w - left)


def _iterative(method, x, label, clf, cfg, mu: float, dim_prob: float) -> AttackResult:
    x = _batch(x)
    label = int(label)
    rng = np.random.default_rng(cfg.seed)
    alpha = np.float32(cfg.step_size)
    x_adv = x.copy()
    momentum = np.zeros_like(x)
    applied = 0
    for step in range(cfg.n_steps):
        leaf = Tensor(x_adv, requires_grad=True)
        inp = leaf
        if dim_prob > 0 and rng.random() < dim_prob:
            inp = diverse_input(leaf, rng)
            applied += 1
        _, g = _loss_and_grad(clf, inp, label, leaf)
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient at step {step}")
        if mu is None:
            direction = g
        else:
            norm = np.abs(g).sum()
            momentum = np.float32(mu) * momentum + (g / norm if norm > 0 else g)
            direction = momentum
        x_adv = _project(x, x_adv + alpha * np.sign(direction), cfg.epsilon)
    return _finish(method, x, x_adv, label, clf, cfg.n_steps, transforms_applied=applied)


def pgd(x, label: int, clf, cfg: AttackConfig) -> AttackResult:
    return _iterative("pgd", x, label, clf, cfg, mu=None, dim_prob=0.0)


def mim(x, label: int, clf, cfg: AttackConfig) -> AttackResult:
    return _iterative("mim", x, label, clf, cfg, mu=cfg.mu, dim_prob=0.0)


def dim(x, label: int, clf, cfg: AttackConfig) -> AttackResult:
    return _iterative("dim", x, label, clf, cfg, mu=cfg.mu, dim_prob=cfg.dim_prob)


METHODS = ("latent", "fgsm", "pgd", "mim", "dim")


def run_attack(method: str, x, label: int, cfg: AttackConfig, clf, vqvae=None) -> AttackResult:
    if method == "latent":
        if vqvae is None:
            raise ValueError("the latent attack needs a trained VQ-VAE")
        return latent_attack(x, label, vqvae, clf, cfg)
    try:
        fn = {"fgsm": fgsm, "pgd": pgd, "mim": mim, "dim": dim}[method]
    except KeyError:
        raise ValueError(f"unknown attack method {method!r}; choose from {METHODS}") from None
    return fn(x, label, clf, cfg)


def run_campaign(X, y, method: str, cfg: AttackConfig, clf, vqvae=None, workers: int = 1) -> list[AttackResult]:
    """Attack every image; per-image seeds make results independent of ``workers``.

    Failures on single images are recorded in ``AttackResult.error`` and
    counted as unsuccessful instead of aborting the campaign.
    """
    if method not in METHODS:
        raise ValueError(f"unknown attack method {method!r}; choose from {METHODS}")
    X = np.asarray(X, dtype=np.float32)
    y = np.asarray(y)
    if X.shape[0] != y.shape[0]:
        raise ValueError("need one label per image")

    def one(i: int) -> AttackResult:
        seed = int(image_seed(cfg.seed, i).generate_state(1)[0])
        local = AttackConfig(**{**cfg.__dict__, "seed": seed})
        try:
            result = run_attack(method, X[i], int(y[i]), local, clf, vqvae)
        except Exception as exc:  # noqa: BLE001 - reported per image
            result = AttackResult(
                x_adv=X[i].copy(),
                success=False,
                steps_run=0,
                final_loss=float("nan"),
                method=method,
                label=int(y[i]),
                error=f"{type(exc).__name__}: {exc}",
            )
        result.index = i
        return result

    if workers <= 1:
        return [one(i) for i in range(X.shape[0])]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(X.shape[0])))
