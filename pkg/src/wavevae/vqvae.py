"""Vector-quantized autoencoder over wavelet high-frequency subbands.

The LL band never enters the network.  For every encoded level the three
high bands are stacked as channels, passed through a shared strided-conv
encoder, snapped to the nearest codebook entry and decoded back to the same
packed shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import tensor as T
from ._validation import check_images, check_seed
from .persistence import stored_float
from .tensor import Tensor
from .wavelet import WaveletPyramid, get_filter, merge_bands, wpt_forward, wpt_inverse

__all__ = ["Codebook", "LatentGrid", "WaveletVQVAE", "quantize", "pack_bands", "unpack_bands"]

_STRIDES = 2  # stride-2 encoder layers; latent extent = band extent / 4


@dataclass
class Codebook:
    entries: Tensor

    def __post_init__(self):
        if self.entries.ndim != 2 or self.entries.shape[0] == 0:
            raise ValueError(f"codebook must be a non-empty [K, D] table, got {self.entries.shape}")
        if not np.all(np.isfinite(self.entries.data)):
            raise ValueError("codebook entries must be finite")

    @property
    def K(self) -> int:
        return self.entries.shape[0]

    @property
    def D(self) -> int:
        return self.entries.shape[1]


@dataclass
class LatentGrid:
    """Latent of one encoded level; ``z_q``/``indices`` are filled by :func:`quantize`."""

    z_e: Tensor
    z_q: Tensor | None = None
    indices: np.ndarray | None = None


def nearest_codes(sites: np.ndarray, entries: np.ndarray) -> np.ndarray:
    """Index of the closest entry per row of ``sites``; lowest index wins ties."""
    dist = ((sites[:, None, :] - entries[None, :, :]) ** 2).sum(axis=-1)
    return np.argmin(dist, axis=1)


def quantize(z_e, codebook: Codebook) -> LatentGrid:
    """Snap each spatial site of a [N, D, h, w] latent to its nearest entry.

    ``z_q`` is the gathered codebook rows, so it carries gradient to the
    codebook; straight-through routing to ``z_e`` is applied by the caller.
    """
    z_e = T.as_tensor(z_e)
    if codebook.K == 0:
        raise ValueError("codebook is empty")
    if z_e.ndim != 4 or z_e.shape[1] != codebook.D:
        raise ValueError(f"latent {z_e.shape} does not match codebook dimension {codebook.D}")
    n, d, h, w = z_e.shape
    sites = np.transpose(z_e.data, (0, 2, 3, 1)).reshape(-1, d)
    idx = nearest_codes(sites, codebook.entries.data)
    rows = T.take(codebook.entries, idx)
    z_q = T.transpose(T.reshape(rows, (n, h, w, d)), (0, 3, 1, 2))
    return LatentGrid(z_e, z_q, idx.reshape(n, h, w))


def pack_bands(triple) -> Tensor:
    return T.concat(list(triple), axis=1)


def unpack_bands(packed: Tensor, channels: int):
    return tuple(packed[:, i * channels : (i + 1) * channels] for i in range(3))


def _he(rng, shape) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class WaveletVQVAE(TransformerMixin, BaseEstimator):
    """Wavelet-packet VQ-VAE.

    Parameters
    ----------
    filter : {"haar", "db4"}
        Orthonormal wavelet used for analysis and synthesis.
    levels : int
        Decomposition depth.
    bands : {"all", "finest"}
        Encode the high bands of every level, or only of the finest one.
        Unencoded bands pass through unchanged, like LL.
    n_codes, code_dim : int
        Codebook size K and embedding dimension D.
    hidden : int
        Channels of the intermediate encoder/decoder layer.
    beta : float
        Commitment coefficient.
    epochs, lr, batch_size, seed
        Adam training schedule; training is deterministic given ``seed``.
    codebook_lr : float, optional
        Separate Adam step size for the codebook (defaults to ``lr``).
    """

    def __init__(
        self,
        filter="haar",
        levels=2,
        bands="all",
        n_codes=64,
        code_dim=32,
        hidden=32,
        beta=0.25,
        epochs=5,
        lr=2e-3,
        codebook_lr=None,
        codebook_init="uniform",
        batch_size=32,
        seed=0,
    ):
        self.filter = filter
        self.levels = levels
        self.bands = bands
        self.n_codes = n_codes
        self.code_dim = code_dim
        self.hidden = hidden
        self.beta = beta
        self.epochs = epochs
        self.lr = lr
        self.codebook_lr = codebook_lr
        self.codebook_init = codebook_init
        self.batch_size = batch_size
        self.seed = seed

    # -- structure -----------------------------------------------------------

    @property
    def encoded_levels(self) -> list[int]:
        if self.bands == "all":
            return list(range(self.levels))
        if self.bands == "finest":
            return [0]
        raise ValueError(f"bands must be 'all' or 'finest', got {self.bands!r}")

    def initialize(self, image_shape) -> "WaveletVQVAE":
        """Draw fresh weights for images of shape ``(C, H, W)``."""
        c, h, w = (int(v) for v in image_shape)
        get_filter(self.filter)
        coarsest = 2 ** (self.levels + _STRIDES)
        if h % coarsest or w % coarsest:
            raise ValueError(
                f"{h}x{w} images need extents divisible by {coarsest} for {self.levels} levels"
            )
        if self.n_codes < 2:
            raise ValueError("n_codes must be at least 2")
        self.encoded_levels  # validates `bands`
        rng = np.random.default_rng(check_seed(self.seed))
        bc, hid, d, k = 3 * c, self.hidden, self.code_dim, self.n_codes
        shapes = {
            "enc1.w": (hid, bc, 3, 3),
            "enc2.w": (d, hid, 3, 3),
            "dec1.w": (hid, d, 3, 3),
            "dec2.w": (bc, hid, 3, 3),
        }
        params = {}
        for name, shape in shapes.items():
            params[name] = Tensor(_he(rng, shape), requires_grad=True)
            params[name[:-1] + "b"] = Tensor(np.zeros(shape[0]), requires_grad=True)
        params["codebook"] = Tensor(rng.uniform(-1.0 / k, 1.0 / k, size=(k, d)), requires_grad=True)
        self.params_ = params
        self.image_shape_ = (c, h, w)
        return self

    @property
    def codebook_(self) -> Codebook:
        check_is_fitted(self, "params_")
        return Codebook(self.params_["codebook"])

    def parameters(self) -> list[Tensor]:
        check_is_fitted(self, "params_")
        return [self.params_[k] for k in sorted(self.params_)]

    # -- network pieces ------------------------------------------------------

    def pyramid(self, X) -> WaveletPyramid:
        return wpt_forward(T.as_tensor(X), self.levels, self.filter)

    def pack(self, pyramid: WaveletPyramid) -> list[Tensor]:
        """Encoder inputs: one [N, 3C, h, w] tensor per encoded level."""
        return [pack_bands(pyramid.highs[lvl]) for lvl in self.encoded_levels]

    def encode(self, packed: list[Tensor]) -> list[LatentGrid]:
        check_is_fitted(self, "params_")
        p = self.params_
        grids = []
        for lvl, band in zip(self.encoded_levels, packed):
            band = T.as_tensor(band)
            want_c = 3 * self.image_shape_[0]
            want_hw = (self.image_shape_[1] >> (lvl + 1), self.image_shape_[2] >> (lvl + 1))
            if band.ndim != 4 or band.shape[1] != want_c or band.shape[2:] != want_hw:
                raise ValueError(
                    f"level {lvl + 1} bands have shape {band.shape}, "
                    f"expected [N, {want_c}, {want_hw[0]}, {want_hw[1]}]"
                )
            h = T.relu(T.conv2d(band, p["enc1.w"], p["enc1.b"], stride=2, padding=1))
            grids.append(LatentGrid(T.conv2d(h, p["enc2.w"], p["enc2.b"], stride=2, padding=1)))
        return grids

    def quantize(self, z_e) -> LatentGrid:
        return quantize(z_e, self.codebook_)

    def decode(self, z_q) -> Tensor:
        check_is_fitted(self, "params_")
        z_q = T.as_tensor(z_q)
        if z_q.ndim != 4 or z_q.shape[1] != self.code_dim:
            raise ValueError(f"latent shape {z_q.shape} does not match code_dim {self.code_dim}")
        p = self.params_
        # stride-2 transposed convolutions, written as zero insertion + conv
        h = T.relu(T.conv2d(T.dilate2x(z_q), p["dec1.w"], p["dec1.b"], padding=1))
        return T.conv2d(T.dilate2x(h), p["dec2.w"], p["dec2.b"], padding=1)

    def decode_latents(self, latents: list[Tensor]) -> list[Tensor]:
        """Quantize with straight-through gradients, then decode each level."""
        out = []
        for z in latents:
            grid = self.quantize(z)
            out.append(self.decode(T.straight_through(grid.z_e, grid.z_q)))
        return out

    def synthesize(self, pyramid: WaveletPyramid, decoded: list[Tensor]) -> Tensor:
        """Inverse transform of the original LL (and unencoded bands) with decoded highs."""
        c = self.image_shape_[0]
        highs = list(pyramid.highs)
        for lvl, packed in zip(self.encoded_levels, decoded):
            highs[lvl] = unpack_bands(packed, c)
        return wpt_inverse(merge_bands(pyramid.ll, highs, self.levels), self.filter)

    # -- objective -----------------------------------------------------------

    def loss_terms(self, X) -> dict[str, Tensor]:
        """Reconstruction, codebook and (unscaled) commitment terms, batch-averaged."""
        x = T.as_tensor(X)
        if x.ndim == 3:
            x = T.reshape(x, (1,) + x.shape)
        packed = self.pack(self.pyramid(x))
        return self.packed_loss_terms(packed)

    def packed_loss_terms(self, packed: list[Tensor]) -> dict[str, Tensor]:
        n = float(packed[0].shape[0])
        recon = codebook = commit = None
        for band, grid in zip(packed, self.encode(packed)):
            grid = self.quantize(grid.z_e)
            rec = self.decode(T.straight_through(grid.z_e, grid.z_q))
            r = T.tsum((band - rec) ** 2)
            cb = T.tsum((T.stop_gradient(grid.z_e) - grid.z_q) ** 2)
            cm = T.tsum((T.stop_gradient(grid.z_q) - grid.z_e) ** 2)
            recon = r if recon is None else recon + r
            codebook = cb if codebook is None else codebook + cb
            commit = cm if commit is None else commit + cm
        return {"reconstruction": recon / n, "codebook": codebook / n, "commitment": commit / n}

    def loss(self, X) -> Tensor:
        terms = self.loss_terms(X)
        return terms["reconstruction"] + terms["codebook"] + self.beta * terms["commitment"]

    def _packed_loss(self, packed) -> Tensor:
        terms = self.packed_loss_terms(packed)
        return terms["reconstruction"] + terms["codebook"] + self.beta * terms["commitment"]

    # -- estimator API -------------------------------------------------------

    def fit(self, X, y=None):
        X = check_images(X)
        self.initialize(X.shape[1:])
        packed_all = [b.data for b in self.pack(self.pyramid(X))]
        if self.codebook_init == "data":
            self._seed_codebook(packed_all)
        elif self.codebook_init != "uniform":
            raise ValueError(f"codebook_init must be 'uniform' or 'data', got {self.codebook_init!r}")
        self.initial_loss_ = self._mean_loss(packed_all)
        self.history_ = []
        codebook = self.params_["codebook"]
        net = [p for p in self.parameters() if p is not codebook]
        optimizers = [T.Adam(net, lr=self.lr), T.Adam([codebook], lr=self.codebook_lr or self.lr)]
        rng = np.random.default_rng(check_seed(self.seed) + 1)
        n = X.shape[0]
        for epoch in range(int(self.epochs)):
            order = rng.permutation(n)
            total = 0.0
            for step, start in enumerate(range(0, n, self.batch_size)):
                idx = order[start : start + self.batch_size]
                loss = self._packed_loss([Tensor(b[idx]) for b in packed_all])
                if not np.isfinite(loss.item()):
                    raise T.DivergenceError(f"VQ-VAE loss diverged at epoch {epoch + 1}, step {step}")
                for opt in optimizers:
                    opt.zero_grad()
                loss.backward()
                for opt in optimizers:
                    opt.step()
                total += loss.item() * len(idx)
            self.history_.append(total / n)
        return self

    def _seed_codebook(self, packed_all) -> None:
        """Replace the codebook with randomly chosen encoder outputs."""
        rng = np.random.default_rng(check_seed(self.seed) + 2)
        n = packed_all[0].shape[0]
        take = rng.choice(n, size=min(n, 256), replace=False)
        grids = self.encode([Tensor(b[np.sort(take)]) for b in packed_all])
        sites = np.concatenate(
            [np.transpose(g.z_e.data, (0, 2, 3, 1)).reshape(-1, self.code_dim) for g in grids]
        )
        pick = rng.choice(sites.shape[0], size=self.n_codes, replace=sites.shape[0] < self.n_codes)
        self.params_["codebook"].data = sites[pick].astype(self.params_["codebook"].dtype)

    def _mean_loss(self, packed_all) -> float:
        n = packed_all[0].shape[0]
        total = 0.0
        for start in range(0, n, 256):
            batch = [Tensor(b[start : start + 256]) for b in packed_all]
            total += self._packed_loss(batch).item() * batch[0].shape[0]
        return total / n

    def score(self, X, y=None) -> float:
        """Negative mean objective (higher is better)."""
        X = check_images(X)
        return -self._mean_loss([b.data for b in self.pack(self.pyramid(X))])

    def transform(self, X) -> np.ndarray:
        """Continuous latents of every encoded level, flattened per image."""
        X = check_images(X)
        grids = self.encode(self.pack(self.pyramid(X)))
        return np.concatenate([g.z_e.data.reshape(X.shape[0], -1) for g in grids], axis=1)

    def reconstruct(self, X) -> np.ndarray:
        """Decode through the quantizer and invert the transform (not clipped)."""
        X = check_images(X)
        pyr = self.pyramid(X)
        grids = self.encode(self.pack(pyr))
        image = self.synthesize(pyr, self.decode_latents([g.z_e for g in grids]))
        return image.data

    # -- persistence ---------------------------------------------------------

    _META = ("levels", "n_codes", "code_dim", "hidden", "beta", "epochs", "lr", "codebook_lr", "batch_size", "seed")
    _FILTERS = ("haar", "db4")
    _BANDS = ("all", "finest")
    _INITS = ("uniform", "data")

    def get_weights(self) -> dict[str, np.ndarray]:
        check_is_fitted(self, "params_")
        out = {f"param.{k}": v.data for k, v in sorted(self.params_.items())}
        for key in self._META:
            value = getattr(self, key)
            out[f"meta.{key}"] = np.asarray(0.0 if value is None else value, dtype=np.float32)
        out["meta.filter"] = np.asarray(self._FILTERS.index(self.filter), dtype=np.float32)
        out["meta.bands"] = np.asarray(self._BANDS.index(self.bands), dtype=np.float32)
        out["meta.codebook_init"] = np.asarray(self._INITS.index(self.codebook_init), dtype=np.float32)
        out["meta.image_shape"] = np.asarray(self.image_shape_, dtype=np.float32)
        return out

    @classmethod
    def from_weights(cls, weights: dict[str, np.ndarray]) -> "WaveletVQVAE":
        kwargs = {}
        for key in cls._META:
            value = weights[f"meta.{key}"]
            kwargs[key] = stored_float(value) if key in ("beta", "lr", "codebook_lr") else int(value)
        kwargs["codebook_lr"] = kwargs["codebook_lr"] or None
        kwargs["filter"] = cls._FILTERS[int(weights["meta.filter"])]
        kwargs["bands"] = cls._BANDS[int(weights["meta.bands"])]
        kwargs["codebook_init"] = cls._INITS[int(weights["meta.codebook_init"])]
        model = cls(**kwargs)
        model.initialize(tuple(int(v) for v in weights["meta.image_shape"]))
        for name, tensor in model.params_.items():
            stored = weights[f"param.{name}"]
            if stored.shape != tensor.shape:
                raise ValueError(f"weight {name!r} has shape {stored.shape}, expected {tensor.shape}")
            tensor.data = np.array(stored, dtype=tensor.dtype)
        return model
