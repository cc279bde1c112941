"""Small convolutional image classifier used as the attack target."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import tensor as T
from ._validation import check_images, check_labels, check_seed
from .persistence import stored_float
from .tensor import Tensor

__all__ = ["ConvClassifier", "LAYERS"]

LAYERS = ("conv1", "conv2", "conv3")


class ConvClassifier(ClassifierMixin, BaseEstimator):
    """Three conv -> ReLU -> 2x2 average-pool blocks followed by a linear head.

    The post-ReLU activation of each block is exposed as a named feature layer.
    Inputs are channel-first images with pixels in [0, 1].
    """

    def __init__(self, n_classes=10, channels=(16, 32, 64), epochs=8, lr=2e-3, batch_size=64, seed=0):
        self.n_classes = n_classes
        self.channels = channels
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.seed = seed

    def initialize(self, image_shape) -> "ConvClassifier":
        c, h, w = (int(v) for v in image_shape)
        if len(self.channels) != len(LAYERS):
            raise ValueError(f"channels must list {len(LAYERS)} widths")
        if h % 8 or w % 8:
            raise ValueError(f"image extents {h}x{w} must be divisible by 8")
        rng = np.random.default_rng(check_seed(self.seed))
        params = {}
        shapes = {}
        prev = c
        for i, (name, width) in enumerate(zip(LAYERS, self.channels)):
            fan_in = prev * 9
            params[f"{name}.w"] = Tensor(
                rng.normal(0, np.sqrt(2.0 / fan_in), size=(width, prev, 3, 3)), requires_grad=True
            )
            params[f"{name}.b"] = Tensor(np.zeros(width), requires_grad=True)
            shapes[name] = (width, h >> i, w >> i)
            prev = width
        flat = prev * (h >> 3) * (w >> 3)
        params["head.w"] = Tensor(
            rng.normal(0, np.sqrt(1.0 / flat), size=(self.n_classes, flat)), requires_grad=True
        )
        params["head.b"] = Tensor(np.zeros(self.n_classes), requires_grad=True)
        self.params_ = params
        self.feature_shapes_ = shapes
        self.image_shape_ = (c, h, w)
        self.classes_ = np.arange(self.n_classes)
        return self

    def parameters(self) -> list[Tensor]:
        check_is_fitted(self, "params_")
        return [self.params_[k] for k in sorted(self.params_)]

    def forward(self, x, return_features: bool = False):
        """Differentiable logits for a [N, C, H, W] tensor."""
        check_is_fitted(self, "params_")
        x = T.as_tensor(x)
        if x.ndim != 4 or x.shape[1:] != self.image_shape_:
            raise ValueError(f"expected input [N, {', '.join(map(str, self.image_shape_))}], got {x.shape}")
        p = self.params_
        h = x - 0.5
        feats = {}
        for name in LAYERS:
            h = T.relu(T.conv2d(h, p[f"{name}.w"], p[f"{name}.b"], padding=1))
            feats[name] = h
            h = T.avg_pool2d(h)
        logits = T.dense(T.reshape(h, (h.shape[0], -1)), p["head.w"], p["head.b"])
        return (logits, feats) if return_features else logits

    def fit(self, X, y):
        X = check_images(X)
        y = check_labels(y, X.shape[0], self.n_classes)
        self.initialize(X.shape[1:])
        opt = T.Adam(self.parameters(), lr=self.lr)
        rng = np.random.default_rng(check_seed(self.seed) + 1)
        self.accuracy_history_ = [self.score(X, y)]
        self.loss_history_ = []
        n = X.shape[0]
        for epoch in range(int(self.epochs)):
            order = rng.permutation(n)
            total = 0.0
            for step, start in enumerate(range(0, n, self.batch_size)):
                idx = order[start : start + self.batch_size]
                loss = T.softmax_cross_entropy(self.forward(Tensor(X[idx])), y[idx])
                if not np.isfinite(loss.item()):
                    raise T.DivergenceError(f"classifier loss diverged at epoch {epoch + 1}, step {step}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += loss.item() * len(idx)
            self.loss_history_.append(total / n)
            self.accuracy_history_.append(self.score(X, y))
        return self

    def logits(self, X) -> np.ndarray:
        X = check_images(X)
        out = [self.forward(Tensor(X[i : i + 256])).data for i in range(0, X.shape[0], 256)]
        return np.concatenate(out, axis=0)

    def predict(self, X) -> np.ndarray:
        # np.argmax returns the first maximum, i.e. the lowest index on ties
        return np.argmax(self.logits(X), axis=1)

    def features(self, X, layer_names) -> list[np.ndarray]:
        """Post-ReLU activations ``[N, C_l, H_l, W_l]`` at the named layers, in request order."""
        check_is_fitted(self, "params_")
        layer_names = list(layer_names)
        unknown = [n for n in layer_names if n not in self.feature_shapes_]
        if unknown:
            raise ValueError(f"unknown feature layers {unknown}; available: {list(LAYERS)}")
        if not layer_names:
            return []
        X = check_images(X)
        chunks = {name: [] for name in layer_names}
        for i in range(0, X.shape[0], 256):
            _, feats = self.forward(Tensor(X[i : i + 256]), return_features=True)
            for name in layer_names:
                chunks[name].append(feats[name].data)
        return [np.concatenate(chunks[name], axis=0) for name in layer_names]

    _META = ("n_classes", "epochs", "lr", "batch_size", "seed")

    def get_weights(self) -> dict[str, np.ndarray]:
        check_is_fitted(self, "params_")
        out = {f"param.{k}": v.data for k, v in sorted(self.params_.items())}
        for key in self._META:
            out[f"meta.{key}"] = np.asarray(getattr(self, key), dtype=np.float32)
        out["meta.channels"] = np.asarray(self.channels, dtype=np.float32)
        out["meta.image_shape"] = np.asarray(self.image_shape_, dtype=np.float32)
        return out

    @classmethod
    def from_weights(cls, weights: dict[str, np.ndarray]) -> "ConvClassifier":
        kwargs = {
            key: stored_float(weights[f"meta.{key}"]) if key == "lr" else int(weights[f"meta.{key}"])
            for key in cls._META
        }
        kwargs["channels"] = tuple(int(v) for v in weights["meta.channels"])
        model = cls(**kwargs).initialize(tuple(int(v) for v in weights["meta.image_shape"]))
        for name, tensor in model.params_.items():
            stored = weights[f"param.{name}"]
            if stored.shape != tensor.shape:
                raise ValueError(f"weight {name!r} has shape {stored.shape}, expected {tensor.shape}")
            tensor.data = np.array(stored, dtype=tensor.dtype)
        return model
