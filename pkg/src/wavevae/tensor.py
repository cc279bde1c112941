"""Reverse-mode automatic differentiation over numpy arrays.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to one gradient per parent.  Nodes carry a
monotonically increasing creation number, so sorting the reachable nodes by it
gives a valid topological order (parents are always created before children).

Elementwise operations accept operands of equal shape or a scalar operand;
there is no general broadcasting.
"""

from __future__ import annotations

import contextvars
import itertools
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "DivergenceError",
    "precision",
    "get_default_dtype",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "power",
    "exp",
    "log",
    "relu",
    "tanh",
    "clip",
    "tsum",
    "mean",
    "reshape",
    "transpose",
    "concat",
    "pad2d",
    "take",
    "matmul",
    "dense",
    "linear_map",
    "conv2d",
    "upsample2x",
    "dilate2x",
    "avg_pool2d",
    "softmax_cross_entropy",
    "stop_gradient",
    "straight_through",
    "backward",
    "sgd_step",
    "AdamState",
    "adam_step",
    "Adam",
]

_counter = itertools.count()
_default_dtype: contextvars.ContextVar[np.dtype] = contextvars.ContextVar(
    "default_dtype", default=np.dtype(np.float32)
)


class DivergenceError(FloatingPointError):
    """Raised when a loss or gradient stops being finite."""


def get_default_dtype() -> np.dtype:
    return _default_dtype.get()


@contextmanager
def precision(dtype):
    """Temporarily switch the dtype new tensors are created with.

    ``with precision(np.float64): ...`` is the verification mode.
    """
    token = _default_dtype.set(np.dtype(dtype))
    try:
        yield
    finally:
        _default_dtype.reset(token)


class Tensor:
    """N-dimensional array with an optional gradient slot."""

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.array(data, dtype=dtype or get_default_dtype())
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._seq = next(_counter)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _make(data: np.ndarray, parents: Iterable[Tensor], backward_fn, op: str) -> Tensor:
    parents = tuple(parents)
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data)
    out.requires_grad = False
    out.grad = None
    out.op = op
    out._parents = ()
    out._backward = None
    out._seq = next(_counter)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _pair(a, b) -> tuple[Tensor, Tensor]:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum(), dtype=grad.dtype).reshape(shape)


# -- elementwise -------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = _pair(a, b)

    def _back(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _reduce_to(ga, a.shape), _reduce_to(gb, b.shape)

    return _make(a.data / b.data, (a, b), _back, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    if isinstance(exponent, Tensor):
        raise TypeError("power only supports a constant exponent")
    p = float(exponent)
    return _make(
        a.data**p,
        (a,),
        lambda g: (g * p * a.data ** (p - 1),),
        "pow",
    )


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,), "relu")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1 - out * out),), "tanh")


def clip(a, low: float, high: float) -> Tensor:
    """Clamp values; the gradient is passed only where the value is inside."""
    a = as_tensor(a)
    inside = (a.data >= low) & (a.data <= high)
    out = np.clip(a.data, low, high).astype(a.dtype)
    return _make(out, (a,), lambda g: (g * inside,), "clip")


# -- reductions and shape ----------------------------------------------------


def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    out = np.asarray(a.data.sum(axis=axis), dtype=a.dtype)

    def _back(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(a.dtype),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).astype(a.dtype),)

    return _make(out, (a,), _back, "sum")


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return div(tsum(a, axis), float(count))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(
        np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose"
    )


def _getitem(a: Tensor, index) -> Tensor:
    if isinstance(index, Tensor):
        raise TypeError("index with numpy arrays or slices, not tensors")

    def _back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.array(a.data[index]), (a,), _back, "getitem")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def _back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(
        np.concatenate([t.data for t in tensors], axis=axis), tensors, _back, "concat"
    )


def pad2d(a, top: int, bottom: int, left: int, right: int) -> Tensor:
    """Zero padding over the last two axes."""
    a = as_tensor(a)
    widths = [(0, 0)] * (a.ndim - 2) + [(top, bottom), (left, right)]
    h, w = a.shape[-2:]

    def _back(g):
        return (g[..., top : top + h, left : left + w],)

    return _make(np.pad(a.data, widths), (a,), _back, "pad2d")


def take(table, indices) -> Tensor:
    """Row lookup ``table[indices]``; gradients scatter-add back into rows."""
    table = as_tensor(table)
    indices = np.asarray(indices, dtype=np.int64)

    def _back(g):
        full = np.zeros_like(table.data)
        np.add.at(full, indices, g)
        return (full,)

    return _make(table.data[indices], (table,), _back, "take")


# -- linear algebra ----------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return _make(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
        "matmul",
    )


def dense(x, weight, bias=None) -> Tensor:
    """Affine layer ``x @ weight.T + bias`` for ``x`` of shape [N, in]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"dense shape mismatch: {x.shape} with weight {weight.shape}")
    out = x.data @ weight.data.T
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents.append(bias)

    def _back(g):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return _make(out, parents, _back, "dense")


def linear_map(x, left: np.ndarray, right: np.ndarray) -> Tensor:
    """Apply constant matrices on both sides: ``left @ x @ right.T`` over the last two axes."""
    x = as_tensor(x)
    left = np.asarray(left, dtype=x.dtype)
    right = np.asarray(right, dtype=x.dtype)
    if left.shape[1] != x.shape[-2] or right.shape[1] != x.shape[-1]:
        raise ValueError(
            f"linear_map shape mismatch: {left.shape} @ {x.shape} @ {right.shape[::-1]}"
        )
    return _make(
        left @ x.data @ right.T,
        (x,),
        lambda g: (left.T @ g @ right,),
        "linear_map",
    )


# -- convolution and resampling ---------------------------------------------


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """[N, C, Hp, Wp] -> [N*Ho*Wo, C*kh*kw] patch matrix."""
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # N, C, Ho, Wo, kh, kw
    n, c, ho, wo = win.shape[:4]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)


def conv2d(x, kernel, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of [N, C, H, W] input with a [F, C, kh, kw] kernel."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    f, kc, kh, kw = kernel.shape
    if kc != c:
        raise ValueError(f"channel mismatch: input has {c}, kernel expects {kc}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ValueError(f"kernel {kh}x{kw} larger than padded input {h}x{w} (padding {padding})")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    cols = _im2col(xp, kh, kw, stride)
    kmat = kernel.data.reshape(f, -1)
    out = cols @ kmat.T  # N*Ho*Wo, F
    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents.append(bias)
    out = np.ascontiguousarray(out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2))

    def _back(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, f)
        gx = gk = None
        if kernel.requires_grad:
            gk = (g2.T @ cols).reshape(kernel.shape)
        if x.requires_grad:
            gcols = (g2 @ kmat).reshape(n, ho, wo, c, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                        gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            gx = gxp[:, :, padding : padding + h, padding : padding + w]
        grads = [gx, gk]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return _make(out.astype(x.dtype, copy=False), parents, _back, "conv2d")


def upsample2x(x) -> Tensor:
    """Nearest-neighbour upsampling of the last two axes by a factor of two."""
    x = as_tensor(x)
    out = x.data.repeat(2, axis=-2).repeat(2, axis=-1)

    def _back(g):
        s = g.shape
        return (g.reshape(*s[:-2], s[-2] // 2, 2, s[-1] // 2, 2).sum(axis=(-3, -1)),)

    return _make(out, (x,), _back, "upsample2x")


def dilate2x(x) -> Tensor:
    """Insert a zero after every sample of the last two axes (stride-2 zero insertion).

    Followed by a stride-1 convolution this is a stride-2 transposed convolution.
    """
    x = as_tensor(x)
    s = x.shape
    out = np.zeros(s[:-2] + (2 * s[-2], 2 * s[-1]), dtype=x.dtype)
    out[..., ::2, ::2] = x.data
    return _make(out, (x,), lambda g: (g[..., ::2, ::2],), "dilate2x")


def avg_pool2d(x) -> Tensor:
    """2x2 average pooling with stride 2 over the last two axes."""
    x = as_tensor(x)
    s = x.shape
    if s[-2] % 2 or s[-1] % 2:
        raise ValueError(f"avg_pool2d needs even spatial extents, got {s[-2:]}")
    out = x.data.reshape(*s[:-2], s[-2] // 2, 2, s[-1] // 2, 2).mean(axis=(-3, -1))

    def _back(g):
        return (np.repeat(np.repeat(g, 2, axis=-2), 2, axis=-1) * x.dtype.type(0.25),)

    return _make(out.astype(x.dtype), (x,), _back, "avg_pool2d")


# -- losses and gradient control --------------------------------------------


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-softmax probability of the true class."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ValueError(f"expected logits [N, K] for {labels.shape[0]} labels, got {logits.shape}")
    n, k = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsum
    loss = -logp[np.arange(n), labels].mean()

    def _back(g):
        grad = np.exp(logp)
        grad[np.arange(n), labels] -= 1
        return (grad * (g / n),)

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), _back, "cross_entropy")


def stop_gradient(x) -> Tensor:
    """Identity in value; contributes an exactly zero gradient to ``x``."""
    x = as_tensor(x)
    return _make(x.data.copy(), (x,), lambda g: (np.zeros_like(x.data),), "stop_gradient")


def straight_through(continuous, quantized) -> Tensor:
    """Forward value of ``quantized``, gradient routed unchanged to ``continuous``."""
    continuous, quantized = as_tensor(continuous), as_tensor(quantized)
    if continuous.shape != quantized.shape:
        raise ValueError(f"shape mismatch: {continuous.shape} vs {quantized.shape}")
    return continuous + stop_gradient(quantized - continuous)


# -- backward pass -----------------------------------------------------------


@dataclass
class Tape:
    """Nodes reachable from a root, in creation (append) order."""

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def record(cls, root: Tensor) -> "Tape":
        seen: dict[int, Tensor] = {}
        stack = [root]
        while stack:
            node = stack.pop()
            if id(node) in seen or not node.requires_grad:
                continue
            seen[id(node)] = node
            stack.extend(node._parents)
        return cls(sorted(seen.values(), key=lambda t: t._seq))

    def replay(self, root: Tensor, seed: np.ndarray) -> None:
        pending: dict[int, np.ndarray] = {id(root): seed}
        for node in reversed(self.nodes):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = np.asarray(pg, dtype=parent.dtype)
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into ``grad`` of every reachable node."""
    if loss.shape != () and loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    Tape.record(loss).replay(loss, np.ones(loss.shape, dtype=loss.dtype))


# -- optimizers --------------------------------------------------------------


def _check_lr(lr: float) -> None:
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")


def sgd_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], lr: float) -> None:
    _check_lr(lr)
    for p, g in zip(params, grads):
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        p.data -= p.dtype.type(lr) * g


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray | None],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    _check_lr(lr)
    state.t += 1
    c1 = 1 - beta1**state.t
    c2 = 1 - beta2**state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        state.m[i] = beta1 * state.m[i] + (1 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1 - beta2) * g * g
        update = lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + eps)
        p.data -= update.astype(p.dtype)


class Adam:
    """Stateful wrapper around :func:`adam_step` for a fixed parameter list."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        _check_lr(lr)
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState.zeros(self.params)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adam_step(
            self.params,
            [p.grad for p in self.params],
            self.state,
            self.lr,
            self.beta1,
            self.beta2,
            self.eps,
        )
