"""Minimal reverse-mode autodiff on float64 NumPy arrays.

Define-by-run: while a ``Tape`` is active (as a context manager), every op
whose inputs require gradients appends a node.  ``Tape.backward`` walks the
nodes in reverse creation order -- which is a topological order by
construction -- and accumulates gradients additively into ``Tensor.grad``.
With no active tape the ops are plain NumPy forward math, so inference pays
no bookkeeping.

Tapes are thread-local; independent tapes may run on separate threads but a
single tape must never be shared.
"""

from __future__ import annotations

import threading

import numpy as np

from . import kernels
from .errors import (DisconnectedGraph, EmptyBatch, InvalidConfig,
                     ShapeMismatch)

_state = threading.local()
_debug = False


def set_debug(enabled: bool) -> None:
    """Toggle NaN/Inf screening of every op result (slow; tests only)."""
    global _debug
    _debug = bool(enabled)


def _tape():
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Recorded forward pass; context manager activating the recorder."""

    def __init__(self):
        self._nodes = []        # (output Tensor, backward closure)
        self._produced = set()  # id() of every output, for connectivity check

    def __enter__(self):
        if not hasattr(_state, "stack"):
            _state.stack = []
        _state.stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.stack.pop()
        return False

    def __len__(self):
        return len(self._nodes)

    def backward(self, loss: "Tensor") -> None:
        """Seed d(loss)/d(loss)=1 and accumulate grads into all inputs.

        Grads of the tape's own intermediate outputs are cleared first, so
        repeated calls are independent; leaf tensors keep accumulating.
        """
        if loss.data.size != 1:
            raise ShapeMismatch(f"loss must be scalar, got shape {loss.shape}")
        if id(loss) not in self._produced:
            raise DisconnectedGraph("loss tensor was not produced on this tape")
        for out, _ in self._nodes:
            out.grad = None
        loss.grad = np.ones_like(loss.data)
        for out, fn in reversed(self._nodes):
            if out.grad is not None:
                fn(out.grad)


def backward(tape: Tape, loss: "Tensor") -> None:
    tape.backward(loss)


def zero_grad(params) -> None:
    for p in params:
        p.grad = None


class Tensor:
    """Dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise InvalidConfig("tensor values must be finite")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    # -- basic introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return _result(self.data, False)

    def __repr__(self):
        return f"Tensor({self.data!r}, requires_grad={self.requires_grad})"

    # -- operator sugar ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, *shape)


def _result(data, requires_grad):
    """Internal fast constructor; skips the finite check unless debugging."""
    t = Tensor.__new__(Tensor)
    t.data = data
    t.requires_grad = requires_grad
    t.grad = None
    if _debug and not np.all(np.isfinite(data)):
        raise InvalidConfig("non-finite value produced by an op")
    return t


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _record(out, fn):
    tape = _tape()
    if tape is not None and out.requires_grad:
        tape._nodes.append((out, fn))
        tape._produced.add(id(out))


def _acc(t, g):
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g, shape):
    """Sum g over the axes that broadcasting expanded, back to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise arithmetic --------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _result(a.data + b.data, a.requires_grad or b.requires_grad)

    def fn(g):
        _acc(a, _unbroadcast(g, a.data.shape))
        _acc(b, _unbroadcast(g, b.data.shape))

    _record(out, fn)
    return out


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _result(a.data - b.data, a.requires_grad or b.requires_grad)

    def fn(g):
        _acc(a, _unbroadcast(g, a.data.shape))
        _acc(b, _unbroadcast(-g, b.data.shape))

    _record(out, fn)
    return out


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _result(a.data * b.data, a.requires_grad or b.requires_grad)

    def fn(g):
        _acc(a, _unbroadcast(g * b.data, a.data.shape))
        _acc(b, _unbroadcast(g * a.data, b.data.shape))

    _record(out, fn)
    return out


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _result(a.data / b.data, a.requires_grad or b.requires_grad)

    def fn(g):
        _acc(a, _unbroadcast(g / b.data, a.data.shape))
        _acc(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    _record(out, fn)
    return out


def power(a, exponent):
    a = as_tensor(a)
    p = float(exponent)
    out = _result(a.data ** p, a.requires_grad)

    def fn(g):
        _acc(a, g * p * a.data ** (p - 1.0))

    _record(out, fn)
    return out


def sqrt(a):
    a = as_tensor(a)
    root = np.sqrt(a.data)
    out = _result(root, a.requires_grad)

    def fn(g):
        _acc(a, g * 0.5 / root)

    _record(out, fn)
    return out


def exp(a):
    a = as_tensor(a)
    e = np.exp(a.data)
    out = _result(e, a.requires_grad)

    def fn(g):
        _acc(a, g * e)

    _record(out, fn)
    return out


def log(a):
    a = as_tensor(a)
    out = _result(np.log(a.data), a.requires_grad)

    def fn(g):
        _acc(a, g / a.data)

    _record(out, fn)
    return out


def _sigmoid(x):
    # Piecewise form avoids overflow in exp for large |x|.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    a = as_tensor(a)
    s = _sigmoid(a.data)
    out = _result(s, a.requires_grad)

    def fn(g):
        # s(x)*(1-s(x)) computed as s(x)*s(-x): same value, no cancellation
        # at saturation, and bitwise symmetric about x = 0.
        _acc(a, g * s * _sigmoid(-a.data))

    _record(out, fn)
    return out


# -- reductions and shape ops -------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = _result(a.data.sum(axis=axis, keepdims=keepdims), a.requires_grad)

    def fn(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        _acc(a, np.broadcast_to(gg, a.data.shape))

    _record(out, fn)
    return out


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = _result(a.data.mean(axis=axis, keepdims=keepdims), a.requires_grad)
    count = a.data.size / max(out.data.size, 1)

    def fn(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        _acc(a, np.broadcast_to(gg, a.data.shape) / count)

    _record(out, fn)
    return out


def reshape(a, *shape):
    a = as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    out = _result(a.data.reshape(shape), a.requires_grad)

    def fn(g):
        _acc(a, g.reshape(a.data.shape))

    _record(out, fn)
    return out


def flatten(a):
    """Collapse every axis but the first (the batch axis)."""
    a = as_tensor(a)
    return reshape(a, (a.data.shape[0], -1))


# -- neural-network ops --------------------------------------------------------

def linear(x, weight):
    """x[N,D] @ weight[K,D].T -> [N,K]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeMismatch(
            f"linear expects [N,D] and [K,D], got {x.shape} and {weight.shape}")
    out = _result(x.data @ weight.data.T,
                  x.requires_grad or weight.requires_grad)

    def fn(g):
        _acc(x, g @ weight.data)
        _acc(weight, g.T @ x.data)

    _record(out, fn)
    return out


def conv2d(x, weight, stride: int = 1, padding: int = 0):
    """Cross-correlate x[N,C,H,W] with weight[F,C,kh,kw]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeMismatch("conv2d expects 4-d input and weight")
    n, c, h, w = x.shape
    f, cw, kh, kw = weight.shape
    if cw != c:
        raise ShapeMismatch(f"input has {c} channels but weight expects {cw}")
    if kh < 1 or kw < 1:
        raise InvalidConfig("kernel must have positive size")
    if stride < 1 or padding < 0:
        raise InvalidConfig("stride must be >=1 and padding >=0")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeMismatch("kernel larger than padded input")
    xd = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(weight.data)
    out = _result(kernels.conv2d_forward(xd, wd, stride, padding),
                  x.requires_grad or weight.requires_grad)

    def fn(g):
        g = np.ascontiguousarray(g)
        if x.requires_grad:
            _acc(x, kernels.conv2d_grad_input(g, wd, stride, padding, h, w))
        if weight.requires_grad:
            _acc(weight, kernels.conv2d_grad_weight(g, xd, stride, padding,
                                                    kh, kw))

    _record(out, fn)
    return out


def avg_pool2d(x, k: int):
    """Non-overlapping k x k average pooling; H and W must divide by k."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeMismatch("avg_pool2d expects a 4-d input")
    n, c, h, w = x.shape
    if k < 1:
        raise InvalidConfig("pool size must be positive")
    if h % k or w % k:
        raise InvalidConfig(f"spatial size {(h, w)} not divisible by {k}")
    blocks = reshape(x, (n, c, h // k, k, w // k, k))
    return tmean(blocks, axis=(3, 5))


def heaviside_sg(v, alpha: float = 4.0):
    """Spike nonlinearity: forward is the exact step (v > 0, strict).

    Backward substitutes the logistic surrogate derivative
    alpha * s(alpha*v) * (1 - s(alpha*v)), which is positive everywhere and
    symmetric about v = 0.
    """
    v = as_tensor(v)
    if alpha <= 0:
        raise InvalidConfig("surrogate slope alpha must be positive")
    out = _result((v.data > 0.0).astype(np.float64), v.requires_grad)

    def fn(g):
        s = _sigmoid(alpha * v.data)
        _acc(v, g * alpha * s * _sigmoid(-alpha * v.data))

    _record(out, fn)
    return out


def logistic_spike(v, alpha: float = 4.0):
    """Smoothed stand-in for heaviside_sg with a genuinely smooth forward.

    Used by gradient oracles: its finite differences are meaningful, and its
    analytic backward matches heaviside_sg's surrogate exactly.
    """
    v = as_tensor(v)
    if alpha <= 0:
        raise InvalidConfig("surrogate slope alpha must be positive")
    return sigmoid(mul(v, alpha))


def batch_stats(x):
    """Per-channel mean and biased variance over batch and spatial axes.

    x has layout [N, C, ...]; returns ([C], [C]).  Differentiable (built
    from primitive ops).
    """
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeMismatch("batch_stats expects at least [N, C]")
    if x.shape[0] == 0:
        raise EmptyBatch("batch_stats needs at least one sample")
    axes = (0,) + tuple(range(2, x.ndim))
    mean = tmean(x, axis=axes)
    centered = sub(x, channel_view(mean, x.ndim))
    var = tmean(mul(centered, centered), axis=axes)
    return mean, var


def channel_view(t, ndim: int):
    """Reshape a [C] vector so it broadcasts along axis 1 of an ndim array."""
    t = as_tensor(t)
    return reshape(t, (1, t.data.shape[0]) + (1,) * (ndim - 2))
