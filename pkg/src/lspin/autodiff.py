"""Small dense-tensor engine with tape-based reverse-mode differentiation.

Only the operations needed by the gating and prediction networks are
provided. Everything runs in float64 on numpy arrays.

Usage::

    w = Tensor(np.ones((3, 1)), requires_grad=True)
    with Tape() as tape:
        loss = (x @ w).square().mean()
    (dw,) = tape.gradient(loss, [w])
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

LEAKY_SLOPE = 0.01
BN_EPS = 1e-5
BN_MOMENTUM = 0.9


class ShapeError(ValueError):
    pass


class BatchTooSmallError(ValueError):
    pass


class EvaluationError(FloatingPointError):
    pass


class Activation(str, Enum):
    IDENTITY = "identity"
    TANH = "tanh"
    RELU = "relu"
    LEAKY_RELU = "leaky-relu"


_state = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Ordered record of primitive ops; backward walks it in reverse."""

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        if not hasattr(_state, "stack"):
            _state.stack = []
        _state.stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.stack.pop()
        return False

    def record(self, out: "Tensor", inputs: tuple["Tensor", ...], vjp: Callable) -> None:
        self.nodes.append((out, inputs, vjp))

    def gradient(self, loss: "Tensor", wrt: Sequence["Tensor"]) -> list[np.ndarray]:
        """Gradients of a scalar ``loss`` with respect to each tensor in ``wrt``."""
        if loss.data.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        # recording order is a topological order, so reversing it is enough
        for out, inputs, vjp in reversed(self.nodes):
            g = grads.pop(id(out), None) if not _is_wanted(out, wrt) else grads.get(id(out))
            if g is None:
                continue
            for inp, gi in zip(inputs, vjp(g)):
                if gi is None or not inp.requires_grad:
                    continue
                gi = _unbroadcast(gi, inp.data.shape)
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return [grads.get(id(t), np.zeros_like(t.data)) for t in wrt]


def _is_wanted(t: "Tensor", wrt: Sequence["Tensor"]) -> bool:
    return any(t is w for w in wrt)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


class Tensor:
    """A float64 array that can take part in a recorded computation."""

    __slots__ = ("data", "requires_grad")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def square(self):
        return square(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def record_op(data: np.ndarray, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, vjp)
    return out


# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record_op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record_op(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return record_op(out, (a, b), lambda g: (g / b.data, -g * out / b.data))


def square(a) -> Tensor:
    a = as_tensor(a)
    return record_op(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return record_op(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return record_op(np.log(a.data), (a,), lambda g: (g / a.data,))


# reductions and shape


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.data.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return record_op(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), vjp)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return record_op(a.data.T, (a,), lambda g: (g.T,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return record_op(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def affine_forward(x, weights, bias) -> Tensor:
    """``x @ weights + bias`` with the bias broadcast over rows."""
    x, weights, bias = as_tensor(x), as_tensor(weights), as_tensor(bias)
    if x.data.ndim != 2 or weights.data.ndim != 2:
        raise ShapeError("affine_forward expects 2-d input and weights")
    if x.shape[1] != weights.shape[0] or bias.data.reshape(-1).shape[0] != weights.shape[1]:
        raise ShapeError(
            f"affine shapes disagree: input {x.shape}, weights {weights.shape}, bias {bias.shape}"
        )
    b = bias.data.reshape(1, -1)
    out = x.data @ weights.data + b
    bshape = bias.data.shape

    def vjp(g):
        gx = g @ weights.data.T if x.requires_grad else None
        return gx, x.data.T @ g, g.sum(axis=0).reshape(bshape)

    return record_op(out, (x, weights, bias), vjp)


# activations


def apply_activation(x, act: Activation | str, slope: float = LEAKY_SLOPE) -> Tensor:
    x = as_tensor(x)
    act = Activation(act)
    if act is Activation.IDENTITY:
        return x
    if act is Activation.TANH:
        out = np.tanh(x.data)
        return record_op(out, (x,), lambda g: (g * (1.0 - out * out),))
    if act is Activation.RELU:
        mask = x.data > 0
        return record_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))
    mask = x.data > 0
    scale = np.where(mask, 1.0, slope)
    return record_op(x.data * scale, (x,), lambda g: (g * scale,))


def clamp01(x) -> Tensor:
    """max(0, min(1, x)); derivative 1 strictly inside (0, 1), else 0."""
    x = as_tensor(x)
    inside = (x.data > 0.0) & (x.data < 1.0)
    return record_op(np.clip(x.data, 0.0, 1.0), (x,), lambda g: (g * inside,))


# error function

_TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)
_SERIES_LIMIT = 3.0
_SATURATION = 6.0


_SERIES_COEF = np.array(
    [(-1.0) ** n / (math.factorial(n) * (2 * n + 1)) for n in range(64)]
)


def _erf_series(x: np.ndarray) -> np.ndarray:
    # Maclaurin series in Horner form, truncated once x^2n / n! < 1e-17
    x2 = x * x
    peak = float(x2.max()) if x2.size else 0.0
    n_terms = 8
    while n_terms < len(_SERIES_COEF) and (
        n_terms * math.log(max(peak, 1e-300)) - math.lgamma(n_terms + 1) > math.log(1e-17)
    ):
        n_terms += 1
    total = np.full_like(x, _SERIES_COEF[n_terms - 1])
    for c in _SERIES_COEF[n_terms - 2 :: -1]:
        total *= x2
        total += c
    return _TWO_OVER_SQRT_PI * x * total


def _erfc_contfrac(x: np.ndarray) -> np.ndarray:
    # Laplace continued fraction, evaluated bottom-up; valid for x >= 3
    frac = np.zeros_like(x)
    for k in range(80, 0, -1):
        frac = (k / 2.0) / (x + frac)
    return np.exp(-x * x) / (math.sqrt(math.pi) * (x + frac))


def erf_eval(x) -> np.ndarray | float:
    """Gauss error function, accurate to ~1e-15 absolute; exactly +-1 for |x| >= 6."""
    scalar = np.ndim(x) == 0
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    out = np.empty_like(x)
    small = ax <= _SERIES_LIMIT
    mid = (~small) & (ax < _SATURATION)
    if small.any():
        out[small] = _erf_series(x[small])
    if mid.any():
        out[mid] = np.sign(x[mid]) * (1.0 - _erfc_contfrac(ax[mid]))
    big = ax >= _SATURATION
    out[big] = np.sign(x[big])
    return float(out) if scalar else out


def erf(x) -> Tensor:
    x = as_tensor(x)
    return record_op(
        np.asarray(erf_eval(x.data)),
        (x,),
        lambda g: (g * _TWO_OVER_SQRT_PI * np.exp(-x.data * x.data),),
    )


# losses


def softmax_cross_entropy(logits, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of integer ``labels`` under softmax(logits)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n = logits.shape[0]
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    loss = -logp[np.arange(n), labels].mean()

    def vjp(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (g * p / n,)

    return record_op(np.asarray(loss), (logits,), vjp)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


# batch normalization


@dataclass
class BatchNormState:
    """Learnable scale/shift plus running moments for one layer."""

    width: int
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS
    gamma: Tensor = field(init=False)
    beta: Tensor = field(init=False)
    running_mean: np.ndarray = field(init=False)
    running_var: np.ndarray = field(init=False)

    def __post_init__(self):
        self.gamma = Tensor(np.ones((1, self.width)), requires_grad=True)
        self.beta = Tensor(np.zeros((1, self.width)), requires_grad=True)
        self.running_mean = np.zeros((1, self.width))
        self.running_var = np.ones((1, self.width))


def batch_norm(x, state: BatchNormState, mode: str = "train") -> Tensor:
    x = as_tensor(x)
    gamma, beta = state.gamma, state.beta
    if mode == "eval":
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (x.data - state.running_mean) * inv
        scale = gamma.data * inv
        return record_op(
            xhat * gamma.data + beta.data,
            (x, gamma, beta),
            lambda g: (g * scale, (g * xhat).sum(0, keepdims=True), g.sum(0, keepdims=True)),
        )
    if mode != "train":
        raise ValueError(f"unknown batch-norm mode {mode!r}")
    n = x.shape[0]
    if n < 2:
        raise BatchTooSmallError("batch norm in train mode needs at least 2 rows")
    mean = x.data.mean(axis=0, keepdims=True)
    var = x.data.var(axis=0, keepdims=True)
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mean) * inv
    m = state.momentum
    state.running_mean = m * state.running_mean + (1.0 - m) * mean
    state.running_var = m * state.running_var + (1.0 - m) * var

    def vjp(g):
        dxhat = g * gamma.data
        dx = inv / n * (
            n * dxhat - dxhat.sum(0, keepdims=True) - xhat * (dxhat * xhat).sum(0, keepdims=True)
        )
        return dx, (g * xhat).sum(0, keepdims=True), g.sum(0, keepdims=True)

    return record_op(xhat * gamma.data + beta.data, (x, gamma, beta), vjp)


# gradient checking


def finite_diff_check(
    loss_fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5
) -> float:
    """Largest relative disagreement between tape gradients and central differences.

    The error for each parameter tensor is ``|a - c| / (|a| + |c| + 1e-12)``
    with Euclidean norms over the tensor's entries; the max over tensors is
    returned. ``loss_fn`` must be deterministic.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if not params:
        return 0.0
    with Tape() as tape:
        loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise EvaluationError("loss is not finite")
    analytic = tape.gradient(loss, params)
    worst = 0.0
    for p, a in zip(params, analytic):
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = loss_fn().item()
            flat[k] = orig - h
            down = loss_fn().item()
            flat[k] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise EvaluationError("loss is not finite under perturbation")
            numeric.reshape(-1)[k] = (up - down) / (2.0 * h)
        err = np.linalg.norm(a - numeric) / (np.linalg.norm(a) + np.linalg.norm(numeric) + 1e-12)
        worst = max(worst, float(err))
    return worst
