"""Reverse-mode automatic differentiation over dense numpy arrays.

Only the operations the encoder, its heads and the losses need are provided.
Each operation returns a new :class:`Tensor` that remembers its inputs and a
closure mapping the output gradient to input gradients. :func:`backward`
records those nodes on a :class:`Tape` in topological order and replays the
chain rule in reverse.

Broadcasting is deliberately limited: a tensor may be combined with a Python
scalar, and :func:`add_bias` adds a vector along the last axis. Everything
else requires equal shapes.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError, ParameterError

DEFAULT_DTYPE = np.float32

_grad_mode = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_grad_mode, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording on the current thread (evaluation passes)."""
    previous = is_grad_enabled()
    _grad_mode.enabled = False
    try:
        yield
    finally:
        _grad_mode.enabled = previous


class Tensor:
    """Dense array with an optional gradient and a link to the op that made it."""

    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            if isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating):
                dtype = data.dtype
            else:
                dtype = DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.parents: tuple = ()
        self.backward_fn: Optional[Callable] = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> "Tape":
        return backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    out.op = op
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
    return out


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# Tape and backward pass
# ---------------------------------------------------------------------------


class Tape:
    """Recorded operations reachable from a root, inputs before outputs."""

    def __init__(self, nodes: list):
        self.nodes = nodes

    @classmethod
    def record(cls, root: Tensor) -> "Tape":
        order = []
        seen = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node.parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def replay(self, root: Tensor, seed: np.ndarray) -> None:
        pending = {id(root): seed}
        for node in reversed(self.nodes):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.backward_fn is None:
                g = g.astype(node.dtype, copy=False)
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg


def backward(loss: Tensor) -> Tape:
    """Populate ``.grad`` on every leaf reachable from the scalar ``loss``.

    Gradients accumulate across calls; zero them between optimizer steps.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor requiring grad")
    tape = Tape.record(loss)
    tape.replay(loss, np.ones_like(loss.data))
    return tape


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return _result(a.data + b, (a,), lambda g: (g,), "add_scalar")
    _check_same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return _result(a.data - b, (a,), lambda g: (g,), "sub_scalar")
    _check_same_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return scale(a, b)
    _check_same_shape(a, b, "mul")
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(a.data * a.dtype.type(c), (a,), lambda g: (g * g.dtype.type(c),), "scale")


def elementwise(op: str, a: Tensor, b) -> Tensor:
    """Dispatch by name: ``add``, ``sub``, ``mul`` or ``scale``."""
    ops = {"add": add, "sub": sub, "mul": mul}
    if op == "scale":
        if isinstance(b, Tensor):
            raise DimensionError("scale takes a scalar factor")
        return scale(a, b)
    if op not in ops:
        raise ParameterError(f"unknown elementwise op {op!r}")
    return ops[op](a, b)


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a vector along the last axis of ``x``."""
    if bias.ndim != 1 or bias.shape[0] != x.shape[-1]:
        raise DimensionError(f"add_bias: bias {bias.shape} does not match last axis of {x.shape}")
    n = bias.shape[0]

    def back(g):
        return g, g.reshape(-1, n).sum(axis=0)

    return _result(x.data + bias.data, (x, bias), back, "add_bias")


def sum_all(x: Tensor) -> Tensor:
    return _result(np.sum(x.data, dtype=x.dtype), (x,), lambda g: (np.full(x.shape, g, dtype=x.dtype),), "sum")


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    return _result(
        np.asarray(np.mean(x.data), dtype=x.dtype),
        (x,),
        lambda g: (np.full(x.shape, g / n, dtype=x.dtype),),
        "mean",
    )


# ---------------------------------------------------------------------------
# Shape manipulation
# ---------------------------------------------------------------------------


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    original = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(original),), "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),), "transpose")


def select(x: Tensor, index: int, axis: int) -> Tensor:
    """Pick one slice along ``axis`` (the axis is dropped), e.g. the [CLS] row."""
    axis = axis % x.ndim
    if not -x.shape[axis] <= index < x.shape[axis]:
        raise IndexError(f"select: index {index} out of range for axis of size {x.shape[axis]}")
    slicer = [slice(None)] * x.ndim
    slicer[axis] = index
    slicer = tuple(slicer)

    def back(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[slicer] = g
        return (full,)

    return _result(x.data[slicer], (x,), back, "select")


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------


def _swap_last(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``a`` may carry leading batch axes. ``b`` is either a plain matrix shared
    across the batch, or carries exactly the same batch axes as ``a``.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs at least 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch axes differ, {a.shape} x {b.shape}")

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = g @ _swap_last(b.data)
        if b.requires_grad:
            if b.ndim == 2:
                k, n = b.shape
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = _swap_last(a.data) @ g
        return ga, gb

    return _result(a.data @ b.data, (a, b), back, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return add_bias(matmul(x, weight), bias)


# ---------------------------------------------------------------------------
# Nonlinearities and normalization
# ---------------------------------------------------------------------------


def _softmax_array(x: np.ndarray, axis: int) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax(x: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Max-shifted softmax.

    Where ``mask`` (broadcastable boolean array) is False the input is
    replaced by -inf, so those entries get exactly zero probability. A slice
    with every entry masked has no defined distribution and yields NaN.
    """
    z = x.data
    if mask is not None:
        z = np.where(mask, z, -np.inf).astype(x.dtype, copy=False)
    with np.errstate(invalid="ignore"):
        s = _softmax_array(z, axis)

    def back(g):
        return (s * (g - np.sum(g * s, axis=axis, keepdims=True)),)

    return _result(s, (x,), back, "softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, epsilon: float = 1e-5) -> Tensor:
    """Normalize over the last axis with population variance, then scale and shift."""
    if epsilon <= 0:
        raise ParameterError("layer_norm epsilon must be positive")
    h = x.shape[-1]
    if gain.shape != (h,) or bias.shape != (h,):
        raise DimensionError(f"layer_norm: gain/bias must have shape ({h},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(epsilon))
    xhat = centered * inv

    def back(g):
        flat_g = g.reshape(-1, h)
        g_gain = (flat_g * xhat.reshape(-1, h)).sum(axis=0)
        g_bias = flat_g.sum(axis=0)
        dxhat = g * gain.data
        gx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, g_gain, g_bias

    return _result(xhat * gain.data + bias.data, (x, gain, bias), back, "layer_norm")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh approximation of GELU."""
    d = x.data
    c = x.dtype.type(_GELU_C)
    k = x.dtype.type(0.044715)
    t = np.tanh(c * (d + k * d**3))
    half = x.dtype.type(0.5)

    def back(g):
        dt = (1 - t * t) * c * (1 + 3 * k * d * d)
        return (g * (half * (1 + t) + half * d * dt),)

    return _result(half * d * (1 + t), (x,), back, "gelu")


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table``; the backward pass scatter-adds into those rows."""
    ids = np.asarray(ids, dtype=np.int64)
    vocab, width = table.shape
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        bad = ids[(ids < 0) | (ids >= vocab)].ravel()[0]
        raise IndexError(f"id {int(bad)} outside table of {vocab} rows")

    def back(g):
        full = np.zeros(table.shape, dtype=g.dtype)
        np.add.at(full, ids.ravel(), g.reshape(-1, width))
        return (full,)

    return _result(table.data[ids], (table,), back, "embedding")


def dropout(x: Tensor, p: float, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout. Identity in evaluation mode or when ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ParameterError("dropout in training mode needs a seeded generator")
    keep = (rng.random(x.shape) >= p).astype(x.dtype)
    keep *= x.dtype.type(1.0 / (1.0 - p))
    return _result(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def log_softmax_array(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def cross_entropy_weighted(logits: Tensor, labels, class_weights: Optional[Sequence[float]] = None) -> Tensor:
    """Mean over examples of ``w[label] * -log softmax(logits)[label]``."""
    if logits.ndim != 2:
        raise DimensionError(f"logits must be [N, C], got {logits.shape}")
    n, c = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"label outside [0, {c})")
    if class_weights is None:
        weights = np.ones(c, dtype=logits.dtype)
    else:
        weights = np.asarray(class_weights, dtype=logits.dtype)
        if weights.shape != (c,):
            raise DimensionError(f"need {c} class weights, got {weights.shape}")
        if np.any(weights <= 0):
            raise ParameterError("class weights must be positive")
    logp = log_softmax_array(logits.data)
    rows = np.arange(n)
    w = weights[labels]
    loss = np.asarray(-(w * logp[rows, labels]).sum() / n, dtype=logits.dtype)

    def back(g):
        grad = np.exp(logp)
        grad[rows, labels] -= 1
        grad *= (w * (g / n))[:, None]
        return (grad.astype(logits.dtype, copy=False),)

    return _result(loss, (logits,), back, "cross_entropy")


def mse_loss(pred: Tensor, target) -> Tensor:
    target = np.asarray(target, dtype=pred.dtype)
    if pred.ndim != 1 or target.shape != pred.shape:
        raise DimensionError(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    n = pred.shape[0]
    resid = pred.data - target
    loss = np.asarray((resid * resid).sum() / n, dtype=pred.dtype)
    return _result(loss, (pred,), lambda g: (resid * (2 * g / n),), "mse")


# ---------------------------------------------------------------------------
# Finite-difference checking
# ---------------------------------------------------------------------------


def numerical_gradient(fn: Callable[[], Tensor], target: Tensor, eps: float = 1e-3) -> np.ndarray:
    """Central differences of scalar ``fn()`` with respect to ``target.data``."""
    grad = np.zeros(target.shape, dtype=np.float64)
    flat = target.data.reshape(-1)
    out = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(fn().data)
            flat[i] = orig - eps
            down = float(fn().data)
            flat[i] = orig
            out[i] = (up - down) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error, ``|a - n| / max(|a|, |n|)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def gradcheck(fn: Callable[[], Tensor], inputs: Iterable[Tensor], eps: float = 1e-3) -> float:
    """Worst relative error between backward() and central differences over ``inputs``."""
    inputs = list(inputs)
    for t in inputs:
        t.zero_grad()
    backward(fn())
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros(t.shape)
        worst = max(worst, relative_error(analytic, numerical_gradient(fn, t, eps)))
    return worst
