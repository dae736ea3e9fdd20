"""Reverse-mode automatic differentiation over dense float64 arrays.

Graphs are built define-by-run: every primitive allocates a fresh node and
``backward`` walks the tape once, accumulating gradients by the chain rule.
Sized for the small MLP/GRU/VAE workloads in this package: float64 only,
no fusion, no views, no GPU.  Any non-finite value produced by a forward
or backward pass raises :class:`NonFiniteError` immediately.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np


class NonFiniteError(ArithmeticError):
    """A forward or backward pass produced NaN or Inf."""


def _check_finite(a: np.ndarray, op: str) -> None:
    if not np.isfinite(a).all():
        raise NonFiniteError(f"non-finite values produced by op '{op}'")


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """One node of the compute graph: a value plus a gradient accumulator."""

    __slots__ = ("value", "grad", "op", "_parents", "_vjp", "_param")

    def __init__(self, value, op: str = "leaf", parents: Sequence["Tensor"] = (),
                 vjp: Optional[Callable] = None, param=None):
        self.value = _as_array(value)
        self.grad: Optional[np.ndarray] = None
        self.op = op
        self._parents = tuple(parents)
        self._vjp = vjp
        self._param = param

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.value.shape})"

    # Operator sugar; scalars are promoted to constants.
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, scale(_wrap(other), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other), scale(self, -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __getitem__(self, key):
        return slice_(self, key)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def constant(x) -> Tensor:
    return Tensor(x, op="const")


def _node(op: str, value: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    _check_finite(value, op)
    return Tensor(value, op=op, parents=parents, vjp=vjp)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce gradient g down to `shape` by summing broadcast axes."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    v = a.value @ b.value
    return _node("matmul", v, (a, b),
                 lambda g: (g @ b.value.T, a.value.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    v = a.value + b.value
    return _node("add", v, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    v = a.value * b.value
    return _node("mul", v, (a, b),
                 lambda g: (_unbroadcast(g * b.value, a.shape),
                            _unbroadcast(g * a.value, b.shape)))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; gradient routes to the smaller input (ties to `a`)."""
    take_a = a.value <= b.value
    v = np.where(take_a, a.value, b.value)
    return _node("minimum", v, (a, b),
                 lambda g: (_unbroadcast(g * take_a, a.shape),
                            _unbroadcast(g * (~take_a), b.shape)))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _node("scalar-scale", a.value * s, (a,), lambda g: (g * s,))


def tanh(a: Tensor) -> Tensor:
    v = np.tanh(a.value)
    return _node("tanh", v, (a,), lambda g: (g * (1.0 - v * v),))


def logistic(a: Tensor) -> Tensor:
    v = _sigmoid(a.value)
    return _node("logistic", v, (a,), lambda g: (g * v * (1.0 - v),))


def relu(a: Tensor) -> Tensor:
    v = np.maximum(a.value, 0.0)
    return _node("relu", v, (a,), lambda g: (g * (a.value > 0.0),))


def softplus(a: Tensor) -> Tensor:
    v = _softplus(a.value)
    return _node("softplus", v, (a,), lambda g: (g * _sigmoid(a.value),))


def square(a: Tensor) -> Tensor:
    return _node("square", a.value * a.value, (a,), lambda g: (g * 2.0 * a.value,))


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.log(a.value)
    return _node("log", v, (a,), lambda g: (g / a.value,))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        v = np.exp(a.value)
    return _node("exp", v, (a,), lambda g: (g * v,))


def log_softmax(a: Tensor) -> Tensor:
    """Row-wise log softmax over the last axis."""
    x = a.value
    m = x.max(axis=-1, keepdims=True)
    shifted = x - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True)) + m
    v = x - lse
    p = np.exp(v)

    def vjp(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _node("softmax-log", v, (a,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    v = np.concatenate([t.value for t in tensors], axis=axis)
    sizes = [t.value.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node("concat", v, tensors, vjp)


def slice_(a: Tensor, key) -> Tensor:
    v = a.value[key]

    def vjp(g):
        out = np.zeros_like(a.value)
        out[key] = g
        return (out,)

    return _node("slice", v, (a,), vjp)


def reshape(a: Tensor, shape) -> Tensor:
    v = a.value.reshape(shape)
    return _node("reshape", v, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor) -> Tensor:
    if a.value.ndim != 2:
        raise ValueError("transpose expects a 2-D tensor")
    return _node("transpose", np.ascontiguousarray(a.value.T), (a,),
                 lambda g: (g.T,))


def gather_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Select rows of a 2-D table by integer id; backward scatter-adds."""
    ids = np.asarray(ids)
    v = table.value[ids]

    def vjp(g):
        out = np.zeros_like(table.value)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, table.value.shape[1]))
        return (out,)

    return _node("gather-rows", v, (table,), vjp)


def pick(a: Tensor, idx: np.ndarray) -> Tensor:
    """Per-row scalar gather: out[i] = a[i, idx[i]] for 2-D a."""
    idx = np.asarray(idx)
    rows = np.arange(a.value.shape[0])
    v = a.value[rows, idx]

    def vjp(g):
        out = np.zeros_like(a.value)
        out[rows, idx] = g
        return (out,)

    return _node("pick", v, (a,), vjp)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    v = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _node("sum", np.asarray(v, dtype=np.float64), (a,), vjp)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.value.size if axis is None else a.value.shape[axis]
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def stop_gradient(a: Tensor) -> Tensor:
    return _node("stop-gradient", a.value, (a,), lambda g: (None,))


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------

def _toposort(root: Tensor) -> list:
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Populate gradients of every node (and bound parameter) reachable from root.

    The root must be scalar-valued.  Parameter gradients touched by this
    graph are zeroed before accumulation, so each call stands on its own.
    """
    if root.value.size != 1:
        raise ValueError(f"backward() root must be scalar, got shape {root.value.shape}")
    order = _toposort(root)
    for node in order:
        node.grad = None
        if node._param is not None:
            node._param.grad[...] = 0.0
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node.grad is None:
            continue
        _check_finite(node.grad, node.op)
        if node._param is not None:
            node._param.grad += node.grad
        if node._vjp is None:
            continue
        for parent, g in zip(node._parents, node._vjp(node.grad)):
            if g is None:
                continue
            if parent.grad is None:
                # Copy: vjps may alias their output gradient across parents.
                parent.grad = np.array(g, dtype=np.float64)
            else:
                parent.grad += g


# Numerically stable scalar kernels shared with plain-numpy inference paths.

def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
