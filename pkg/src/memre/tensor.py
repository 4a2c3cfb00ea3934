"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Every value is a :class:`Tensor` wrapping a numpy ``float64`` array. Each
operation computes its result eagerly and, when gradients are enabled and
some input requires them, records a backward closure. The resulting graph
is rebuilt on every forward pass; :func:`backward` walks it once in reverse
topological order and accumulates gradients into the leaves.

Numerically sensitive ops (softmax, logsumexp, softplus, sigmoid) use
max-subtraction / branching so that exponentials of large logits stay
finite.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Sequence

import numpy as np

from .errors import DimensionError, PreconditionError

_node_ids = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Dense float64 value with an optional gradient.

    ``grad`` is populated by :func:`backward` only on leaves created with
    ``requires_grad=True``; intermediate nodes drop their buffers once the
    pass completes. ``node_id`` identifies the node within a trace.
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_node_ids)
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, op={self.op!r})"

    # operator sugar; all real work lives in the module-level functions
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _from_op(data, parents: tuple[Tensor, ...], op: str, backward_fn) -> Tensor:
    out = Tensor(data)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def trace(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` in topological order (parents first)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires-grad leaf reachable from ``loss``."""
    if loss.data.ndim != 0:
        raise PreconditionError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    order = trace(loss)
    _accumulate(loss, np.ones((), dtype=np.float64))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    # drop intermediate buffers; leaves keep theirs
    for node in order:
        if node._parents:
            node.grad = None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"add: {a.shape} vs {b.shape}") from exc

    def back(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.data.shape))

    return _from_op(data, (a, b), "add", back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data - b.data
    except ValueError as exc:
        raise DimensionError(f"sub: {a.shape} vs {b.shape}") from exc

    def back(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _from_op(data, (a, b), "sub", back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"mul: {a.shape} vs {b.shape}") from exc

    def back(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _from_op(data, (a, b), "mul", back)


def neg(a: Tensor) -> Tensor:
    def back(g):
        if a.requires_grad:
            _accumulate(a, -g)

    return _from_op(-a.data, (a,), "neg", back)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(f"matmul inner extents disagree: {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def back(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accumulate(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accumulate(b, _unbroadcast(gb, b.data.shape))

    return _from_op(data, (a, b), "matmul", back)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.data.ndim < 2:
        raise DimensionError(f"transpose needs >=2-d input, got {a.shape}")

    def back(g):
        if a.requires_grad:
            _accumulate(a, np.swapaxes(g, -1, -2))

    return _from_op(np.swapaxes(a.data, -1, -2), (a,), "transpose", back)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w + b`` with ``b`` broadcast over leading axes."""
    return add(matmul(x, w), b)


# ---------------------------------------------------------------------------
# shape surgery


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    data = a.data.reshape(shape)

    def back(g):
        if a.requires_grad:
            _accumulate(a, g.reshape(a.data.shape))

    return _from_op(data, (a,), "reshape", back)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(parts)
    if not parts:
        raise PreconditionError("concat of zero tensors")
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {[p.shape for p in parts]}") from exc
    sizes = [p.data.shape[axis] for p in parts]

    def back(g):
        offset = 0
        for p, size in zip(parts, sizes):
            if p.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(offset, offset + size)
                _accumulate(p, g[tuple(index)])
            offset += size

    return _from_op(data, parts, "concat", back)


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    """Stack two matrices along axis 0, preserving row order."""
    return concat((a, b), axis=0)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice ``[start, start+length)`` along one axis."""
    extent = a.data.shape[axis]
    if start < 0 or length < 0 or start + length > extent:
        raise DimensionError(f"narrow [{start}:{start + length}) out of range for extent {extent}")
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def back(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[index] = g
            _accumulate(a, full)

    return _from_op(a.data[index], (a,), "narrow", back)


def take_rows(a: Tensor, indices) -> Tensor:
    """Gather rows along axis 0; repeated indices accumulate gradient."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise DimensionError("take_rows expects a flat index sequence")
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise DimensionError(f"take_rows index out of range for {a.data.shape[0]} rows")

    def back(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            _accumulate(a, full)

    return _from_op(a.data[idx], (a,), "take_rows", back)


def stack_rows(parts: Sequence[Tensor]) -> Tensor:
    """Stack 1-d tensors of equal length into a matrix."""
    parts = tuple(parts)
    if not parts:
        raise PreconditionError("stack_rows of zero tensors")
    for p in parts:
        if p.data.ndim != 1 or p.data.shape != parts[0].data.shape:
            raise DimensionError("stack_rows needs equal-length vectors")
    data = np.stack([p.data for p in parts], axis=0)

    def back(g):
        for i, p in enumerate(parts):
            if p.requires_grad:
                _accumulate(p, g[i])

    return _from_op(data, parts, "stack_rows", back)


def expand_batch(a: Tensor, n: int) -> Tensor:
    """Tile along a new leading axis; gradient sums back over it."""
    data = np.broadcast_to(a.data, (n,) + a.data.shape).copy()

    def back(g):
        if a.requires_grad:
            _accumulate(a, g.sum(axis=0))

    return _from_op(data, (a,), "expand_batch", back)


# ---------------------------------------------------------------------------
# reductions


def tensor_sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if not a.requires_grad:
            return
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape))
            return
        if not keepdims:
            g = np.expand_dims(g, axis=axis)
        _accumulate(a, np.broadcast_to(g, a.data.shape))

    return _from_op(data, (a,), "sum", back)


def tensor_mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    data = a.data.mean(axis=axis, keepdims=keepdims)

    def back(g):
        if not a.requires_grad:
            return
        scaled = g / count
        if axis is None:
            _accumulate(a, np.broadcast_to(scaled, a.data.shape))
            return
        if not keepdims:
            scaled = np.expand_dims(scaled, axis=axis)
        _accumulate(a, np.broadcast_to(scaled, a.data.shape))

    return _from_op(data, (a,), "mean", back)


def logsumexp_rows(a: Tensor) -> Tensor:
    """Per-column log-sum-exp over the rows of a matrix."""
    if a.data.ndim != 2:
        raise DimensionError(f"logsumexp_rows needs a matrix, got {a.shape}")
    if a.data.shape[0] < 1:
        raise PreconditionError("logsumexp_rows of an empty row set")
    peak = a.data.max(axis=0, keepdims=True)
    shifted = np.exp(a.data - peak)
    total = shifted.sum(axis=0, keepdims=True)
    data = (peak + np.log(total)).reshape(a.data.shape[1])
    weights = shifted / total

    def back(g):
        if a.requires_grad:
            _accumulate(a, g[None, :] * weights)

    return _from_op(data, (a,), "logsumexp_rows", back)


# ---------------------------------------------------------------------------
# nonlinearities


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def back(g):
        if a.requires_grad:
            _accumulate(a, g * y * (1.0 - y))

    return _from_op(y, (a,), "sigmoid", back)


def softplus(a: Tensor) -> Tensor:
    """``ln(1 + e^x)``, computed as ``max(x, 0) + log1p(e^-|x|)``."""
    x = a.data
    y = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def back(g):
        if a.requires_grad:
            s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
            _accumulate(a, g * s)

    return _from_op(y, (a,), "softplus", back)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def back(g):
        if a.requires_grad:
            _accumulate(a, g * (1.0 - y * y))

    return _from_op(y, (a,), "tanh", back)


def relu(a: Tensor) -> Tensor:
    y = np.maximum(a.data, 0.0)

    def back(g):
        if a.requires_grad:
            _accumulate(a, g * (a.data > 0.0))

    return _from_op(y, (a,), "relu", back)


def row_softmax(a: Tensor) -> Tensor:
    """Softmax along the last axis; each row sums to one."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        if a.requires_grad:
            inner = (g * y).sum(axis=-1, keepdims=True)
            _accumulate(a, y * (g - inner))

    return _from_op(y, (a,), "row_softmax", back)


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row (last axis) to zero mean and unit variance."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (x - mu) * inv

    def back(g):
        if a.requires_grad:
            g_mean = g.mean(axis=-1, keepdims=True)
            gy_mean = (g * y).mean(axis=-1, keepdims=True)
            _accumulate(a, inv * (g - g_mean - y * gy_mean))

    return _from_op(y, (a,), "layer_norm", back)
