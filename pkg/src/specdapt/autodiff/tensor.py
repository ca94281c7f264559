"""Tensor-level reverse-mode automatic differentiation over numpy arrays.

Every op builds an output :class:`Tensor` holding its parents and a closure
that pushes the output gradient back into them. ``Tensor.backward`` walks the
graph in reverse topological order. All values are float64 and every op
checks its output for NaN/Inf.
"""

from __future__ import annotations

import numpy as np

from specdapt.errors import NonFiniteError, ValidationError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, op="leaf", parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf that requires it."""
        if grad is None:
            if self.data.size != 1:
                raise ValidationError(f"backward() without a seed gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topological(self)
        for node in order:
            if node._backward is not None:
                node.grad = None
        self.grad = np.asarray(grad, dtype=np.float64).reshape(self.shape).copy()
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar; all dispatch to the functions below
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def _topological(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make(data, parents, backward, op) -> Tensor:
    """Wrap an op result; parents and closure are kept only if a gradient can flow."""
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"op {op!r} produced non-finite values")
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, op, tuple(parents), backward)
    return Tensor(data, False, op)


def accumulate(t: Tensor, g):
    if not t.requires_grad:
        return
    if g.shape != t.data.shape:
        g = unbroadcast(g, t.data.shape)
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        accumulate(a, g)
        accumulate(b, g)

    return make(a.data + b.data, (a, b), backward, "add")


def neg(a) -> Tensor:
    def backward(g):
        accumulate(a, -g)

    return make(-a.data, (a,), backward, "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        accumulate(a, g * b.data)
        accumulate(b, g * a.data)

    return make(a.data * b.data, (a, b), backward, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    def backward(g):
        accumulate(a, g * c)

    return make(a.data * c, (a,), backward, "scale")


def tsum(a: Tensor, axis=None) -> Tensor:
    def backward(g):
        if axis is None:
            accumulate(a, np.broadcast_to(g, a.shape))
        else:
            accumulate(a, np.broadcast_to(np.expand_dims(g, axis), a.shape))

    return make(np.sum(a.data, axis=axis), (a,), backward, "sum")


def tmean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis), 1.0 / n)


# ---------------------------------------------------------------- shape ops


def reshape(a: Tensor, shape) -> Tensor:
    def backward(g):
        accumulate(a, g.reshape(a.shape))

    return make(a.data.reshape(shape), (a,), backward, "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        accumulate(a, g.transpose(inverse))

    return make(a.data.transpose(axes), (a,), backward, "transpose")


def broadcast_to(a: Tensor, shape) -> Tensor:
    def backward(g):
        accumulate(a, unbroadcast(g, a.shape))

    return make(np.broadcast_to(a.data, shape).copy(), (a,), backward, "broadcast")


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            accumulate(t, piece)

    return make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward, "concat")


def getitem(a: Tensor, idx) -> Tensor:
    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        accumulate(a, full)

    return make(a.data[idx], (a,), backward, "getitem")


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """Batched ``a @ b`` for operands of rank >= 2 (numpy broadcasting over batch dims)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValidationError("matmul operands must have rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ValidationError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def backward(g):
        if a.requires_grad:
            accumulate(a, g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            accumulate(b, np.swapaxes(a.data, -1, -2) @ g)

    return make(a.data @ b.data, (a, b), backward, "matmul")
