"""Tape-free reverse-mode autodiff over numpy arrays.

Each op returns a :class:`Tensor` holding its parents and a closure that
pushes the output gradient back to them. ``backward`` walks the graph in
reverse topological order. Only the handful of ops the fusion network needs
are provided.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.data.shape})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
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
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(_lift(other), -1.0))

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _needs(*ts):
    return any(t.requires_grad for t in ts)


def constant(x) -> Tensor:
    return Tensor(x)


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return Tensor(a.data + b.data, _needs(a, b), (a, b), back)


def scale(a, c: float) -> Tensor:
    a = _lift(a)

    def back(g):
        if a.requires_grad:
            a._accumulate(g * c)

    return Tensor(a.data * c, a.requires_grad, (a,), back)


def matmul(a, b) -> Tensor:
    """``a @ b`` with numpy broadcasting over leading batch axes."""
    a, b = _lift(a), _lift(b)

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return Tensor(a.data @ b.data, _needs(a, b), (a, b), back)


def tanh(a) -> Tensor:
    a = _lift(a)
    out = np.tanh(a.data)

    def back(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - out * out))

    return Tensor(out, a.requires_grad, (a,), back)


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = _lift(a)

    def back(g):
        if a.requires_grad:
            a._accumulate(np.swapaxes(g, -1, -2))

    return Tensor(np.swapaxes(a.data, -1, -2), a.requires_grad, (a,), back)


def softmax(a, axis: int = -1) -> Tensor:
    a = _lift(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        if a.requires_grad:
            a._accumulate(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return Tensor(out, a.requires_grad, (a,), back)


def mean(a, axis: int) -> Tensor:
    a = _lift(a)
    n = a.shape[axis]

    def back(g):
        if a.requires_grad:
            a._accumulate(np.repeat(np.expand_dims(g, axis), n, axis=axis) / n)

    return Tensor(a.data.mean(axis=axis), a.requires_grad, (a,), back)


def concat(parts, axis: int = -1) -> Tensor:
    parts = [_lift(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        for p, gp in zip(parts, np.split(g, splits, axis=axis)):
            if p.requires_grad:
                p._accumulate(gp)

    return Tensor(np.concatenate([p.data for p in parts], axis=axis), _needs(*parts), tuple(parts), back)


def stack(parts, axis: int = 1) -> Tensor:
    parts = [_lift(p) for p in parts]

    def back(g):
        for k, p in enumerate(parts):
            if p.requires_grad:
                p._accumulate(np.take(g, k, axis=axis))

    return Tensor(np.stack([p.data for p in parts], axis=axis), _needs(*parts), tuple(parts), back)


def where_rows(keep, a, b) -> Tensor:
    """Row ``i`` from ``a`` where ``keep[i]`` else from ``b`` (a selection, not a blend)."""
    a, b = _lift(a), _lift(b)
    keep = np.asarray(keep, dtype=bool)
    sel = keep.reshape((-1,) + (1,) * (a.data.ndim - 1))

    def back(g):
        if a.requires_grad:
            a._accumulate(np.where(sel, g, 0.0))
        if b.requires_grad:
            b._accumulate(np.where(sel, 0.0, g))

    return Tensor(np.where(sel, a.data, b.data), _needs(a, b), (a, b), back)


def take_rows(a, idx) -> Tensor:
    a = _lift(a)
    idx = np.asarray(idx, dtype=np.int64)

    def back(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a._accumulate(full)

    return Tensor(a.data[idx], a.requires_grad, (a,), back)


def loss_node(x, fn) -> Tensor:
    """Scalar node from ``fn(x.data) -> (value, d value / d x)``."""
    x = _lift(x)
    value, grad = fn(x.data)

    def back(g):
        if x.requires_grad:
            x._accumulate(float(g) * grad)

    return Tensor(np.asarray(value), x.requires_grad, (x,), back)


def weighted_sum(terms, weights) -> Tensor:
    terms = [_lift(t) for t in terms]
    weights = [float(w) for w in weights]

    def back(g):
        for t, w in zip(terms, weights):
            if t.requires_grad:
                t._accumulate(g * w)

    value = sum(w * t.data for t, w in zip(terms, weights))
    return Tensor(np.asarray(value), _needs(*terms), tuple(terms), back)
