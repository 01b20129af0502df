"""Reverse-mode autodiff over numpy arrays.

Tensors wrap an ndarray and remember how they were produced; backward()
walks the graph in reverse topological order with a fixed reduction order,
so gradients (and therefore training) are deterministic.
"""

from __future__ import annotations

import numpy as np


class ShapeError(Exception):
    pass


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False, parents: tuple = (), backward=None):
        self.values = np.asarray(values)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    def item(self) -> float:
        return float(self.values)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad = self.grad + g

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Propagate d(self)/d(leaf) into every reachable requires_grad leaf."""
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad:
                    stack.append((p, False))
        self.grad = np.ones_like(self.values) if seed is None else np.asarray(seed)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _coerce(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.values.dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _result(values, parents: tuple[Tensor, ...], backward) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(values, requires_grad=needs, parents=parents if needs else (), backward=backward if needs else None)


# elementwise ---------------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    out_values = a.values + b.values

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _result(out_values, (a, b), backward)


def sub(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    out_values = a.values - b.values

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _result(out_values, (a, b), backward)


def mul(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    out_values = a.values * b.values

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.values, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.values, b.shape))

    return _result(out_values, (a, b), backward)


def div(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    out_values = a.values / b.values

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.values, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.values / (b.values * b.values), b.shape))

    return _result(out_values, (a, b), backward)


def power(a: Tensor, p: float) -> Tensor:
    out_values = a.values**p

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * p * a.values ** (p - 1))

    return _result(out_values, (a,), backward)


def relu(a: Tensor) -> Tensor:
    out_values = np.maximum(a.values, 0)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (a.values > 0))

    return _result(out_values, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out_values = np.tanh(a.values)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - out_values * out_values))

    return _result(out_values, (a,), backward)


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    """Overflow-free logistic on raw arrays."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out_values = stable_sigmoid(a.values)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * out_values * (1.0 - out_values))

    return _result(out_values, (a,), backward)


# shape ---------------------------------------------------------------------


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out_values = a.values.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.shape))

    return _result(out_values, (a,), backward)


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    out_values = np.swapaxes(a.values, ax1, ax2)

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.swapaxes(g, ax1, ax2))

    return _result(out_values, (a,), backward)


def narrow(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    index = [slice(None)] * a.values.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out_values = a.values[index]

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.values)
            full[index] = g
            a._accumulate(full)

    return _result(out_values, (a,), backward)


def stack(tensors: list[Tensor], axis: int = 0) -> Tensor:
    out_values = np.stack([t.values for t in tensors], axis=axis)

    def backward(g):
        slices = np.moveaxis(g, axis, 0)
        for t, piece in zip(tensors, slices):
            if t.requires_grad:
                t._accumulate(piece)

    return _result(out_values, tuple(tensors), backward)


# reductions ----------------------------------------------------------------


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_values = a.values.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape).copy())

    return _result(out_values, (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.values.size
    elif isinstance(axis, tuple):
        count = int(np.prod([a.shape[ax] for ax in axis]))
    else:
        count = a.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


# linear algebra ------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[-1] != b.shape[-2 if b.values.ndim > 1 else 0]:
        raise ShapeError(f"matmul mismatch: {a.shape} @ {b.shape}")
    out_values = a.values @ b.values

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.values, -1, -2)
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.values, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.shape))

    return _result(out_values, (a, b), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_values = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            inner = (g * out_values).sum(axis=axis, keepdims=True)
            a._accumulate((g - inner) * out_values)

    return _result(out_values, (a,), backward)


class Parameter:
    """A named, trainable leaf tensor; names are unique within a model."""

    __slots__ = ("name", "tensor", "trainable")

    def __init__(self, name: str, values: np.ndarray, trainable: bool = True):
        self.name = name
        self.tensor = Tensor(values, requires_grad=trainable)
        self.trainable = trainable

    @property
    def values(self) -> np.ndarray:
        return self.tensor.values

    @values.setter
    def values(self, new: np.ndarray) -> None:
        self.tensor.values = np.asarray(new)

    def zero_grad(self) -> None:
        self.tensor.grad = None

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.tensor.shape})"
