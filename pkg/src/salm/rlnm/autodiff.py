"""Minimal reverse-mode autodiff over numpy arrays.

Just enough machinery to differentiate the policy network: elementwise
arithmetic with broadcasting, matmul, transpose, concat, softmax, tanh,
relu, exp/log, and reductions.  The dispatch helpers at the bottom run the
same forward code on plain arrays (inference) or Vars (training).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Var:
    """A node in the computation tape."""

    __slots__ = ("data", "grad", "_parents", "_backward_fn")

    # Make numpy defer to our reflected operators instead of broadcasting
    # into object arrays.
    __array_ufunc__ = None

    def __init__(self, data, parents: tuple = (), backward_fn: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward_fn = backward_fn

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def T(self) -> "Var":
        return Var(self.data.T, (self,), lambda g: (g.T,))

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other) -> "Var":
        o = as_var(other)
        return Var(
            self.data + o.data, (self, o),
            lambda g: (_unbroadcast(g, self.shape), _unbroadcast(g, o.shape)),
        )

    __radd__ = __add__

    def __neg__(self) -> "Var":
        return Var(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other) -> "Var":
        return self + (-as_var(other))

    def __rsub__(self, other) -> "Var":
        return as_var(other) + (-self)

    def __mul__(self, other) -> "Var":
        o = as_var(other)
        return Var(
            self.data * o.data, (self, o),
            lambda g: (_unbroadcast(g * o.data, self.shape), _unbroadcast(g * self.data, o.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Var":
        o = as_var(other)
        return Var(
            self.data / o.data, (self, o),
            lambda g: (
                _unbroadcast(g / o.data, self.shape),
                _unbroadcast(-g * self.data / (o.data ** 2), o.shape),
            ),
        )

    def __rtruediv__(self, other) -> "Var":
        return as_var(other) / self

    def __matmul__(self, other) -> "Var":
        o = as_var(other)
        return Var(
            self.data @ o.data, (self, o),
            lambda g: (g @ o.data.T, self.data.T @ g),
        )

    def __rmatmul__(self, other) -> "Var":
        return as_var(other) @ self

    def __pow__(self, p: float) -> "Var":
        return Var(self.data ** p, (self,), lambda g: (g * p * self.data ** (p - 1),))

    # -- nonlinearities & reductions ----------------------------------------

    def tanh(self) -> "Var":
        out = np.tanh(self.data)
        return Var(out, (self,), lambda g: (g * (1.0 - out ** 2),))

    def exp(self) -> "Var":
        out = np.exp(self.data)
        return Var(out, (self,), lambda g: (g * out,))

    def log(self) -> "Var":
        return Var(np.log(self.data), (self,), lambda g: (g / self.data,))

    def relu(self) -> "Var":
        mask = (self.data > 0).astype(np.float64)
        return Var(self.data * mask, (self,), lambda g: (g * mask,))

    def sum(self) -> "Var":
        return Var(self.data.sum(), (self,), lambda g: (np.full_like(self.data, float(g)),))

    def backward(self) -> None:
        """Accumulate gradients into every reachable leaf; call on a scalar."""
        order: list[Var] = []
        seen: set[int] = set()
        stack: list[tuple[Var, bool]] = [(self, False)]
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
                stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward_fn is None or node.grad is None:
                continue
            for parent, grad in zip(node._parents, node._backward_fn(node.grad)):
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad = parent.grad + grad


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(np.asarray(x, dtype=np.float64))


# -- dispatch helpers: same forward code for arrays and Vars -----------------


def is_var(x) -> bool:
    return isinstance(x, Var)


def softmax_rows(x):
    """Row-wise softmax over the last axis, numerically shifted."""
    if is_var(x):
        shifted = x.data - x.data.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=-1, keepdims=True)

        def backward(g):
            dot = (g * out).sum(axis=-1, keepdims=True)
            return (out * (g - dot),)

        return Var(out, (x,), backward)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def concat(items: Sequence, axis: int):
    if any(is_var(i) for i in items):
        vars_ = [as_var(i) for i in items]
        sizes = [v.data.shape[axis] for v in vars_]
        out = np.concatenate([v.data for v in vars_], axis=axis)

        def backward(g):
            splits = np.cumsum(sizes)[:-1]
            return tuple(np.split(g, splits, axis=axis))

        return Var(out, tuple(vars_), backward)
    return np.concatenate(list(items), axis=axis)


def tanh(x):
    return x.tanh() if is_var(x) else np.tanh(x)


def maximum_const(x, c: float):
    """max(x, c) against a scalar floor, differentiable through the open side."""
    if is_var(x):
        return as_var(c) + (x - c).relu()
    return np.maximum(x, c)


def data_of(x) -> np.ndarray:
    return x.data if is_var(x) else np.asarray(x)
