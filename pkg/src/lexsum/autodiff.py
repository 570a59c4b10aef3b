"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough machinery for recurrent encoders, attention and softmax
policies: a `Tensor` wraps an ndarray and records a vector-Jacobian closure
per operation.  Gradients follow the array dtype, so the same network code
runs in float32 for training and float64 for finite-difference checks.

Graph recording is skipped inside a ``no_grad()`` block, which makes
rollouts and inference plain numpy evaluations.  Non-Tensor operands
(masks, index arrays, Python scalars) are constants and never receive
gradients.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to ``shape`` undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """An ndarray plus the reverse-mode bookkeeping to reach it."""

    __slots__ = ("data", "grad", "_parents", "_vjp", "name")

    def __init__(
        self,
        data,
        parents: tuple["Tensor", ...] = (),
        vjp: Callable[[np.ndarray], tuple[np.ndarray, ...]] | None = None,
        name: str | None = None,
    ):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._vjp = vjp
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    def item(self) -> float:
        return float(self.data)

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _make(data, parents, vjp) -> "Tensor":
        if _GRAD_ENABLED and parents:
            return Tensor(data, parents=parents, vjp=vjp)
        return Tensor(data)

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Accumulate gradients of this (scalar) node into every ancestor."""
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        if seed is None:
            seed = np.ones_like(self.data)
        self.grad = np.asarray(seed)
        for node in reversed(topo):
            if node._vjp is None or node.grad is None:
                continue
            for parent, grad in zip(node._parents, node._vjp(node.grad)):
                if grad is None:
                    continue
                if parent.grad is None:
                    parent.grad = grad
                else:
                    parent.grad = parent.grad + grad

    # -- arithmetic ----------------------------------------------------------
    # Non-Tensor operands stay raw so Python scalars keep weak dtype
    # promotion (a float32 graph is not upcast by `x + 1.0`).

    def __add__(self, other) -> "Tensor":
        a = self.data
        if isinstance(other, Tensor):
            b = other.data
            return Tensor._make(
                a + b,
                (self, other),
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
            )
        return Tensor._make(
            a + other, (self,), lambda g: (_unbroadcast(g, a.shape),)
        )

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return self + (-other)
        a = self.data
        return Tensor._make(
            a - other, (self,), lambda g: (_unbroadcast(g, a.shape),)
        )

    def __rsub__(self, other) -> "Tensor":
        return (-self) + other

    def __mul__(self, other) -> "Tensor":
        a = self.data
        if isinstance(other, Tensor):
            b = other.data
            return Tensor._make(
                a * b,
                (self, other),
                lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
            )
        return Tensor._make(
            a * other, (self,), lambda g: (_unbroadcast(g * other, a.shape),)
        )

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        a = self.data
        if isinstance(other, Tensor):
            b = other.data
            return Tensor._make(
                a / b,
                (self, other),
                lambda g: (
                    _unbroadcast(g / b, a.shape),
                    _unbroadcast(-g * a / (b * b), b.shape),
                ),
            )
        return Tensor._make(
            a / other, (self,), lambda g: (_unbroadcast(g / other, a.shape),)
        )

    def __matmul__(self, other) -> "Tensor":
        a = self.data
        b = other.data if isinstance(other, Tensor) else np.asarray(other)

        def vjp(g):
            ga = _unbroadcast(g @ b.swapaxes(-1, -2), a.shape)
            if isinstance(other, Tensor):
                return ga, _unbroadcast(a.swapaxes(-1, -2) @ g, b.shape)
            return (ga,)

        parents = (self, other) if isinstance(other, Tensor) else (self,)
        return Tensor._make(a @ b, parents, vjp)

    # -- shape ops -----------------------------------------------------------

    def __getitem__(self, idx) -> "Tensor":
        data = self.data
        out = data[idx]

        def vjp(g):
            full = np.zeros_like(data)
            np.add.at(full, idx, g)
            return (full,)

        return Tensor._make(out, (self,), vjp)

    def reshape(self, *shape) -> "Tensor":
        old = self.data.shape
        return Tensor._make(
            self.data.reshape(*shape), (self,), lambda g: (g.reshape(old),)
        )

    def swapaxes(self, a: int, b: int) -> "Tensor":
        return Tensor._make(
            self.data.swapaxes(a, b), (self,), lambda g: (g.swapaxes(a, b),)
        )

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.data.shape

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), vjp)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.data.shape
        count = self.data.size if axis is None else shape[axis]

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape) / count,)

        return Tensor._make(
            self.data.mean(axis=axis, keepdims=keepdims), (self,), vjp
        )


# -- nonlinearities ----------------------------------------------------------


def sigmoid(x: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-x.data))
    return Tensor._make(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return Tensor._make(out, (x,), lambda g: (g * (1.0 - out * out),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor._make(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return Tensor._make(np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return Tensor._make(out, (x,), lambda g: (g / (2.0 * out),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return Tensor._make(out, (x,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    datas = [t.data for t in tensors]
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(np.concatenate(datas, axis=axis), tuple(tensors), vjp)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / sqrt(var + eps) * gamma + beta
