"""Tape-based reverse-mode differentiation over numpy arrays.

Operations on :class:`Tensor` always compute their value with plain numpy.
When a :class:`Tape` is active and an input requires a gradient, the
operation is also appended to the tape together with its vector-Jacobian
product.  The tape is therefore already in topological order and the
backward sweep simply walks it in reverse.  Outside a tape the same code
runs with no bookkeeping, so values are bit-identical with and without
recording.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

_ACTIVE: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}({self.data!r}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def value(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


@dataclass
class Node:
    out: Tensor
    inputs: tuple
    forward: Callable
    vjp: Callable


class Tape:
    """Records operations while active (use as a context manager)."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.pop()
        return False

    def backward(self, output: Tensor, seed=None) -> None:
        """Accumulate d(output)/d(x) into ``x.grad`` for every recorded input."""
        output.grad = np.ones_like(output.data) if seed is None else np.asarray(seed, dtype=np.float64)
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is None:
                continue
            grads = node.vjp(g)
            for inp, gi in zip(node.inputs, grads):
                if gi is None or not inp.requires_grad:
                    continue
                inp.grad = gi if inp.grad is None else inp.grad + gi

    def replay(self) -> list[np.ndarray]:
        """Recompute every recorded value from its recorded inputs."""
        return [node.forward(*[i.data for i in node.inputs]) for node in self.nodes]


def _op(forward: Callable, vjp_factory: Callable, *inputs) -> Tensor:
    """Apply ``forward`` to the input values; record a node when needed.

    ``vjp_factory(out_value, *input_values)`` must return a function mapping
    the output cotangent to a tuple of input cotangents.
    """
    tensors = tuple(as_tensor(i) for i in inputs)
    out = Tensor(forward(*[t.data for t in tensors]))
    if _ACTIVE and any(t.requires_grad for t in tensors):
        out.requires_grad = True
        vjp = vjp_factory(out.data, *[t.data for t in tensors])
        _ACTIVE[-1].nodes.append(Node(out, tensors, forward, vjp))
    return out


def unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b):
    return _op(np.add, lambda o, x, y: lambda g: (unbroadcast(g, x.shape), unbroadcast(g, y.shape)), a, b)


def sub(a, b):
    return _op(np.subtract, lambda o, x, y: lambda g: (unbroadcast(g, x.shape), -unbroadcast(g, y.shape)), a, b)


def mul(a, b):
    return _op(
        np.multiply,
        lambda o, x, y: lambda g: (unbroadcast(g * y, x.shape), unbroadcast(g * x, y.shape)),
        a, b,
    )


def div(a, b):
    return _op(
        np.divide,
        lambda o, x, y: lambda g: (unbroadcast(g / y, x.shape), unbroadcast(-g * x / (y * y), y.shape)),
        a, b,
    )


def neg(a):
    return _op(np.negative, lambda o, x: lambda g: (-g,), a)


def matmul(a, b):
    return _op(np.matmul, lambda o, x, y: lambda g: (g @ y.T, x.T @ g), a, b)


def transpose(a):
    return _op(np.transpose, lambda o, x: lambda g: (g.T,), a)


def exp(a):
    return _op(np.exp, lambda o, x: lambda g: (g * o,), a)


def log(a):
    return _op(np.log, lambda o, x: lambda g: (g / x,), a)


def relu(a):
    return _op(lambda x: np.maximum(x, 0.0), lambda o, x: lambda g: (g * (x > 0),), a)


def clip(a, lo, hi):
    def vjp(o, x):
        inside = (x >= lo) & (x <= hi)
        return lambda g: (g * inside,)

    return _op(lambda x: np.clip(x, lo, hi), vjp, a)


def sum(a, axis=None, keepdims=False):  # noqa: A001
    def vjp(o, x):
        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, x.shape).copy(),)
        return back

    return _op(lambda x: np.sum(x, axis=axis, keepdims=keepdims), vjp, a)


def mean(a, axis=None, keepdims=False):
    n = value(a).size if axis is None else value(a).shape[axis]
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def _lse(x, axis):
    m = np.max(x, axis=axis, keepdims=True)
    return m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))


def logsumexp(a, axis, keepdims=True):
    def fwd(x):
        out = _lse(x, axis)
        return out if keepdims else np.squeeze(out, axis)

    def vjp(o, x):
        ok = o if keepdims else np.expand_dims(o, axis)
        w = np.exp(x - ok)
        return lambda g: ((g if keepdims else np.expand_dims(g, axis)) * w,)

    return _op(fwd, vjp, a)


def softmax(a, axis=-1):
    def fwd(x):
        e = np.exp(x - np.max(x, axis=axis, keepdims=True))
        return e / np.sum(e, axis=axis, keepdims=True)

    return _op(fwd, lambda o, x: lambda g: (o * (g - np.sum(g * o, axis=axis, keepdims=True)),), a)


def concat(items: Sequence, axis: int = -1):
    sizes = [value(i).shape[axis] for i in items]
    bounds = np.cumsum(sizes)[:-1]

    def vjp(o, *xs):
        return lambda g: tuple(np.split(g, bounds, axis=axis))

    return _op(lambda *xs: np.concatenate(xs, axis=axis), vjp, *items)


def getitem(a, idx):
    def vjp(o, x):
        def back(g):
            out = np.zeros_like(x)
            np.add.at(out, idx, g)
            return (out,)
        return back

    return _op(lambda x: x[idx], vjp, a)


def augment_dustbin(scores, alpha):
    """Append a row and column filled with the scalar ``alpha``."""
    def fwd(s, a):
        n, m = s.shape
        out = np.empty((n + 1, m + 1))
        out[:n, :m] = s
        out[n, :] = a
        out[:, m] = a
        return out

    def vjp(o, s, a):
        def back(g):
            return g[:-1, :-1], np.asarray(g[-1, :].sum() + g[:-1, -1].sum()).reshape(np.shape(a))
        return back

    return _op(fwd, vjp, scores, alpha)
