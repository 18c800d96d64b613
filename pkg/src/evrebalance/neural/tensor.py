"""Float64 tensors with tape-based reverse-mode differentiation.

Operations on tensors that belong to a :class:`Tape` are recorded on it;
:func:`backward` walks the tape in reverse to accumulate exact gradients.
Every op checks its result for NaN/Inf and raises immediately.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


class TapeError(RuntimeError):
    """Backward was requested for something the tape never recorded."""


class Tensor:
    __slots__ = ("data", "tape")

    def __init__(self, data, tape: Optional["Tape"] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        _check(self.data, "tensor")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, taped={self.tape is not None})"

    __add__ = lambda a, b: add(a, b)
    __radd__ = lambda a, b: add(b, a)
    __sub__ = lambda a, b: sub(a, b)
    __rsub__ = lambda a, b: sub(b, a)
    __mul__ = lambda a, b: mul(a, b)
    __rmul__ = lambda a, b: mul(b, a)
    __matmul__ = lambda a, b: matmul(a, b)
    __neg__ = lambda a: neg(a)


class Tape:
    """Ordered record of differentiable operations."""

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.leaves: list[Tensor] = []

    def watch(self, data) -> Tensor:
        """A leaf tensor sharing ``data``'s buffer whose gradient will be reported."""
        t = Tensor.__new__(Tensor)
        t.data = data.data if isinstance(data, Tensor) else np.asarray(data, dtype=np.float64)
        t.tape = self
        self.leaves.append(t)
        return t


def _check(x: np.ndarray, op: str) -> None:
    if not np.isfinite(x).all():
        raise NonFiniteError(f"{op} produced a non-finite value")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(*xs: Tensor) -> Optional[Tape]:
    tape = None
    for x in xs:
        if x.tape is not None:
            if tape is not None and x.tape is not tape:
                raise TapeError("operands belong to different tapes")
            tape = x.tape
    return tape


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], grad_fn: Callable, op: str) -> Tensor:
    _check(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.tape = _tape_of(*inputs)
    if out.tape is not None:
        out.tape.nodes.append((out, inputs, grad_fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- elementwise ------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(a.data)
    return _make(y, (a,), lambda g: (g / a.data,), "log")


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; the gradient is zero where the clamp is active."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


def minimum(a, b) -> Tensor:
    """Elementwise min; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data <= b.data
    return _make(np.where(take_a, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(g * take_a, a.shape), _unbroadcast(g * ~take_a, b.shape)), "minimum")


# -- linear algebra and reductions -------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def sum_(a, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)
    y = a.data.sum(axis=axis)

    def grad(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _make(np.asarray(y, dtype=np.float64), (a,), grad, "sum")


def mean(a, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis), 1.0 / n)


def log_softmax(a) -> Tensor:
    """Log-softmax over the last axis."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    p = np.exp(y)
    return _make(y, (a,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),), "log_softmax")


def gather(a, index: np.ndarray) -> Tensor:
    """``out[i] = a[i, index[i]]`` for a 2-d ``a``."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    rows = np.arange(a.shape[0])

    def grad(g):
        out = np.zeros_like(a.data)
        out[rows, index] = g
        return (out,)

    return _make(a.data[rows, index], (a,), grad, "gather")


def take_column(a, j: int) -> Tensor:
    a = as_tensor(a)

    def grad(g):
        out = np.zeros_like(a.data)
        out[:, j] = g
        return (out,)

    return _make(a.data[:, j].copy(), (a,), grad, "take_column")


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    ax = axis % parts[0].data.ndim
    sizes = np.cumsum([p.shape[ax] for p in parts])[:-1]

    def grad(g):
        return tuple(np.split(g, sizes, axis=ax))

    return _make(np.concatenate([p.data for p in parts], axis=ax), tuple(parts), grad, "concat")


def detach(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(a.data.copy())


# -- the backward pass -------------------------------------------------------


def backward(tape: Tape, loss: Tensor, wrt: Optional[Iterable[Tensor]] = None) -> list[np.ndarray]:
    """Gradients of the scalar ``loss`` for ``wrt`` (default: the tape's watched leaves, in order).

    Leaves the loss does not depend on get zero gradients.
    """
    if loss.tape is not tape or loss.data.size != 1:
        raise TapeError("backward needs a scalar loss computed on this tape (run a taped forward pass first)")
    targets = list(tape.leaves if wrt is None else wrt)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, inputs, grad_fn in reversed(tape.nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for x, gx in zip(inputs, grad_fn(g)):
            if x.tape is None:
                continue
            k = id(x)
            grads[k] = grads[k] + gx if k in grads else gx
    result = []
    for t in targets:
        g = grads.get(id(t))
        result.append(np.zeros_like(t.data) if g is None else np.asarray(g, dtype=np.float64).reshape(t.shape))
    return result
