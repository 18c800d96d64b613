"""Dense multilayer perceptrons with tanh hidden layers."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tape, Tensor

HIDDEN = (128, 128, 128, 128)


class Mlp:
    """``widths = [in, h1, ..., out]``; tanh after every layer but the last."""

    def __init__(self, widths: Sequence[int], rng: Optional[np.random.Generator] = None,
                 out_scale: float = 1.0, weights: Optional[list[np.ndarray]] = None):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or min(widths) < 1:
            raise ValueError(f"bad layer widths {widths}")
        self.widths = widths
        if weights is not None:
            self.params = [np.array(w, dtype=np.float64) for w in weights]
            if [p.shape for p in self.params] != self.param_shapes():
                raise ValueError(f"shape mismatch: expected {self.param_shapes()}, got {[p.shape for p in self.params]}")
            return
        rng = np.random.default_rng(0) if rng is None else rng
        self.params = []
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            bound = 1.0 / np.sqrt(a)
            w = rng.uniform(-bound, bound, size=(a, b))
            if i == len(widths) - 2:
                w *= out_scale
            self.params += [w, np.zeros(b)]

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def param_shapes(self) -> list[tuple[int, ...]]:
        out = []
        for a, b in zip(self.widths[:-1], self.widths[1:]):
            out += [(a, b), (b,)]
        return out

    def named_params(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{'W' if k % 2 == 0 else 'b'}{k // 2}", p) for k, p in enumerate(self.params)]

    def copy(self) -> "Mlp":
        return Mlp(self.widths, weights=[p.copy() for p in self.params])


def forward(net: Mlp, x, tape: Optional[Tape] = None, return_hidden: bool = False):
    """Output of ``net`` for a batch ``x`` of shape (n, in) or a single vector.

    With a tape, parameters are watched in ``net.params`` order and every op is
    recorded. ``return_hidden`` also returns the last hidden activation.
    """
    if tape is None:
        return _forward_numpy(net, x, return_hidden)
    x = T.as_tensor(x)
    if x.data.ndim == 1:
        x = _row(x)
    if x.shape[-1] != net.widths[0]:
        raise ValueError(f"input width {x.shape[-1]} does not match first layer width {net.widths[0]}")
    params = [tape.watch(p) for p in net.params]
    h, hidden = x, None
    for i in range(net.n_layers):
        h = T.add(T.matmul(h, params[2 * i]), params[2 * i + 1])
        if i < net.n_layers - 1:
            h = T.tanh(h)
            hidden = h
    return (h, hidden) if return_hidden else h


def _forward_numpy(net: Mlp, x, return_hidden: bool):
    h = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if h.ndim == 1:
        h = h[None, :]
    if h.shape[-1] != net.widths[0]:
        raise ValueError(f"input width {h.shape[-1]} does not match first layer width {net.widths[0]}")
    hidden = None
    for i in range(net.n_layers):
        h = h @ net.params[2 * i] + net.params[2 * i + 1]
        if i < net.n_layers - 1:
            h = np.tanh(h)
            hidden = h
    T._check(h, "forward")
    out = Tensor(h)
    return (out, Tensor(hidden) if hidden is not None else None) if return_hidden else out


def _row(x: Tensor) -> Tensor:
    # reshape a taped vector into a 1-row matrix
    def grad(g):
        return (g.reshape(x.shape),)
    return T._make(x.data[None, :], (x,), grad, "reshape")


def forward_reference(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Straight-line numpy evaluation, independent of the tape machinery."""
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = net.n_layers
    for i in range(n):
        w, b = net.params[2 * i], net.params[2 * i + 1]
        z = np.zeros((h.shape[0], w.shape[1]))
        for r in range(h.shape[0]):
            for j in range(w.shape[1]):
                z[r, j] = float(np.dot(h[r], w[:, j])) + b[j]
        h = np.tanh(z) if i < n - 1 else z
    return h
