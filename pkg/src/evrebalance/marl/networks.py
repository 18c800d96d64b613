"""Cascaded policy networks.

The inter-grid network maps an agent observation to 7 action logits (stay in
the destination cell or move to one of its 6 neighbours), a state value and an
embedding (its last hidden layer). The intra-grid network scores candidate
stations of the chosen cell from their own features, the cell block and that
embedding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..neural import tensor as T
from ..neural.mlp import HIDDEN, Mlp
from ..neural.tensor import Tape, Tensor
from .observation import CELL_FEATURES, N_CELLS, OBS_DIM, STATION_FEATURES

N_ACTIONS = 7
MASKED_LOGIT = -1e9
INTRA_IN = STATION_FEATURES + CELL_FEATURES + HIDDEN[-1]

# Fixed input scaling so every feature is O(1) at desk scale.
_CELL_SCALE = np.array([4.0, 30.0, 12.0, 1.0, 0.5, 1.0, 4.0, 2.0])
OBS_SCALE = np.concatenate([np.tile(_CELL_SCALE, N_CELLS), np.ones(4)])
STATION_SCALE = np.array([10.0, 6.0, 1.0, 4.0, 4.0, 1.0, 6.0, 2.0])


class InterNet:
    """Four tanh hidden layers shared by a policy head and a value head."""

    def __init__(self, rng: Optional[np.random.Generator] = None, hidden: Sequence[int] = HIDDEN,
                 in_dim: int = OBS_DIM, policy_head_scale: float = 0.01):
        rng = np.random.default_rng(0) if rng is None else rng
        self.hidden = tuple(hidden)
        self.in_dim = in_dim
        trunk = Mlp([in_dim, *hidden, 1], rng)  # the dummy output layer is dropped below
        self.params: list[np.ndarray] = trunk.params[:-2]
        h = hidden[-1]
        for width, scale in ((N_ACTIONS, policy_head_scale), (1, 1.0)):
            bound = scale / np.sqrt(h)
            self.params += [rng.uniform(-bound, bound, size=(h, width)), np.zeros(width)]

    @property
    def n_hidden(self) -> int:
        return len(self.hidden)

    def named_params(self) -> list[tuple[str, np.ndarray]]:
        names = []
        for i in range(self.n_hidden):
            names += [f"inter.W{i}", f"inter.b{i}"]
        names += ["inter.Wpi", "inter.bpi", "inter.Wv", "inter.bv"]
        return list(zip(names, self.params))

    def copy(self) -> "InterNet":
        c = InterNet.__new__(InterNet)
        c.hidden, c.in_dim = self.hidden, self.in_dim
        c.params = [p.copy() for p in self.params]
        return c


class IntraNet:
    """Scores one candidate station per row; two tanh hidden layers."""

    def __init__(self, rng: Optional[np.random.Generator] = None, hidden: Sequence[int] = (64, 64),
                 in_dim: int = INTRA_IN):
        self.mlp = Mlp([in_dim, *hidden, 1], np.random.default_rng(0) if rng is None else rng)

    @property
    def params(self) -> list[np.ndarray]:
        return self.mlp.params

    def named_params(self) -> list[tuple[str, np.ndarray]]:
        return [(f"intra.{n}", p) for n, p in self.mlp.named_params()]

    def copy(self) -> "IntraNet":
        c = IntraNet.__new__(IntraNet)
        c.mlp = self.mlp.copy()
        return c


@dataclass
class Nets:
    inter: InterNet
    intra: IntraNet

    @classmethod
    def create(cls, rng: np.random.Generator, inter_hidden: Sequence[int] = HIDDEN,
               intra_hidden: Sequence[int] = (64, 64)) -> "Nets":
        inter = InterNet(rng, inter_hidden)
        intra = IntraNet(rng, intra_hidden, STATION_FEATURES + CELL_FEATURES + inter.hidden[-1])
        return cls(inter, intra)

    @property
    def params(self) -> list[np.ndarray]:
        return self.inter.params + self.intra.params

    def named_params(self) -> list[tuple[str, np.ndarray]]:
        return self.inter.named_params() + self.intra.named_params()

    def copy(self) -> "Nets":
        return Nets(self.inter.copy(), self.intra.copy())


def inter_forward(net: InterNet, obs, tape: Optional[Tape] = None) -> tuple[Tensor, Tensor, Tensor]:
    """(logits (n, 7), value (n,), embedding (n, hidden)) for a batch of raw observations."""
    x = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    if x.shape[1] != net.in_dim:
        raise ValueError(f"observation width {x.shape[1]} does not match network input {net.in_dim}")
    x = x / OBS_SCALE if net.in_dim == OBS_DIM else x
    nh = net.n_hidden
    if tape is None:
        h = x
        for i in range(nh):
            h = np.tanh(h @ net.params[2 * i] + net.params[2 * i + 1])
        logits = h @ net.params[2 * nh] + net.params[2 * nh + 1]
        value = (h @ net.params[2 * nh + 2] + net.params[2 * nh + 3])[:, 0]
        T._check(logits, "inter logits")
        T._check(value, "inter value")
        return Tensor(logits), Tensor(value), Tensor(h)
    p = [tape.watch(q) for q in net.params]
    h = Tensor(x)
    for i in range(nh):
        h = T.tanh(T.add(T.matmul(h, p[2 * i]), p[2 * i + 1]))
    logits = T.add(T.matmul(h, p[2 * nh]), p[2 * nh + 1])
    value = T.take_column(T.add(T.matmul(h, p[2 * nh + 2]), p[2 * nh + 3]), 0)
    return logits, value, h


def inter_policy(obs, net: InterNet) -> tuple[np.ndarray, float, np.ndarray]:
    """Single-observation convenience: (7 logits, value, embedding)."""
    logits, value, emb = inter_forward(net, np.asarray(obs)[None, :])
    return logits.data[0], float(value.data[0]), emb.data[0]


def masked_log_probs(logits: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
    z = np.where(mask, logits, MASKED_LOGIT) if mask is not None else logits
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def intra_inputs(station_feats: np.ndarray, cell_block: np.ndarray, embedding: np.ndarray) -> np.ndarray:
    """Rows of [scaled station features, scaled cell block, embedding]."""
    sf = np.atleast_2d(station_feats) / STATION_SCALE
    n = sf.shape[0]
    cb = np.broadcast_to(np.asarray(cell_block) / _CELL_SCALE, (n, CELL_FEATURES))
    emb = np.broadcast_to(np.asarray(embedding), (n, len(embedding)))
    return np.concatenate([sf, cb, emb], axis=1)


def intra_scores(net: IntraNet, inputs: np.ndarray) -> np.ndarray:
    h = np.atleast_2d(inputs)
    mlp = net.mlp
    for i in range(mlp.n_layers):
        h = h @ mlp.params[2 * i] + mlp.params[2 * i + 1]
        if i < mlp.n_layers - 1:
            h = np.tanh(h)
    T._check(h, "intra scores")
    return h[:, 0]


def intra_forward(net: IntraNet, inputs, tape: Tape) -> Tensor:
    mlp = net.mlp
    p = [tape.watch(q) for q in mlp.params]
    h = T.as_tensor(inputs)
    for i in range(mlp.n_layers):
        h = T.add(T.matmul(h, p[2 * i]), p[2 * i + 1])
        if i < mlp.n_layers - 1:
            h = T.tanh(h)
    return T.take_column(h, 0)
