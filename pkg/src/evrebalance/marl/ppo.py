"""Advantage estimation and the clipped-objective (ac-PPO) and vanilla (ac-PG) updates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Any, Optional, Sequence

import numpy as np

from ..neural import tensor as T
from ..neural.optim import OptimizerState, optimize_step
from ..neural.tensor import NonFiniteError, Tape
from .networks import MASKED_LOGIT, N_ACTIONS, Nets, inter_forward, intra_forward
from .rewards import RewardWeights


@dataclass
class PPOConfig:
    learning_rate: float = 5e-5
    clip_eps: float = 0.2
    epochs: int = 20
    gamma: float = 0.95
    entropy_coeff: float = 0.01
    value_coeff: float = 0.5
    intra_coeff: float = 0.5
    alpha1: float = 1.0
    alpha2: float = 2.0
    alpha3: float = 0.3
    beta: float = 0.8
    intra_temperature: float = 1.0
    intra_softmax: bool = False  # add a softmax-over-scores intra term to the ratio
    normalize_advantage: bool = True
    minibatch: int = 512
    rounds: int = 200
    episode_days: float = 1.0
    eval_every: int = 10
    eval_seeds: int = 2
    explore_eps: float = 0.1  # chance of a random intra-grid station while collecting
    pg_learning_rate: float = 4e-4
    warmup_rounds: int = 0  # rounds that train only the value head and the intra-grid scorer
    return_scale: float = 0.05  # rewards are multiplied by this before return computation

    def __post_init__(self) -> None:
        if not 0.0 < self.clip_eps < 1.0:
            raise ValueError(f"clip_eps must lie in (0, 1), got {self.clip_eps}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.epochs < 1 or self.minibatch < 1:
            raise ValueError("epochs and minibatch must be >= 1")
        if self.learning_rate <= 0 or self.pg_learning_rate <= 0:
            raise ValueError("learning rates must be > 0")
        if self.intra_temperature <= 0:
            raise ValueError("intra_temperature must be > 0")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if not 0.0 <= self.explore_eps <= 1.0:
            raise ValueError("explore_eps must lie in [0, 1]")

    @property
    def weights(self) -> RewardWeights:
        return RewardWeights(self.alpha1, self.alpha2, self.alpha3)

    @classmethod
    def from_dict(cls, d: Optional[dict[str, Any]]) -> "PPOConfig":
        d = dict(d or {})
        names = {f.name for f in fields(cls)}
        bad = sorted(set(d) - names)
        if bad:
            raise ValueError(f"unknown ppo key(s): {', '.join(bad)}")
        return cls(**d)


@dataclass
class Experience:
    obs: np.ndarray
    action: int
    logp: float
    mask: np.ndarray
    intra_x: np.ndarray  # chosen station features + cell block (embedding added at training time)
    reward: float
    value: float
    episode: int
    agent: tuple[int, int]
    step: int
    seq: int = 0  # order within the step
    done: bool = False
    intra_candidates: Optional[np.ndarray] = None  # every candidate row (softmax surrogate only)
    intra_choice: int = 0
    intra_logp: float = 0.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.logp) or not math.isfinite(self.reward):
            raise ValueError("experience log-probability and reward must be finite")


def sort_experiences(batch: Sequence[Experience]) -> list[Experience]:
    """Deterministic order: episode, agent, step, then position within the step."""
    return sorted(batch, key=lambda e: (e.episode, e.agent, e.step, e.seq))


def discounted_returns(rewards: Sequence[float], steps: Sequence[int], gamma: float) -> np.ndarray:
    """Return-to-go for one agent-episode, discounting by elapsed timesteps.

    With one record per consecutive step this is the plain sum of gamma^k r_{t+k}.
    """
    n = len(rewards)
    out = np.zeros(n)
    acc, nxt = 0.0, None
    for i in range(n - 1, -1, -1):
        if nxt is not None:
            acc *= gamma ** (nxt - steps[i])
        acc += rewards[i]
        out[i] = acc
        nxt = steps[i]
    return out


def returns_and_advantages(batch: Sequence[Experience], gamma: float, normalize: bool = True,
                           scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """(G, A) aligned with ``batch``, which must already be grouped by agent-episode in time order."""
    n = len(batch)
    G = np.zeros(n)
    start = 0
    while start < n:
        key = (batch[start].episode, batch[start].agent)
        end = start
        while end < n and (batch[end].episode, batch[end].agent) == key:
            end += 1
        G[start:end] = discounted_returns([scale * e.reward for e in batch[start:end]],
                                          [e.step for e in batch[start:end]], gamma)
        start = end
    V = np.array([e.value for e in batch])
    A = G - V
    if normalize and n > 1:
        A = normalize_advantages(A)
    return G, A


def advantage(batch: Sequence[Experience], gamma: float, normalize: bool = True) -> np.ndarray:
    return returns_and_advantages(batch, gamma, normalize)[1]


def normalize_advantages(A: np.ndarray) -> np.ndarray:
    A = A - A.mean()
    sd = A.std()
    return A / sd if sd > 1e-12 else A


@dataclass
class Arrays:
    obs: np.ndarray
    action: np.ndarray
    logp: np.ndarray
    mask: np.ndarray
    intra_x: np.ndarray
    G: np.ndarray
    A: np.ndarray
    # softmax intra surrogate: padded candidate rows, their mask, the chosen row and its old log-probability
    cand: np.ndarray
    cand_mask: np.ndarray
    choice: np.ndarray
    intra_logp: np.ndarray

    def __len__(self) -> int:
        return len(self.action)

    def take(self, idx: np.ndarray) -> "Arrays":
        return Arrays(*(getattr(self, f.name)[idx] for f in fields(self)))


def _pad_candidates(batch: Sequence[Experience], width: int) -> tuple[np.ndarray, np.ndarray]:
    k = max((len(e.intra_candidates) for e in batch if e.intra_candidates is not None), default=1)
    cand = np.zeros((len(batch), k, width))
    cmask = np.zeros((len(batch), k), dtype=bool)
    cmask[:, 0] = True  # a record without candidates keeps a single dummy row, so its log-probability is 0
    for i, e in enumerate(batch):
        if e.intra_candidates is not None:
            m = len(e.intra_candidates)
            cand[i, :m] = e.intra_candidates
            cmask[i, :m] = True
    return cand, cmask


def to_arrays(batch: Sequence[Experience], cfg: PPOConfig) -> Arrays:
    G, A = returns_and_advantages(batch, cfg.gamma, cfg.normalize_advantage, cfg.return_scale)
    intra_x = np.stack([e.intra_x for e in batch])
    if cfg.intra_softmax:
        cand, cmask = _pad_candidates(batch, intra_x.shape[1])
    else:
        cand, cmask = np.zeros((len(batch), 1, intra_x.shape[1])), np.ones((len(batch), 1), dtype=bool)
    return Arrays(
        obs=np.stack([e.obs for e in batch]),
        action=np.array([e.action for e in batch], dtype=np.int64),
        logp=np.array([e.logp for e in batch]),
        mask=np.stack([e.mask for e in batch]).astype(bool),
        intra_x=intra_x,
        G=G,
        A=A,
        cand=cand,
        cand_mask=cmask,
        choice=np.array([e.intra_choice if cfg.intra_softmax else 0 for e in batch], dtype=np.int64),
        intra_logp=np.array([e.intra_logp if cfg.intra_softmax else 0.0 for e in batch]),
    )


@dataclass
class LossParts:
    total: T.Tensor
    policy: float
    value: float
    entropy: float
    intra: float
    ratio_mean: float
    clip_frac: float
    ratio: np.ndarray


def loss(nets: Nets, b: Arrays, cfg: PPOConfig, tape: Tape, kind: str = "ppo",
         policy_weight: float = 1.0, frozen_embedding: Optional[np.ndarray] = None) -> LossParts:
    """Scalar training loss on a minibatch, recorded on ``tape``.

    Parameters are watched inter first, then intra, matching ``nets.params``.
    The intra-grid terms see the embedding as a constant (a stop-gradient);
    ``frozen_embedding`` pins that constant, which finite-difference checks need.
    """
    logits, value, emb = inter_forward(nets.inter, b.obs, tape)
    masked = T.add(logits, np.where(b.mask, 0.0, MASKED_LOGIT))
    logp_all = T.log_softmax(masked)
    logp = T.gather(logp_all, b.action)
    old_logp = b.logp
    emb_fixed = emb.data if frozen_embedding is None else frozen_embedding  # no intra gradient into the trunk
    if cfg.intra_softmax:
        logp = T.add(logp, intra_log_probs(nets, b, emb_fixed, cfg.intra_temperature, tape))
        old_logp = b.logp + b.intra_logp
    A = b.A
    if kind == "ppo":
        ratio = T.exp(T.sub(logp, old_logp))
        surr = T.minimum(T.mul(ratio, A), T.mul(T.clip(ratio, 1 - cfg.clip_eps, 1 + cfg.clip_eps), A))
        r = ratio.data
        clip_frac = float(np.mean(np.abs(r - 1.0) > cfg.clip_eps))
    elif kind == "pg":
        surr = T.mul(logp, A)
        r = np.exp(logp.data - old_logp)
        clip_frac = 0.0
    else:
        raise ValueError(f"unknown objective {kind!r}")
    policy_loss = T.neg(T.mean(surr))
    value_loss = T.mean(T.square(T.sub(value, b.G)))
    # masked actions have p = 0 exactly, so they add nothing to the entropy or its gradient
    entropy = T.neg(T.mean(T.sum_(T.mul(T.exp(logp_all), logp_all), axis=1)))
    if cfg.intra_softmax:
        intra_loss = T.Tensor(0.0)  # the scorer is trained through the ratio instead
    else:
        intra_in = np.concatenate([b.intra_x, emb_fixed], axis=1)
        score = intra_forward(nets.intra, intra_in, tape)
        intra_loss = T.mean(T.square(T.sub(score, b.G)))
    total = T.add(T.add(T.mul(policy_loss, policy_weight), T.mul(value_loss, cfg.value_coeff)),
                  T.sub(T.mul(intra_loss, cfg.intra_coeff), T.mul(entropy, cfg.entropy_coeff * policy_weight)))
    return LossParts(total, policy_loss.item(), value_loss.item(), entropy.item(), intra_loss.item(),
                     float(r.mean()), clip_frac, r)


def intra_log_probs(nets: Nets, b: Arrays, emb: np.ndarray, temperature: float, tape: Tape) -> T.Tensor:
    """log softmax(score / temperature) of the chosen station among each record's candidates."""
    n, k, w = b.cand.shape
    rows = np.concatenate([b.cand.reshape(n * k, w), np.repeat(emb, k, axis=0)], axis=1)
    scores = T.reshape(intra_forward(nets.intra, rows, tape), (n, k))
    z = T.add(T.mul(scores, 1.0 / temperature), np.where(b.cand_mask, 0.0, MASKED_LOGIT))
    return T.gather(T.log_softmax(z), b.choice)


@dataclass
class UpdateStats:
    policy_loss: float = 0.0
    value_loss: float = 0.0
    entropy: float = 0.0
    intra_loss: float = 0.0
    mean_ratio: float = 1.0
    clip_frac: float = 0.0
    n: int = 0
    first_ratio_max_dev: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


class DivergenceError(RuntimeError):
    """Non-finite loss or gradient during an update."""

    def __init__(self, msg: str, stats: Optional[UpdateStats] = None):
        super().__init__(msg)
        self.stats = stats


def _run_update(nets: Nets, arr: Arrays, cfg: PPOConfig, opt: OptimizerState, rng: np.random.Generator,
                kind: str, epochs: int, policy_weight: float = 1.0) -> UpdateStats:
    n = len(arr)
    stats = UpdateStats(n=n)
    if n == 0:
        return stats
    params = nets.params
    count = 0
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            mb = arr.take(order[start:start + cfg.minibatch])
            tape = Tape()
            try:
                parts = loss(nets, mb, cfg, tape, kind, policy_weight)
                grads = T.backward(tape, parts.total)
                optimize_step(opt, params, grads)
            except NonFiniteError as e:
                raise DivergenceError(f"non-finite value in epoch {epoch}: {e}", stats) from e
            if epoch == 0 and start == 0:
                stats.first_ratio_max_dev = float(np.max(np.abs(parts.ratio - 1.0)))
            count += 1
            stats.policy_loss += parts.policy
            stats.value_loss += parts.value
            stats.entropy += parts.entropy
            stats.intra_loss += parts.intra
            stats.mean_ratio += parts.ratio_mean
            stats.clip_frac += parts.clip_frac
    stats.mean_ratio -= 1.0  # started at 1 so an empty batch reports 1
    for k in ("policy_loss", "value_loss", "entropy", "intra_loss", "mean_ratio", "clip_frac"):
        setattr(stats, k, getattr(stats, k) / count)
    return stats


def ppo_update(batch: Sequence[Experience], nets: Nets, cfg: PPOConfig, opt: OptimizerState,
               rng: np.random.Generator, policy_weight: float = 1.0) -> UpdateStats:
    if not batch:
        return UpdateStats()
    arr = to_arrays(sort_experiences(batch), cfg)
    return _run_update(nets, arr, cfg, opt, rng, "ppo", cfg.epochs, policy_weight)


def pg_update(batch: Sequence[Experience], nets: Nets, cfg: PPOConfig, opt: OptimizerState,
              rng: np.random.Generator, policy_weight: float = 1.0) -> UpdateStats:
    if not batch:
        return UpdateStats()
    arr = to_arrays(sort_experiences(batch), cfg)
    return _run_update(nets, arr, cfg, opt, rng, "pg", 1, policy_weight)


def make_optimizer(nets: Nets, cfg: PPOConfig, kind: str = "ppo") -> OptimizerState:
    lr = cfg.learning_rate if kind == "ppo" else cfg.pg_learning_rate
    return OptimizerState.for_params(nets.params, lr=lr)
