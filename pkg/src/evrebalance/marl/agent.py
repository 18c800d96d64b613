"""The cascaded (inter-grid then intra-grid) rebalancing policy.

For every new order the agent owning the destination cell first picks a cell
among its own and its six neighbours (sampled while training, argmax when
evaluating), then scores the eligible stations of that cell and proposes the
best one. Picking the original destination means no reposition.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..hexgrid import DIRECTIONS, HexCoord
from ..simengine import Decision, candidate_stations
from ..world import Order, WorldState
from .networks import N_ACTIONS, Nets, inter_forward, intra_inputs, intra_scores, masked_log_probs
from .observation import Forecast, encode_observation, station_features
from .ppo import Experience, PPOConfig
from .rewards import regularized_reward, station_reward


def action_cells(dest_cell: HexCoord) -> list[HexCoord]:
    """Index 0 is the destination cell itself, 1..6 its neighbours in hexgrid order."""
    return [dest_cell] + [dest_cell + d for d in DIRECTIONS]


@dataclass
class IntraChoice:
    station: Optional[int]  # None = no reposition
    scores: dict[int, float]
    features: Optional[np.ndarray]  # chosen row without the embedding
    rows: Optional[np.ndarray] = None  # every candidate row without the embedding
    index: int = 0
    logp: float = 0.0  # log-probability of the pick under the score softmax (0 when argmaxed)


def intra_select(cell: HexCoord, order: Order, world: WorldState, embedding: np.ndarray, nets: Nets,
                 fc: Forecast, incentive_coeff: float, incentive_cap: float, detour_factor: float,
                 rng: Optional[np.random.Generator] = None, explore_eps: float = 0.0,
                 temperature: Optional[float] = None) -> IntraChoice:
    """Score the eligible stations of ``cell`` (plus the destination when it lies there) and pick one.

    With ``rng`` and a ``temperature`` the pick is sampled from softmax(score / temperature);
    with ``rng`` alone it is epsilon-greedy; otherwise it is the argmax.
    """
    cands = candidate_stations(world, order, detour_factor, cells=[cell])
    dest = world.stations[order.dest]
    if dest.cell == cell:
        cands = sorted(cands + [order.dest])
    if not cands:
        return IntraChoice(None, {}, None)
    feats = np.stack([station_features(fc, order, world.stations[s], incentive_coeff, incentive_cap)
                      for s in cands])
    block = fc.cell_block(cell)
    x = intra_inputs(feats, block, embedding)
    scores = intra_scores(nets.intra, x)
    logp = 0.0
    if rng is not None and temperature is not None:
        z = scores / temperature
        lp = z - z.max() - np.log(np.exp(z - z.max()).sum())
        k = int(rng.choice(len(cands), p=np.exp(lp) / np.exp(lp).sum()))
        logp = float(lp[k])
    elif rng is not None and explore_eps > 0 and rng.random() < explore_eps:
        k = int(rng.integers(len(cands)))
    else:
        best = scores.max()
        k = min(i for i in range(len(cands)) if scores[i] == best)  # lowest id among ties
    chosen = cands[k]
    rows = x[:, :feats.shape[1] + len(block)]
    return IntraChoice(None if chosen == order.dest else chosen, dict(zip(cands, map(float, scores))), rows[k],
                       rows, k, logp)


class CascadePolicy:
    """Shared-parameter cascaded policy for all cell agents."""

    name = "ac-PPO"

    def __init__(self, nets: Nets, cfg: Optional[PPOConfig] = None, training: bool = False,
                 rng: Optional[np.random.Generator] = None, name: Optional[str] = None):
        self.nets = nets
        self.cfg = cfg or PPOConfig()
        self.training = training
        self.rng = rng
        self.own_rng = rng is not None
        if name:
            self.name = name
        self.episode = 0
        self.experiences: list[Experience] = []
        self._step: dict[int, tuple] = {}
        self._fc: Optional[Forecast] = None

    def reset(self, sim, world) -> None:
        if not self.own_rng:
            self.rng = sim.policy_rng

    def begin_step(self, sim, world: WorldState, orders: list[Order], t: int) -> None:
        fc = Forecast(world, t, sim.demand)
        self._fc = fc
        cells = sorted({world.stations[o.dest].cell for o in orders})
        obs = {c: encode_observation(world, c, t, sim.demand, fc) for c in cells}
        X = np.stack([obs[c] for c in cells])
        logits, value, emb = inter_forward(self.nets.inter, X)
        row = {c: i for i, c in enumerate(cells)}
        self._step = {}
        for seq, o in enumerate(orders):
            i = row[world.stations[o.dest].cell]
            self._step[o.id] = (obs[cells[i]], logits.data[i], float(value.data[i]), emb.data[i], seq)

    def _mask(self, sim, world: WorldState, order: Order) -> np.ndarray:
        dest_cell = world.stations[order.dest].cell
        mask = np.zeros(N_ACTIONS, dtype=bool)
        mask[0] = True  # staying is always possible (the destination itself)
        for k, c in enumerate(action_cells(dest_cell)[1:], start=1):
            mask[k] = bool(candidate_stations(world, order, sim.demand.detour_factor, cells=[c]))
        return mask

    def decide(self, sim, world: WorldState, order: Order, t: int) -> Optional[int]:
        obs, logits, value, emb, seq = self._step[order.id]
        mask = self._mask(sim, world, order)
        logp = masked_log_probs(logits, mask)
        if self.training:
            a = int(self.rng.choice(N_ACTIONS, p=np.exp(logp) / np.exp(logp).sum()))
        else:
            a = int(np.argmax(np.where(mask, logits, -np.inf)))
        cell = action_cells(world.stations[order.dest].cell)[a]
        cfg = sim.config
        choice = intra_select(cell, order, world, emb, self.nets, self._fc, cfg.incentive_coeff,
                              cfg.incentive_cap, sim.demand.detour_factor,
                              self.rng if self.training else None, self.cfg.explore_eps if self.training else 0.0,
                              self.cfg.intra_temperature if self.training and self.cfg.intra_softmax else None)
        if self.training:
            self._pending = (order.id, obs, a, float(logp[a]), mask, choice, value, seq, cell)
        return choice.station

    def feedback(self, sim, world: WorldState, decision: Decision, t: int) -> None:
        if not self.training:
            return
        oid, obs, a, logp, mask, choice, value, seq, cell = self._pending
        if oid != decision.order.id:
            return
        fc = self._fc
        r = station_reward(world, decision.order.dest, decision.realized_dest, t, self.cfg.weights, fc=fc)
        r = regularized_reward(r, cell, world, t, self.cfg.beta, fc=fc)
        soft = self.cfg.intra_softmax and choice.rows is not None
        if choice.features is None:
            # no station at all in the chosen cell: features of the realised destination
            feats = station_features(fc, decision.order, world.stations[decision.realized_dest],
                                     sim.config.incentive_coeff, sim.config.incentive_cap)
            x = intra_inputs(feats, fc.cell_block(cell), np.zeros(0))
            intra_x = x[0]
        else:
            intra_x = choice.features
        self.experiences.append(Experience(obs, a, logp, mask, intra_x, r, value, self.episode,
                                           decision.agent_cell.as_tuple(), t, seq,
                                           intra_candidates=choice.rows if soft else None,
                                           intra_choice=choice.index if soft else 0,
                                           intra_logp=choice.logp if soft else 0.0))

    def take_experiences(self) -> list[Experience]:
        out, self.experiences = self.experiences, []
        return out
