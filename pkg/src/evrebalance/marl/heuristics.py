"""Rule-based rebalancing baselines: NR, RND, REV and DMD."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..simengine import candidate_stations
from ..world import Order, WorldState
from .observation import Forecast

KINDS = ("NR", "RND", "REV", "DMD")


class HeuristicPolicy:
    """Picks a reposition target among the eligible stations near the destination.

    The original destination competes with the eligible stations; choosing it
    means no reposition. NR never repositions. RND picks uniformly, REV
    maximises the expected order value, DMD maximises the expected demand gap
    (ties go to the lower id).
    """

    def __init__(self, kind: str, rng: Optional[np.random.Generator] = None):
        kind = kind.upper()
        if kind not in KINDS:
            raise ValueError(f"unknown heuristic {kind!r}; expected one of {KINDS}")
        self.kind = kind
        self.name = kind
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._fc: Optional[Forecast] = None

    def reset(self, sim, world) -> None:
        self.rng = sim.policy_rng

    def begin_step(self, sim, world: WorldState, orders: list[Order], t: int) -> None:
        self._fc = Forecast(world, t, sim.demand) if self.kind in ("REV", "DMD") else None

    def decide(self, sim, world: WorldState, order: Order, t: int) -> Optional[int]:
        if self.kind == "NR":
            return None
        cands = sorted(candidate_stations(world, order, sim.demand.detour_factor) + [order.dest])
        pick = self.choose(cands, sim, world, t)
        return None if pick == order.dest else pick

    def choose(self, cands: list[int], sim, world: WorldState, t: int) -> Optional[int]:
        if not cands or self.kind == "NR":
            return None
        if self.kind == "RND":
            return cands[int(self.rng.integers(len(cands)))]
        fc = self._fc if self._fc is not None and self._fc.t == t else Forecast(world, t, sim.demand)
        score = fc.order_value if self.kind == "REV" else fc.demand_gap
        # ties go to the lowest id
        return max(cands, key=lambda s: (score(s), -s))


def heuristic_policy(kind: str, order: Order, world: WorldState, sim, rng: np.random.Generator) -> Optional[int]:
    """One-shot functional form of :class:`HeuristicPolicy`."""
    p = HeuristicPolicy(kind, rng)
    return p.decide(sim, world, order, world.clock)
