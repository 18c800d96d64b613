"""Per-decision station reward and its cell-level regularisation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .. import demand as dm
from ..hexgrid import HexCoord
from ..world import WorldState
from .observation import Forecast


@dataclass(frozen=True)
class RewardWeights:
    alpha1: float = 1.0  # expected order value
    alpha2: float = 2.0  # bonus for refilling an empty station
    alpha3: float = 0.3  # per squared km of extra distance


def reward_terms(world: WorldState, s_d: int, s_dp: int, fc: Forecast) -> tuple[float, float, float, float]:
    """(demand gap, order value, empty flag, extra km) for repositioning from ``s_d`` to ``s_dp``."""
    a, b = world.stations[s_d], world.stations[s_dp]
    dist = math.hypot(a.pos[0] - b.pos[0], a.pos[1] - b.pos[1])
    return fc.demand_gap(s_dp), fc.order_value(s_dp), 1.0 if not b.parked else 0.0, dist


def station_reward(world: WorldState, s_d: int, s_dp: int, t: int, weights: RewardWeights = RewardWeights(),
                   model: Optional[dm.DemandModel] = None, fc: Optional[Forecast] = None) -> float:
    """r = g + a1 v + a2 b - a3 dist^2 at the station the EV ends up in."""
    if fc is None:
        fc = Forecast(world, t, model if model is not None else dm.DemandModel())
    g, v, b, dist = reward_terms(world, s_d, s_dp, fc)
    return g + weights.alpha1 * v + weights.alpha2 * b - weights.alpha3 * dist * dist


def cell_baseline(world: WorldState, cell: HexCoord, t: int, model: Optional[dm.DemandModel] = None,
                  fc: Optional[Forecast] = None) -> float:
    if fc is None:
        fc = Forecast(world, t, model if model is not None else dm.DemandModel())
    return fc.cell_baseline(cell)


def regularized_reward(r: float, cell: HexCoord, world: WorldState, t: int, beta: float = 0.8,
                       model: Optional[dm.DemandModel] = None, fc: Optional[Forecast] = None) -> float:
    """r' = r + beta * mean order value * mean demand gap over the stations of ``cell``."""
    if beta == 0:
        return r
    return r + beta * cell_baseline(world, cell, t, model, fc)
