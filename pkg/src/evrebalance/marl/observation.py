"""Per-agent observation vectors and per-station candidate features.

Observation layout (156 values)::

    for each of 19 cells (own cell, ring 1, ring 2 in hexgrid order), 8 values:
        0 station count        1 total docks          2 parked EVs
        3 mean range / full    4 expected pickups     5 expected returns
        6 mean order value     7 empty stations
    then sin/cos of time of day, sin/cos of day of week.

Cells off the valid board or without online stations contribute zeros.
"""

from __future__ import annotations

import math
from collections import Counter
from typing import Optional

import numpy as np

from .. import demand as dm
from ..hexgrid import HexCoord, two_hop
from ..world import Order, Station, WorldState

CELL_FEATURES = 8
N_CELLS = 19
N_TEMPORAL = 4
OBS_DIM = N_CELLS * CELL_FEATURES + N_TEMPORAL
STATION_FEATURES = 8
STEPS_PER_DAY = 144


class Forecast:
    """Snapshot of next-step expectations for one decision timestep."""

    def __init__(self, world: WorldState, t: int, model: dm.DemandModel):
        self.world = world
        self.t = t
        self.model = model
        self.returns: Counter = dm.returns_by_station(world, t + 1)
        arr = dm._arrays(world)
        lam = dm.rates(model, world, t + 1)
        self.pickups = {int(sid): float(lam[i]) for i, sid in enumerate(arr.ids)}
        self._blocks: dict[HexCoord, np.ndarray] = {}

    def expected_pickups(self, s: int) -> float:
        return self.pickups.get(s, 0.0)

    def expected_returns(self, s: int) -> float:
        return float(self.returns.get(s, 0))

    def order_value(self, s: int) -> float:
        return dm.expected_order_value(self.model, self.world, s)

    def demand_gap(self, s: int) -> float:
        """Expected pickups next step minus EVs parked now."""
        return self.expected_pickups(s) - len(self.world.stations[s].parked)

    def mean_range(self, s: Station) -> float:
        if not s.parked:
            return 0.0
        evs = self.world.evs
        return sum(evs[e].range_km / evs[e].full_range_km for e in s.parked) / len(s.parked)

    def cell_block(self, cell: HexCoord) -> np.ndarray:
        b = self._blocks.get(cell)
        if b is not None:
            return b
        b = np.zeros(CELL_FEATURES)
        world = self.world
        sids = world.cell_index().get(cell, ()) if world.grid.is_valid(cell) else ()
        if sids:
            evs = world.evs
            n_parked, rsum = 0, 0.0
            for sid in sids:
                s = world.stations[sid]
                b[1] += s.docks
                n_parked += len(s.parked)
                for e in s.parked:
                    rsum += evs[e].range_km / evs[e].full_range_km
                b[4] += self.expected_pickups(sid)
                b[5] += self.expected_returns(sid)
                b[6] += self.order_value(sid)
                b[7] += 1.0 if not s.parked else 0.0
            b[0] = len(sids)
            b[2] = n_parked
            b[3] = rsum / n_parked if n_parked else 0.0
            b[6] /= len(sids)
        self._blocks[cell] = b
        return b

    def cell_baseline(self, cell: HexCoord) -> float:
        """Per-station mean order value times per-station mean demand gap in ``cell``."""
        sids = self.world.cell_index().get(cell, ())
        if not sids:
            return 0.0
        v = sum(self.order_value(s) for s in sids) / len(sids)
        g = sum(self.demand_gap(s) for s in sids) / len(sids)
        return v * g


def temporal_features(t: int, start_weekday: int = 0) -> np.ndarray:
    tod = 2 * math.pi * (t % STEPS_PER_DAY) / STEPS_PER_DAY
    dow = 2 * math.pi * ((t // STEPS_PER_DAY + start_weekday) % 7) / 7
    return np.array([math.sin(tod), math.cos(tod), math.sin(dow), math.cos(dow)])


def encode_observation(world: WorldState, cell: HexCoord, t: int, model: dm.DemandModel,
                       fc: Optional[Forecast] = None) -> np.ndarray:
    fc = Forecast(world, t, model) if fc is None else fc
    out = np.empty(OBS_DIM)
    for k, c in enumerate([cell] + two_hop(cell)):
        out[k * CELL_FEATURES:(k + 1) * CELL_FEATURES] = fc.cell_block(c)
    out[N_CELLS * CELL_FEATURES:] = temporal_features(t, model.start_weekday)
    return out


def station_features(fc: Forecast, order: Order, s: Station, incentive_coeff: float,
                     incentive_cap: float) -> np.ndarray:
    world = fc.world
    dest = world.stations[order.dest]
    extra = math.hypot(s.pos[0] - dest.pos[0], s.pos[1] - dest.pos[1])
    cost = min(incentive_coeff * extra * extra, incentive_cap, order.price)
    return np.array([
        world.available_docks(s),
        len(s.parked),
        fc.mean_range(s),
        fc.demand_gap(s.id),
        fc.order_value(s.id),
        1.0 if not s.parked else 0.0,
        extra,
        cost,
    ], dtype=float)
