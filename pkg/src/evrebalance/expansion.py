"""Stochastic deployment and closure of stations while the system runs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .hexgrid import ORIGIN, HexCoord, hex_center, hex_distance, nearest_cell
from .world import InvariantError, Station, WorldState

STEPS_PER_DAY = 144

# Inner-ring vs beyond-outer-ring station density in the operator data (3.23 vs 0.93 per km^2).
CENTER_DENSITY_RATIO = 3.23 / 0.93


class ScenarioError(RuntimeError):
    """The scenario cannot be simulated as configured (e.g. no dock left anywhere)."""


@dataclass
class ExpansionModel:
    deploy_rate_per_day: float = 0.0
    close_rate_per_day: float = 0.0
    speed: float = 1.0
    center_weight: float = CENTER_DENSITY_RATIO
    placement_weights: Optional[dict[HexCoord, float]] = None
    new_station_docks: int = 6
    new_station_evs: int = 3
    min_online: int = 2  # closures never drop the network below this size

    def __post_init__(self) -> None:
        if self.deploy_rate_per_day < 0 or self.close_rate_per_day < 0:
            raise ValueError("expansion rates must be >= 0")
        if not 0.0 <= self.speed <= 3.0:
            raise ValueError(f"expansion speed must lie in [0, 3], got {self.speed}")
        if self.new_station_docks < 1:
            raise ValueError("new_station_docks must be >= 1")
        if not 0 <= self.new_station_evs < self.new_station_docks:
            raise ValueError("new_station_evs must satisfy 0 <= evs < docks")

    def cell_weights(self, cells: list[HexCoord], radius: int) -> np.ndarray:
        """Deployment weight per cell; linear from ``center_weight`` at the center to 1 at the edge."""
        if self.placement_weights is not None:
            w = np.array([float(self.placement_weights.get(c, 0.0)) for c in cells])
        else:
            frac = np.array([hex_distance(c, ORIGIN) / radius if radius else 0.0 for c in cells])
            w = 1.0 + (self.center_weight - 1.0) * (1.0 - frac)
        if (w < 0).any() or w.sum() <= 0:
            raise ValueError("placement weights must be nonnegative with a positive total")
        return w / w.sum()


@dataclass(frozen=True)
class Deploy:
    t: int
    pos: tuple[float, float]
    cell: HexCoord
    docks: int
    evs: int
    popularity: float = 1.0
    trip_scale: float = 1.0


@dataclass(frozen=True)
class Close:
    t: int
    station: int


ExpansionEvent = Union[Deploy, Close]


def _point_in_cell(cell: HexCoord, world: WorldState, rng: np.random.Generator) -> tuple[float, float]:
    cx, cy = hex_center(cell, world.grid)
    w = world.grid.cell_size_km
    half = w / math.sqrt(3.0)  # center-to-corner
    while True:
        x = cx + rng.uniform(-half, half)
        y = cy + rng.uniform(-w / 2, w / 2)
        if nearest_cell(x, y, w) == cell:
            return (x, y)


def step(world: WorldState, t: int, model: ExpansionModel, rng: Optional[np.random.Generator] = None,
         traits: Optional[Callable[[np.random.Generator], tuple[float, float]]] = None) -> list[ExpansionEvent]:
    """Sample this timestep's deploy and close events.

    Reads only the set of online stations and the fleet size, so the event
    stream does not depend on where the EVs are.
    """
    rng = world.expansion_rng if rng is None else rng
    if model.speed == 0:
        return []
    events: list[ExpansionEvent] = []
    n_close = int(rng.poisson(model.close_rate_per_day * model.speed / STEPS_PER_DAY))
    n_deploy = int(rng.poisson(model.deploy_rate_per_day * model.speed / STEPS_PER_DAY))
    if n_close:
        online = sorted(world.online_station_ids())
        n_close = min(n_close, max(0, len(online) - model.min_online))
        if n_close:
            # skip closures that would leave fewer online docks than EVs; the
            # fleet size and dock total do not depend on where the EVs are
            docks = sum(world.stations[s].docks for s in online)
            for sid in rng.choice(online, size=n_close, replace=False):
                if docks - world.stations[int(sid)].docks >= len(world.evs):
                    docks -= world.stations[int(sid)].docks
                    events.append(Close(t, int(sid)))
    if n_deploy:
        cells = world.grid.sorted_valid_cells()
        p = model.cell_weights(cells, world.grid.radius)
        for k in rng.choice(len(cells), size=n_deploy, p=p):
            cell = cells[int(k)]
            pos = _point_in_cell(cell, world, rng)
            pop, scale = traits(rng) if traits is not None else (1.0, 1.0)
            events.append(Deploy(t, pos, cell, model.new_station_docks, model.new_station_evs, pop, scale))
    return events


def nearest_open_station(world: WorldState, pos: tuple[float, float], exclude: int = -1) -> Optional[Station]:
    """Closest online station with an unpromised free dock (id breaks ties)."""
    best, best_key = None, None
    for s in world.stations.values():
        if not s.online or s.id == exclude or world.available_docks(s) < 1:
            continue
        key = (math.hypot(s.pos[0] - pos[0], s.pos[1] - pos[1]), s.id)
        if best_key is None or key < best_key:
            best, best_key = s, key
    return best


def apply(world: WorldState, events: list[ExpansionEvent], full_range_km: float) -> None:
    for ev in events:
        if isinstance(ev, Deploy):
            s = world.add_station(ev.pos, ev.docks, ev.cell, ev.popularity, ev.trip_scale)
            for _ in range(ev.evs):
                world.add_ev(s, full_range_km)
        else:
            s = world.stations[ev.station]
            if not s.online:
                raise InvariantError(f"close event for station {s.id}, which is already offline")
            world.set_offline(s)
            moving, s.parked = s.parked, []
            for eid in moving:
                target = nearest_open_station(world, s.pos, exclude=s.id)
                if target is None:
                    raise ScenarioError(f"no free dock left to relocate EV {eid} from closed station {s.id}")
                target.parked.append(eid)
                world.evs[eid].station = target.id
