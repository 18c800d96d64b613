"""Stations, EVs, orders and the mutable world snapshot."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Optional

import numpy as np

from .hexgrid import GridIndex, HexCoord

SNAPSHOT_VERSION = 1


class InvariantError(RuntimeError):
    """An internal consistency rule of the world was broken."""


@dataclass
class Station:
    id: int
    pos: tuple[float, float]
    docks: int
    cell: HexCoord
    parked: list[int] = field(default_factory=list)
    online: bool = True
    # demand heterogeneity; both average to 1 over the demand-weighted population
    popularity: float = 1.0
    trip_scale: float = 1.0


@dataclass
class EV:
    id: int
    range_km: float
    full_range_km: float
    station: Optional[int] = None  # set while parked
    order: Optional[int] = None  # set while in a trip

    @property
    def parked(self) -> bool:
        return self.station is not None


@dataclass
class Order:
    id: int
    origin: int
    dest: int
    actual_dest: int
    ev: int
    t_start: int
    duration: int
    trip_km: float
    price: float
    incentive_paid: float = 0.0
    extra_km: float = 0.0

    @property
    def t_end(self) -> int:
        return self.t_start + self.duration


@dataclass
class WorldState:
    grid: GridIndex
    stations: dict[int, Station] = field(default_factory=dict)
    evs: dict[int, EV] = field(default_factory=dict)
    active_orders: dict[int, Order] = field(default_factory=dict)
    clock: int = 0
    budget_remaining: float = math.inf
    demand_rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    expansion_rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(1))
    behavior_rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(2))
    next_station_id: int = 0
    next_ev_id: int = 0
    next_order_id: int = 0
    # orders in flight per actual destination; used to hold docks for returns
    inbound: dict[int, int] = field(default_factory=dict)
    _cell_index: Optional[dict[HexCoord, list[int]]] = field(default=None, repr=False)

    # -- construction -------------------------------------------------------

    def add_station(self, pos: tuple[float, float], docks: int, cell: HexCoord,
                    popularity: float = 1.0, trip_scale: float = 1.0) -> Station:
        s = Station(self.next_station_id, (float(pos[0]), float(pos[1])), int(docks), cell,
                    popularity=float(popularity), trip_scale=float(trip_scale))
        self.stations[s.id] = s
        self.next_station_id += 1
        self._cell_index = None
        return s

    def set_offline(self, s: Station) -> None:
        s.online = False
        self._cell_index = None

    def add_ev(self, station: Station, full_range_km: float) -> EV:
        if free_docks(station) <= 0:
            raise InvariantError(f"station {station.id} has no free dock for a new EV")
        ev = EV(self.next_ev_id, full_range_km, full_range_km, station=station.id)
        self.evs[ev.id] = ev
        station.parked.append(ev.id)
        self.next_ev_id += 1
        return ev

    # -- queries ------------------------------------------------------------

    def cell_index(self) -> dict[HexCoord, list[int]]:
        """Online station ids per cell, ascending."""
        if self._cell_index is None:
            idx: dict[HexCoord, list[int]] = {}
            for sid in sorted(self.stations):
                s = self.stations[sid]
                if s.online:
                    idx.setdefault(s.cell, []).append(sid)
            self._cell_index = idx
        return self._cell_index

    def online_station_ids(self) -> list[int]:
        return [sid for sid, s in self.stations.items() if s.online]

    def in_trip_count(self) -> int:
        return sum(1 for ev in self.evs.values() if ev.order is not None)

    def parked_count(self) -> int:
        return sum(len(s.parked) for s in self.stations.values())

    def available_docks(self, s: Station) -> int:
        """Free docks not already promised to an in-flight order."""
        return s.docks - len(s.parked) - self.inbound.get(s.id, 0)

    def check_invariants(self) -> None:
        seen: set[int] = set()
        for s in self.stations.values():
            if len(s.parked) > s.docks:
                raise InvariantError(f"station {s.id} holds {len(s.parked)} EVs in {s.docks} docks")
            if s.parked and not s.online:
                raise InvariantError(f"offline station {s.id} still holds EVs {s.parked}")
            for eid in s.parked:
                ev = self.evs[eid]
                if ev.station != s.id or ev.order is not None:
                    raise InvariantError(f"EV {eid} listed at station {s.id} but status is {ev.station}/{ev.order}")
                if eid in seen:
                    raise InvariantError(f"EV {eid} parked twice")
                seen.add(eid)
        for o in self.active_orders.values():
            ev = self.evs[o.ev]
            if ev.order != o.id or ev.station is not None:
                raise InvariantError(f"EV {o.ev} of order {o.id} has status {ev.station}/{ev.order}")
            if o.ev in seen:
                raise InvariantError(f"EV {o.ev} both parked and in trip")
            seen.add(o.ev)
            if o.incentive_paid > o.price + 1e-12:
                raise InvariantError(f"order {o.id} incentive {o.incentive_paid} exceeds price {o.price}")
        if seen != set(self.evs):
            raise InvariantError(f"EV conservation broken: {len(self.evs)} EVs, {len(seen)} accounted for")
        for ev in self.evs.values():
            if not (0.0 <= ev.range_km <= ev.full_range_km + 1e-9):
                raise InvariantError(f"EV {ev.id} range {ev.range_km} outside [0, {ev.full_range_km}]")
        if self.budget_remaining < 0:
            raise InvariantError(f"budget went negative: {self.budget_remaining}")

    # -- snapshot -----------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        def station_dict(s: Station) -> dict[str, Any]:
            d = asdict(s)
            d["cell"] = [s.cell.q, s.cell.r]
            d["pos"] = list(s.pos)
            return d

        return {
            "version": SNAPSHOT_VERSION,
            "grid": {
                "radius": self.grid.radius,
                "cell_size_km": self.grid.cell_size_km,
                "valid_cells": [list(c.as_tuple()) for c in self.grid.sorted_valid_cells()],
            },
            "clock": self.clock,
            "budget_remaining": None if math.isinf(self.budget_remaining) else self.budget_remaining,
            "stations": [station_dict(s) for s in self.stations.values()],
            "evs": [asdict(ev) for ev in self.evs.values()],
            "active_orders": [asdict(o) for o in self.active_orders.values()],
            "next_ids": [self.next_station_id, self.next_ev_id, self.next_order_id],
            "rng": {
                "demand": self.demand_rng.bit_generator.state,
                "expansion": self.expansion_rng.bit_generator.state,
                "behavior": self.behavior_rng.bit_generator.state,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "WorldState":
        if d.get("version") != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {d.get('version')!r}, expected {SNAPSHOT_VERSION}")
        g = d["grid"]
        grid = GridIndex(g["radius"], g["cell_size_km"], frozenset(HexCoord(*c) for c in g["valid_cells"]))
        w = cls(grid=grid)
        for sd in d["stations"]:
            sd = dict(sd)
            sd["cell"] = HexCoord(*sd["cell"])
            sd["pos"] = tuple(sd["pos"])
            s = Station(**sd)
            w.stations[s.id] = s
        for ed in d["evs"]:
            ev = EV(**ed)
            w.evs[ev.id] = ev
        for od in d["active_orders"]:
            o = Order(**od)
            w.active_orders[o.id] = o
            w.inbound[o.actual_dest] = w.inbound.get(o.actual_dest, 0) + 1
        w.clock = d["clock"]
        b = d["budget_remaining"]
        w.budget_remaining = math.inf if b is None else b
        w.next_station_id, w.next_ev_id, w.next_order_id = d["next_ids"]
        for name in ("demand", "expansion", "behavior"):
            rng = np.random.default_rng()
            rng.bit_generator.state = d["rng"][name]
            setattr(w, f"{name}_rng", rng)
        return w


def free_docks(s: Station) -> int:
    return s.docks - len(s.parked)


def is_empty(s: Station) -> bool:
    return len(s.parked) == 0


def eligible_evs(s: Station, required_km: float, world: WorldState) -> list[int]:
    """Parked EVs at ``s`` that can cover ``required_km``, longest range first."""
    if required_km < 0:
        raise ValueError(f"required_km must be >= 0, got {required_km}")
    evs = [world.evs[eid] for eid in s.parked]
    ok = [ev for ev in evs if ev.range_km >= required_km]
    ok.sort(key=lambda ev: (-ev.range_km, ev.id))
    return [ev.id for ev in ok]


def stations_in_cells(cells: Iterable[HexCoord], world: WorldState) -> list[int]:
    idx = world.cell_index()
    out: list[int] = []
    for c in set(cells):
        out.extend(idx.get(c, ()))
    return sorted(out)
