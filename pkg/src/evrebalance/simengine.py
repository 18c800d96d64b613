"""Discrete-time simulation of the EV sharing system with incentive-based rebalancing.

One call to :meth:`Simulator.step` advances the world by one 10-minute timestep:

1. expansion events are sampled and applied,
2. rental requests are sampled,
3. each request is served by the longest-range eligible EV at its origin or lost,
4. for every new order the agent of the destination cell may propose another
   station; an offer is made (budget permitting) and accepted with probability p,
5. orders due this step complete and their EVs are parked and discharged,
6. every parked EV charges for one timestep.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import IO, Any, Optional, Protocol

import numpy as np

from . import demand as dm
from . import expansion as ex
from .config import ConfigError, Scenario, SimConfig
from .hexgrid import DIRECTIONS, HexCoord, hex_distance, point_to_hex
from .world import EV, InvariantError, Order, Station, WorldState, eligible_evs

N_STREAMS = 5
DEMAND, EXPANSION, BEHAVIOR, POLICY, LAYOUT = range(N_STREAMS)


class PolicyError(RuntimeError):
    """A policy proposed a station that fails the eligibility predicate."""


def seed_streams(seed: int) -> list[np.random.Generator]:
    """Independent generators for demand, expansion, behaviour, policy and layout."""
    children = np.random.SeedSequence(int(seed)).spawn(N_STREAMS)
    return [np.random.default_rng(c) for c in children]


@dataclass
class Offer:
    order: int
    proposed_dest: int
    cost: float
    extra_km: float


@dataclass
class Decision:
    order: Order
    agent_cell: HexCoord
    proposed: Optional[int]
    offer: Optional[Offer]
    accepted: bool
    realized_dest: int


@dataclass
class StepOutcome:
    t: int
    generated: int = 0
    satisfied: int = 0
    lost: int = 0
    gmv: float = 0.0
    incentives_paid: float = 0.0
    repositions: int = 0
    offers: int = 0
    completed: list[Order] = field(default_factory=list)
    decisions: list[Decision] = field(default_factory=list)
    events: list[Any] = field(default_factory=list)


class Policy(Protocol):
    name: str

    def decide(self, sim: "Simulator", world: WorldState, order: Order, t: int) -> Optional[int]:
        """Return a station id to reposition ``order`` to, or None."""


class NoRebalancing:
    name = "NR"

    def decide(self, sim, world, order, t):
        return None


# -- pure helpers -----------------------------------------------------------


def charge(ev: EV, dt_min: float, config: SimConfig) -> None:
    if config.charge_time_min == 0:
        ev.range_km = ev.full_range_km
    else:
        ev.range_km = min(ev.full_range_km, ev.range_km + ev.full_range_km * dt_min / config.charge_time_min)


def discharge(ev: EV, km: float) -> None:
    left = ev.range_km - km
    if left < 0:
        if left < -1e-9:
            raise InvariantError(f"EV {ev.id} would drop to {left:.6f} km; eligibility check missed it")
        left = 0.0
    ev.range_km = left


def station_distance(a: Station, b: Station) -> float:
    return math.hypot(a.pos[0] - b.pos[0], a.pos[1] - b.pos[1])


def incentive_cost(extra_km: float, price: float, config: SimConfig) -> float:
    return min(config.incentive_coeff * extra_km * extra_km, config.incentive_cap, price)


def is_eligible(world: WorldState, order: Order, s: Station, detour_factor: float) -> bool:
    """Eligibility predicate shared by every policy and by offer validation."""
    dest = world.stations[order.dest]
    if not s.online or s.id == order.dest:
        return False
    if hex_distance(s.cell, dest.cell) > 1:
        return False
    if world.available_docks(s) < 1:
        return False
    extra = station_distance(s, dest)
    return world.evs[order.ev].range_km >= order.trip_km + extra * detour_factor


def candidate_stations(world: WorldState, order: Order, detour_factor: float,
                       cells: Optional[list[HexCoord]] = None) -> list[int]:
    """Eligible reposition targets for ``order`` (ascending id), optionally restricted to ``cells``."""
    dest_cell = world.stations[order.dest].cell
    if cells is None:
        cells = [dest_cell] + [dest_cell + d for d in DIRECTIONS]
    idx = world.cell_index()
    out = []
    for c in cells:
        for sid in idx.get(c, ()):
            if is_eligible(world, order, world.stations[sid], detour_factor):
                out.append(sid)
    out.sort()
    return out


def make_offer(order: Order, proposed_dest: Optional[int], world: WorldState, config: SimConfig) -> Optional[Offer]:
    if proposed_dest is None or proposed_dest == order.dest:
        return None
    s = world.stations.get(proposed_dest)
    if s is None or not is_eligible(world, order, s, config.demand.detour_factor):
        raise PolicyError(f"station {proposed_dest} is not an eligible target for order {order.id}")
    extra = station_distance(s, world.stations[order.dest])
    cost = incentive_cost(extra, order.price, config)
    if cost > world.budget_remaining:
        return None
    return Offer(order.id, proposed_dest, cost, extra)


def user_response(offer: Offer, p: float, rng: np.random.Generator) -> bool:
    return bool(rng.random() < p)


def accept_offer(world: WorldState, order: Order, offer: Offer) -> None:
    world.inbound[order.actual_dest] -= 1
    order.actual_dest = offer.proposed_dest
    order.incentive_paid = offer.cost
    order.extra_km = offer.extra_km
    world.inbound[offer.proposed_dest] = world.inbound.get(offer.proposed_dest, 0) + 1
    world.budget_remaining = max(0.0, world.budget_remaining - offer.cost)


# -- the simulator ----------------------------------------------------------


class Simulator:
    """Runs one episode on a :class:`WorldState` built from a scenario."""

    def __init__(self, scenario: Scenario, check_invariants: bool = False, trace: Optional[IO[str]] = None):
        self.scenario = scenario
        self.config = scenario.config
        self.check = check_invariants
        self.trace = trace

    @property
    def demand(self) -> dm.DemandModel:
        return self.config.demand

    def init(self, seed: int) -> WorldState:
        rngs = seed_streams(seed)
        cfg = self.config
        world = WorldState(grid=self.scenario.grid, budget_remaining=cfg.budget,
                           demand_rng=rngs[DEMAND], expansion_rng=rngs[EXPANSION], behavior_rng=rngs[BEHAVIOR])
        layout = rngs[LAYOUT]
        for i, spec in enumerate(self.scenario.stations):
            cell = point_to_hex(spec.pos[0], spec.pos[1], world.grid)
            if not world.grid.is_valid(cell):
                raise ConfigError(f"stations[{i}].pos lies in cell {cell.as_tuple()}, which is not a valid cell")
            pop, scale = self.demand.station_traits(layout)
            if spec.popularity is not None:
                pop = spec.popularity
            if spec.trip_scale is not None:
                scale = spec.trip_scale
            s = world.add_station(spec.pos, spec.docks, cell, pop, scale)
            for _ in range(spec.evs):
                world.add_ev(s, cfg.full_range_km)
        self.policy_rng = rngs[POLICY]
        return world

    def step(self, world: WorldState, policy: Optional[Policy] = None) -> StepOutcome:
        cfg = self.config
        t = world.clock
        out = StepOutcome(t)

        events = ex.step(world, t, cfg.expansion, traits=self.demand.station_traits)
        if events:
            ex.apply(world, events, cfg.full_range_km)
            out.events = events

        requests = dm.sample_orders(world, t, self.demand)
        out.generated = len(requests)
        new_orders: list[Order] = []
        for req in requests:
            origin = world.stations[req.origin]
            cands = eligible_evs(origin, req.trip_km, world)
            if not cands:
                out.lost += 1
                continue
            order = self._dispatch(world, req, cands[0], t)
            new_orders.append(order)
            out.satisfied += 1
            out.gmv += order.price

        if policy is not None and new_orders:
            begin = getattr(policy, "begin_step", None)
            if begin is not None:
                begin(self, world, new_orders, t)
            feedback = getattr(policy, "feedback", None)
            for order in new_orders:
                proposed = policy.decide(self, world, order, t)
                offer = make_offer(order, proposed, world, cfg)
                accepted = False
                if offer is not None:
                    out.offers += 1
                    accepted = user_response(offer, cfg.accept_prob, world.behavior_rng)
                    if accepted:
                        accept_offer(world, order, offer)
                        out.repositions += 1
                        out.incentives_paid += offer.cost
                d = Decision(order, world.stations[order.dest].cell, proposed, offer, accepted, order.actual_dest)
                out.decisions.append(d)
                if feedback is not None:
                    feedback(self, world, d, t)

        for oid in sorted(o.id for o in world.active_orders.values() if o.t_end == t):
            out.completed.append(self._complete(world, world.active_orders.pop(oid)))

        dt = cfg.timestep_min
        for s in world.stations.values():
            for eid in s.parked:
                ev = world.evs[eid]
                if ev.range_km < ev.full_range_km:
                    charge(ev, dt, cfg)

        world.clock += 1
        if self.check:
            world.check_invariants()
        if self.trace is not None:
            self.trace.write(json.dumps(trace_record(out, world), sort_keys=True) + "\n")
        return out

    def _dispatch(self, world: WorldState, req: dm.OrderRequest, ev_id: int, t: int) -> Order:
        origin = world.stations[req.origin]
        origin.parked.remove(ev_id)
        order = Order(world.next_order_id, req.origin, req.dest, req.dest, ev_id, t, req.duration,
                      req.trip_km, self.demand.price(req.duration))
        world.next_order_id += 1
        ev = world.evs[ev_id]
        ev.station = None
        ev.order = order.id
        world.active_orders[order.id] = order
        world.inbound[req.dest] = world.inbound.get(req.dest, 0) + 1
        return order

    def _complete(self, world: WorldState, order: Order) -> Order:
        ev = world.evs[order.ev]
        discharge(ev, order.trip_km + order.extra_km * self.demand.detour_factor)
        world.inbound[order.actual_dest] -= 1
        target = world.stations[order.actual_dest]
        if not target.online or len(target.parked) >= target.docks:
            # operator moves the EV to the closest station with room, free of charge
            target = ex.nearest_open_station(world, target.pos)
            if target is None:
                target = _nearest_with_room(world, world.stations[order.actual_dest].pos)
        target.parked.append(ev.id)
        ev.station = target.id
        ev.order = None
        return order


def _nearest_with_room(world: WorldState, pos) -> Station:
    best = None
    for s in world.stations.values():
        if s.online and len(s.parked) < s.docks:
            key = (math.hypot(s.pos[0] - pos[0], s.pos[1] - pos[1]), s.id)
            if best is None or key < best[0]:
                best = (key, s)
    if best is None:
        raise ex.ScenarioError("no free dock anywhere in the network for a returning EV")
    return best[1]


def trace_record(out: StepOutcome, world: WorldState) -> dict[str, Any]:
    return {
        "t": out.t,
        "generated": out.generated,
        "satisfied": out.satisfied,
        "lost": out.lost,
        "gmv": round(out.gmv, 10),
        "incentives": round(out.incentives_paid, 10),
        "repositions": out.repositions,
        "completed": [o.id for o in out.completed],
        "events": [type(e).__name__ for e in out.events],
        "online_stations": sum(len(v) for v in world.cell_index().values()),
        "parked": world.parked_count(),
        "in_trip": len(world.active_orders),
        "budget_remaining": None if math.isinf(world.budget_remaining) else world.budget_remaining,
    }


@dataclass
class EpisodeTotals:
    generated: int = 0
    satisfied: int = 0
    lost: int = 0
    gmv: float = 0.0
    incentives: float = 0.0
    repositions: int = 0
    offers: int = 0

    def add(self, out: StepOutcome) -> None:
        self.generated += out.generated
        self.satisfied += out.satisfied
        self.lost += out.lost
        self.gmv += out.gmv
        self.incentives += out.incentives_paid
        self.repositions += out.repositions
        self.offers += out.offers


def run(scenario: Scenario, seed: int, policy: Optional[Policy] = None, steps: Optional[int] = None,
        check_invariants: bool = False, trace: Optional[IO[str]] = None,
        on_step=None) -> tuple[EpisodeTotals, WorldState]:
    """Simulate a whole episode and return the totals and the final world."""
    sim = Simulator(scenario, check_invariants, trace)
    world = sim.init(seed)
    if policy is not None and hasattr(policy, "reset"):
        policy.reset(sim, world)
    totals = EpisodeTotals()
    n = scenario.config.episode_steps if steps is None else steps
    for _ in range(n):
        out = sim.step(world, policy)
        totals.add(out)
        if on_step is not None:
            on_step(sim, world, out)
    return totals, world
