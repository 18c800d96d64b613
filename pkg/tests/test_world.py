import json

import pytest

from evrebalance.hexgrid import ORIGIN, GridIndex, HexCoord
from evrebalance.world import (
    InvariantError, WorldState, eligible_evs, free_docks, is_empty, stations_in_cells,
)


def small_world():
    w = WorldState(grid=GridIndex(2, 6.0))
    a = w.add_station((0.0, 0.0), 6, ORIGIN)
    b = w.add_station((6.0, 1.0), 6, HexCoord(1, 0))
    return w, a, b


def test_free_docks():
    w, a, _ = small_world()
    assert free_docks(a) == 6
    for _ in range(2):
        w.add_ev(a, 150.0)
    assert free_docks(a) == 4
    for _ in range(4):
        w.add_ev(a, 150.0)
    assert free_docks(a) == 0
    with pytest.raises(InvariantError):
        w.add_ev(a, 150.0)


def test_eligible_evs_filter_and_order():
    w, a, _ = small_world()
    e30 = w.add_ev(a, 150.0)
    e80 = w.add_ev(a, 150.0)
    e80b = w.add_ev(a, 150.0)
    e30.range_km, e80.range_km, e80b.range_km = 30.0, 80.0, 80.0
    assert eligible_evs(a, 50.0, w) == [e80.id, e80b.id]
    assert eligible_evs(a, 0.0, w) == [e80.id, e80b.id, e30.id]
    assert eligible_evs(a, 100.0, w) == []
    with pytest.raises(ValueError):
        eligible_evs(a, -1.0, w)


def test_is_empty_flips_on_pickup():
    w, a, _ = small_world()
    assert is_empty(a)
    ev = w.add_ev(a, 150.0)
    assert not is_empty(a)
    a.parked.remove(ev.id)
    assert is_empty(a)


def test_stations_in_cells():
    w, a, b = small_world()
    assert stations_in_cells([], w) == []
    c = w.add_station((0.5, 0.5), 4, ORIGIN)
    assert stations_in_cells([ORIGIN], w) == [a.id, c.id]
    w.set_offline(a)
    assert stations_in_cells([ORIGIN, HexCoord(1, 0)], w) == [b.id, c.id]


def test_invariant_checks_catch_corruption():
    w, a, b = small_world()
    ev = w.add_ev(a, 150.0)
    w.check_invariants()
    b.parked.append(ev.id)  # same EV in two places
    with pytest.raises(InvariantError):
        w.check_invariants()
    b.parked.clear()
    ev.range_km = -1.0
    with pytest.raises(InvariantError, match="range"):
        w.check_invariants()
    ev.range_km = 10.0
    w.budget_remaining = -0.5
    with pytest.raises(InvariantError, match="budget"):
        w.check_invariants()


def test_snapshot_round_trip():
    w, a, b = small_world()
    w.add_ev(a, 150.0)
    w.add_ev(b, 150.0).range_km = 42.5
    w.clock = 17
    w.budget_remaining = 12.0
    text = w.to_json()
    w2 = WorldState.from_dict(json.loads(text))
    assert w2.to_json() == text
    assert w2.demand_rng.random() == w.demand_rng.random()


def test_snapshot_version_checked():
    w, _, _ = small_world()
    d = w.to_dict()
    d["version"] = 99
    with pytest.raises(ValueError, match="version"):
        WorldState.from_dict(d)
