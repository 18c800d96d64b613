import math

import numpy as np
import pytest
from scipy import stats

from evrebalance import demand as dm
from evrebalance.demand import DemandModel
from evrebalance.hexgrid import ORIGIN, GridIndex, HexCoord, point_to_hex
from evrebalance.world import Order, WorldState


def flat_model(**kw) -> DemandModel:
    flat = np.full(144, 1.0 / 144)
    return DemandModel(weekday_profile=flat, weekend_profile=flat, **kw)


def ring_world(n: int = 10, radius_km: float = 4.0) -> WorldState:
    w = WorldState(grid=GridIndex(3, 6.0))
    for k in range(n):
        a = 2 * math.pi * k / n
        pos = (radius_km * math.cos(a) * (1 + 0.1 * k), radius_km * math.sin(a))
        w.add_station(pos, 8, point_to_hex(*pos, w.grid))
    return w


def test_uniform_profile_rate():
    w = ring_world()
    m = flat_model(base_rate=5.5)
    for s in w.stations:
        assert dm.intensity(s, 7, w, m) == pytest.approx(5.5 / 144)


def test_offline_station_excluded():
    w = ring_world()
    w.set_offline(w.stations[3])
    with pytest.raises(ValueError):
        dm.intensity(3, 0, w, flat_model())
    m = flat_model(base_rate=5000.0)
    reqs = dm.sample_orders(w, 0, m, np.random.default_rng(0))
    assert reqs and all(3 not in (r.origin, r.dest) for r in reqs)


def test_no_stations_no_orders():
    w = WorldState(grid=GridIndex(1))
    assert dm.sample_orders(w, 0, DemandModel(), np.random.default_rng(0)) == []


def test_weekday_profile_has_two_peaks_evening_higher():
    p = DemandModel().weekday_profile
    hours = (np.arange(144) + 0.5) / 6
    peaks = dm.local_maxima(p)
    assert len(peaks) == 2
    morning, evening = sorted(peaks)
    assert 7 <= hours[morning] <= 9 and 17 <= hours[evening] <= 19
    assert p[evening] >= p[morning]
    window = (hours >= 7) & (hours < 9)
    assert p[window].sum() > 12 / 144


def test_profile_validation():
    with pytest.raises(ValueError, match="sum to 1"):
        DemandModel(weekday_profile=np.ones(144))
    with pytest.raises(ValueError, match="144"):
        DemandModel(weekday_profile=np.ones(10) / 10)
    with pytest.raises(ValueError):
        DemandModel(detour_factor=0.5)


def test_duration_mean_and_value():
    m = DemandModel()
    assert m.mean_duration_min() == pytest.approx(46.0)
    d = m.sample_duration_min(np.random.default_rng(1), 1_000_000)
    assert abs(d.mean() / 46.0 - 1) < 0.05
    w = ring_world(2)
    assert dm.expected_order_value(m, w, 0) == pytest.approx(0.0826 * 46, rel=1e-9)
    assert 0.0826 * 46 == pytest.approx(3.80, abs=0.005)


def test_price():
    m = DemandModel()
    assert dm.price(1, m) == pytest.approx(0.826)
    assert dm.price(8, m) == pytest.approx(2 * dm.price(4, m))
    with pytest.raises(ValueError):
        dm.price(0, m)


def test_request_invariants():
    w = ring_world()
    m = flat_model(base_rate=3000.0)
    rng = np.random.default_rng(5)
    for t in range(3):
        for r in dm.sample_orders(w, t, m, rng):
            assert r.origin != r.dest and r.duration >= 1
            a, b = w.stations[r.origin].pos, w.stations[r.dest].pos
            assert r.trip_km == pytest.approx(m.detour_factor * math.dist(a, b))


def test_tiny_decay_picks_nearest():
    w = ring_world()
    m = flat_model(dest_decay_km=1e-3)
    ids, p = dm.destination_weights(m, w, 0, 0)
    pos = np.array([w.stations[int(s)].pos for s in ids])
    d = np.hypot(*(pos - pos[0]).T)
    d[0] = np.inf
    assert p[int(np.argmin(d))] == pytest.approx(1.0)


def test_destination_chi_square():
    w = ring_world(10)
    m = flat_model(base_rate=0.0)
    ids, p = dm.destination_weights(m, w, 2, 0)
    # analytic weights recomputed independently from the gravity formula
    pos = np.array([w.stations[int(s)].pos for s in ids])
    pop = np.array([w.stations[int(s)].popularity for s in ids])
    logit = m.dest_popularity_exponent * np.log(pop) - np.hypot(*(pos - pos[2]).T) / m.dest_decay_km
    logit[2] = -np.inf
    want = np.exp(logit - logit.max())
    want /= want.sum()
    assert np.allclose(p, want)
    rng = np.random.default_rng(11)
    draws = rng.choice(len(ids), size=50_000, p=p)
    obs = np.bincount(draws, minlength=len(ids))
    keep = want > 0
    chi = stats.chisquare(obs[keep], 50_000 * want[keep])
    assert chi.pvalue > 1e-3


def test_daily_rate_matches_base_rate():
    w = ring_world(10)
    m = DemandModel(base_rate=5.5)
    rng = np.random.default_rng(2)
    days = 100
    total = sum(len(dm.sample_orders(w, t, m, rng)) for t in range(144 * days))
    assert abs(total / (10 * days) / 5.5 - 1) < 0.03


def test_forecast():
    w = ring_world(3)
    m = flat_model()
    ev = w.add_ev(w.stations[0], 150.0)
    pick, ret, val = dm.forecast(1, 5, w, m)
    assert ret == 0 and pick == pytest.approx(dm.intensity(1, 6, w, m))
    w.stations[0].parked.remove(ev.id)
    ev.station, ev.order = None, 0
    w.active_orders[0] = Order(0, 0, 1, 1, ev.id, 3, 3, 2.0, 2.5)
    assert dm.forecast(1, 5, w, m)[1] == 1
    assert val == pytest.approx(m.price_per_min * m.mean_duration_min())


def test_demand_stream_independent_of_world_state():
    w1, w2 = ring_world(), ring_world()
    for s in w2.stations.values():
        for _ in range(4):
            w2.add_ev(s, 150.0)
    m = flat_model(base_rate=500.0)
    r1 = dm.sample_orders(w1, 0, m, np.random.default_rng(9))
    r2 = dm.sample_orders(w2, 0, m, np.random.default_rng(9))
    assert [(r.origin, r.dest, r.duration) for r in r1] == [(r.origin, r.dest, r.duration) for r in r2]


def test_origin_bias_direction():
    w = WorldState(grid=GridIndex(3, 6.0))
    w.add_station((0.0, 0.0), 8, ORIGIN)
    w.add_station((18.0 * math.sqrt(3) / 2, 9.0), 8, HexCoord(3, 0))
    m = DemandModel(popularity_sd=0.0)
    t_morning, t_evening = 8 * 6, 18 * 6
    wm = dm.origin_weights(m, w, t_morning)
    we = dm.origin_weights(m, w, t_evening)
    assert wm[1] > wm[0]  # suburbs feed the morning peak
    assert we[0] > we[1]
