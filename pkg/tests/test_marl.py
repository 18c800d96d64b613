import math

import numpy as np
import pytest

from evrebalance import simengine as se
from evrebalance.demand import DemandModel
from evrebalance.hexgrid import ORIGIN, GridIndex, HexCoord
from evrebalance.marl import ppo
from evrebalance.marl.agent import CascadePolicy, action_cells, intra_select
from evrebalance.marl.heuristics import HeuristicPolicy
from evrebalance.marl.networks import (
    N_ACTIONS, IntraNet, Nets, inter_forward, inter_policy, masked_log_probs,
)
from evrebalance.marl.observation import OBS_DIM, Forecast, encode_observation
from evrebalance.marl.rewards import RewardWeights, cell_baseline, regularized_reward, station_reward
from evrebalance.neural import tensor as T
from evrebalance.world import Order, WorldState

from conftest import small_scenario


class FixedForecast(Forecast):
    """Forecast with hand-set demand gaps and order values per station."""

    def __init__(self, world, gaps, values):
        self.world, self.t, self.model = world, 0, DemandModel()
        self._blocks = {}
        self.gaps, self.values = gaps, values
        self.pickups, self.returns = {}, {}

    def demand_gap(self, s):
        return self.gaps[s]

    def order_value(self, s):
        return self.values[s]


def exp(obs=None, action=0, logp=-math.log(7), reward=1.0, value=0.0, episode=0, agent=(0, 0), step=0, seq=0):
    return ppo.Experience(np.zeros(OBS_DIM) if obs is None else obs, action, logp, np.ones(N_ACTIONS, bool),
                          np.zeros(16), reward, value, episode, agent, step, seq)


# -- rewards ----------------------------------------------------------------


def two_station_world():
    w = WorldState(grid=GridIndex(2, 3.0))
    w.add_station((0.0, 0.0), 6, ORIGIN)
    w.add_station((2.0, 0.0), 6, ORIGIN)
    return w


def test_station_reward_example():
    w = two_station_world()
    fc = FixedForecast(w, {0: 0.0, 1: 2.0}, {0: 3.8, 1: 3.8})
    assert station_reward(w, 0, 1, 0, RewardWeights(1, 2, 0.3), fc=fc) == pytest.approx(6.6)
    w.add_ev(w.stations[1], 150.0)  # no longer empty: the bonus disappears
    assert station_reward(w, 0, 1, 0, fc=fc) == pytest.approx(4.6)
    assert station_reward(w, 0, 0, 0, fc=fc) == pytest.approx(3.8 + 2.0)


def test_regularized_reward_example():
    w = two_station_world()
    fc = FixedForecast(w, {0: 1.0, 1: 2.0}, {0: 3.8, 1: 3.8})
    assert cell_baseline(w, ORIGIN, 0, fc=fc) == pytest.approx(3.8 * 1.5)
    assert regularized_reward(6.6, ORIGIN, w, 0, 0.8, fc=fc) == pytest.approx(11.16)
    assert regularized_reward(6.6, ORIGIN, w, 0, 0.0, fc=fc) == 6.6
    assert regularized_reward(6.6, HexCoord(1, 0), w, 0, 0.8, fc=fc) == 6.6


def test_cell_baseline_independent_of_action():
    sc = small_scenario()
    sim = se.Simulator(sc)
    w = sim.init(0)
    fc = Forecast(w, 5, sim.demand)
    cell = w.stations[0].cell
    base = [regularized_reward(0.0, cell, w, 5, 0.8, fc=fc) for _ in range(N_ACTIONS)]
    assert len(set(base)) == 1


# -- observations -------------------------------------------------------------


def test_observation_empty_world():
    w = WorldState(grid=GridIndex(2, 3.0))
    o = encode_observation(w, ORIGIN, 36, DemandModel())
    assert o.shape == (156,)
    assert not o[:152].any()
    assert o[152] == pytest.approx(math.sin(2 * math.pi * 36 / 144))


def test_observation_mean_range():
    w = WorldState(grid=GridIndex(2, 3.0))
    s = w.add_station((0.0, 0.0), 6, ORIGIN)
    w.add_ev(s, 150.0).range_km = 75.0
    w.add_ev(s, 150.0).range_km = 112.5
    o = encode_observation(w, ORIGIN, 0, DemandModel())
    assert o[2] == 2 and o[3] == pytest.approx(0.625) and o[0] == 1 and o[1] == 6
    assert np.array_equal(o, encode_observation(w, ORIGIN, 0, DemandModel()))


# -- networks ---------------------------------------------------------------


def test_zero_policy_head_is_uniform():
    nets = Nets.create(np.random.default_rng(0), inter_hidden=(8, 8, 8, 8))
    nets.inter.params[-4][:] = 0
    logits, _, emb = inter_policy(np.random.default_rng(1).normal(size=OBS_DIM), nets.inter)
    assert np.allclose(np.exp(masked_log_probs(logits)), 1 / 7)
    assert emb.shape == (8,)


def test_sampled_actions_follow_softmax():
    logits = np.array([0.3, -1.0, 2.0, 0.0, 0.5, -0.2, 1.0])
    p = np.exp(masked_log_probs(logits))
    draws = np.random.default_rng(2).choice(7, size=100_000, p=p)
    assert np.abs(np.bincount(draws, minlength=7) / 1e5 - p).max() < 0.01


def test_masked_log_probs_zero_masked_mass():
    mask = np.array([1, 0, 1, 0, 0, 0, 1], bool)
    p = np.exp(masked_log_probs(np.zeros(7), mask))
    assert p[~mask].max() == 0 and np.allclose(p[mask], 1 / 3)


# -- advantages -------------------------------------------------------------


def test_advantage_examples():
    G, A = ppo.returns_and_advantages([exp(reward=5.0, value=3.0)], 0.95, normalize=False)
    assert A[0] == 2.0
    batch = [exp(reward=1.0, step=k) for k in range(3)]
    G, _ = ppo.returns_and_advantages(batch, 0.95, normalize=False)
    assert np.allclose(G, [2.8525, 1.95, 1.0])
    batch = [exp(reward=1.0, value=v, step=k) for k, v in enumerate([2.8525, 1.95, 1.0])]
    assert np.allclose(ppo.advantage(batch, 0.95, normalize=False), 0.0)


def test_returns_split_by_agent_and_gap():
    batch = ppo.sort_experiences([exp(step=0, agent=(1, 0)), exp(step=0), exp(step=2)])
    G, _ = ppo.returns_and_advantages(batch, 0.5, normalize=False)
    assert np.allclose(G, [1.25, 1.0, 1.0])  # two steps apart: 1 + 0.5^2


def test_advantage_normalization():
    rng = np.random.default_rng(3)
    batch = [exp(reward=float(r), value=float(v), step=k)
             for k, (r, v) in enumerate(zip(rng.normal(size=300), rng.normal(size=300)))]
    A = ppo.advantage(batch, 0.9)
    assert abs(A.mean()) < 1e-9 and abs(A.var() - 1) < 1e-6


# -- the clipped objective --------------------------------------------------


def rollout_batch(n=40, seed=0, nets=None):
    rng = np.random.default_rng(seed)
    nets = nets or Nets.create(rng, inter_hidden=(6, 6, 6, 6), intra_hidden=(4, 4))
    obs = rng.normal(size=(n, OBS_DIM))
    logits, values, _ = inter_forward(nets.inter, obs)
    out = []
    for i in range(n):
        mask = rng.random(N_ACTIONS) < 0.7
        mask[0] = True
        lp = masked_log_probs(logits.data[i], mask)
        a = int(rng.choice(N_ACTIONS, p=np.exp(lp)))
        out.append(ppo.Experience(obs[i], a, float(lp[a]), mask, rng.normal(size=16), float(rng.normal()),
                                  float(values.data[i]), 0, (i % 3, 0), i // 3, 0))
    return nets, ppo.sort_experiences(out)


def test_ratio_is_one_at_old_parameters():
    cfg = ppo.PPOConfig()
    nets, batch = rollout_batch()
    arr = ppo.to_arrays(batch, cfg)
    parts = ppo.loss(nets, arr, cfg, T.Tape())
    assert np.abs(parts.ratio - 1).max() <= 1e-12
    unclipped = -np.mean(parts.ratio * arr.A)
    assert parts.policy == pytest.approx(unclipped, abs=1e-15)
    assert parts.clip_frac == 0.0


def test_clip_branch():
    A = np.array([2.0, -2.0])
    ratio = T.Tensor(np.array([1.5, 0.5]))
    obj = T.minimum(T.mul(ratio, A), T.mul(T.clip(ratio, 0.8, 1.2), A))
    assert obj.data[0] == 1.2 * 2.0
    assert obj.data[1] == 0.8 * -2.0


def test_pg_loss_ignores_clip_eps():
    nets, batch = rollout_batch(seed=1)
    out = []
    for eps in (0.1, 0.2, 0.5):
        cfg = ppo.PPOConfig(clip_eps=eps)
        tape = T.Tape()
        parts = ppo.loss(nets, ppo.to_arrays(batch, cfg), cfg, tape, "pg")
        out.append((parts.total.item(), [g.copy() for g in T.backward(tape, parts.total)]))
    for tot, grads in out[1:]:
        assert tot == out[0][0]
        assert all(np.array_equal(a, b) for a, b in zip(grads, out[0][1]))


def test_zero_advantage_zero_policy_gradient():
    cfg = ppo.PPOConfig(entropy_coeff=0.0, value_coeff=0.0, intra_coeff=0.0)
    nets, batch = rollout_batch(seed=2)
    arr = ppo.to_arrays(batch, cfg)
    arr.A[:] = 0.0
    for kind in ("ppo", "pg"):
        tape = T.Tape()
        parts = ppo.loss(nets, arr, cfg, tape, kind)
        assert all(not g.any() for g in T.backward(tape, parts.total))


@pytest.mark.parametrize("soft", [False, True])
def test_full_loss_gradient_finite_differences(soft):
    cfg = ppo.PPOConfig(intra_softmax=soft)
    nets, batch = rollout_batch(n=12, seed=4)
    if soft:
        rng = np.random.default_rng(9)
        for e in batch:
            k = int(rng.integers(1, 4))
            e.intra_candidates = rng.normal(size=(k, 16))
            e.intra_choice = int(rng.integers(k))
            e.intra_logp = -0.7
    arr = ppo.to_arrays(batch, cfg)
    # move away from the old parameters so the ratio and the clip are exercised
    for p in nets.params:
        p += 0.05 * np.random.default_rng(5).normal(size=p.shape)
    tape = T.Tape()
    got = T.backward(tape, ppo.loss(nets, arr, cfg, tape).total)
    emb = inter_forward(nets.inter, arr.obs)[2].data

    def f():
        return ppo.loss(nets, arr, cfg, T.Tape(), frozen_embedding=emb).total.item()

    h = 1e-6
    worst = 0.0
    rng = np.random.default_rng(6)
    for p, g in zip(nets.params, got):
        for _ in range(4):
            i = tuple(int(rng.integers(s)) for s in p.shape)
            old = p[i]
            p[i] = old + h
            up = f()
            p[i] = old - h
            dn = f()
            p[i] = old
            fd = (up - dn) / (2 * h)
            worst = max(worst, abs(fd - g[i]) / max(abs(fd) + abs(g[i]), 1e-8))
    assert worst < 1e-4


def test_update_moves_toward_positive_advantage():
    cfg = ppo.PPOConfig(learning_rate=1e-3, epochs=5, entropy_coeff=0.0)
    rng = np.random.default_rng(0)
    nets = Nets.create(rng, inter_hidden=(8, 8, 8, 8), intra_hidden=(4, 4))
    obs = rng.normal(size=OBS_DIM)
    lp = masked_log_probs(inter_policy(obs, nets.inter)[0])
    batch = [ppo.Experience(obs, a, float(lp[a]), np.ones(7, bool), np.zeros(16), 1.0 if a == 3 else 0.0, 0.0,
                            0, (a, 0), 0) for a in range(7)]
    before = np.exp(masked_log_probs(inter_policy(obs, nets.inter)[0]))[3]
    ppo.ppo_update(batch, nets, cfg, ppo.make_optimizer(nets, cfg), np.random.default_rng(1))
    after = np.exp(masked_log_probs(inter_policy(obs, nets.inter)[0]))[3]
    assert after > before


# -- intra-grid selection and heuristics ------------------------------------


def order_world():
    """Destination 0 in the origin cell; stations 1, 2 in the same cell, 3 one cell east."""
    w = WorldState(grid=GridIndex(2, 3.0))
    for pos, cell in [((0.0, 0.0), ORIGIN), ((0.5, 0.5), ORIGIN), ((-0.5, 0.3), ORIGIN),
                      ((3.0, 0.5), HexCoord(1, 0))]:
        w.add_station(pos, 4, cell)
    ev = w.add_ev(w.stations[0], 150.0)
    w.stations[0].parked.remove(ev.id)
    ev.station, ev.order = None, 0
    o = Order(0, 0, 0, 0, ev.id, 0, 3, 2.0, 2.5)
    w.active_orders[0] = o
    w.inbound[0] = 1
    return w, o


def gap_scorer(in_dim):
    """An intra net whose score increases with the demand-gap feature only."""
    net = IntraNet(hidden=(1, 1), in_dim=in_dim)
    for p in net.params:
        p[...] = 0.0
    net.params[0][3, 0] = 1.0
    net.params[2][0, 0] = 1.0
    net.params[4][0, 0] = 1.0
    return net


def intra_nets():
    nets = Nets.create(np.random.default_rng(0), inter_hidden=(4, 4, 4, 4), intra_hidden=(1, 1))
    nets.intra = gap_scorer(16 + 4)
    return nets


def test_intra_select_prefers_larger_gap():
    w, o = order_world()
    fc = FixedForecast(w, {0: 0.0, 1: 3.0, 2: -1.0, 3: 5.0}, {s: 3.8 for s in range(4)})
    ch = intra_select(ORIGIN, o, w, np.zeros(4), intra_nets(), fc, 0.1, 2.0, 1.3)
    assert ch.station == 1 and set(ch.scores) == {0, 1, 2}
    ch = intra_select(HexCoord(1, 0), o, w, np.zeros(4), intra_nets(), fc, 0.1, 2.0, 1.3)
    assert ch.station == 3 and list(ch.scores) == [3]


def test_intra_select_destination_best_means_no_reposition():
    w, o = order_world()
    fc = FixedForecast(w, {0: 9.0, 1: 3.0, 2: -1.0, 3: 5.0}, {s: 3.8 for s in range(4)})
    assert intra_select(ORIGIN, o, w, np.zeros(4), intra_nets(), fc, 0.1, 2.0, 1.3).station is None


def test_intra_select_no_eligible():
    w, o = order_world()
    for _ in range(4):
        w.add_ev(w.stations[3], 150.0)
    fc = FixedForecast(w, {s: 1.0 for s in range(4)}, {s: 3.8 for s in range(4)})
    ch = intra_select(HexCoord(1, 0), o, w, np.zeros(4), intra_nets(), fc, 0.1, 2.0, 1.3)
    assert ch.station is None and ch.features is None


def test_intra_select_invariant_to_score_shift():
    w, o = order_world()
    fc = FixedForecast(w, {0: 0.1, 1: 0.4, 2: 0.3, 3: 5.0}, {s: 3.8 for s in range(4)})
    nets = Nets.create(np.random.default_rng(3), inter_hidden=(4, 4, 4, 4), intra_hidden=(5, 5))
    emb = np.random.default_rng(4).normal(size=4)
    a = intra_select(ORIGIN, o, w, emb, nets, fc, 0.1, 2.0, 1.3)
    nets.intra.params[-1] += 17.0
    b = intra_select(ORIGIN, o, w, emb, nets, fc, 0.1, 2.0, 1.3)
    assert a.station == b.station
    assert np.allclose(np.array(list(b.scores.values())) - np.array(list(a.scores.values())), 17.0)


class StubSim:
    demand = DemandModel()


def test_dmd_picks_largest_gap():
    w, o = order_world()
    pol = HeuristicPolicy("DMD")
    pol._fc = FixedForecast(w, {0: 0.0, 1: -1.0, 2: 3.0, 3: 1.0}, {s: 1.0 for s in range(4)})
    assert pol.decide(StubSim(), w, o, 0) == 2


def test_rev_picks_highest_value_ties_to_lowest_id():
    w, o = order_world()
    pol = HeuristicPolicy("REV")
    pol._fc = FixedForecast(w, {s: 0.0 for s in range(4)}, {0: 1.0, 1: 4.0, 2: 2.0, 3: 4.0})
    assert pol.decide(StubSim(), w, o, 0) == 1


def test_rnd_uniform():
    w, o = order_world()
    pol = HeuristicPolicy("RND", np.random.default_rng(0))
    picks = [pol.decide(StubSim(), w, o, 0) for _ in range(100_000)]
    k = 4  # stations 1, 2, 3 and the destination itself
    freq = {s: picks.count(s) / len(picks) for s in (None, 1, 2, 3)}
    assert all(abs(f - 1 / k) < 0.01 for f in freq.values())


def test_nr_never_offers(scenario):
    tot, _ = se.run(scenario, 2, HeuristicPolicy("NR"), steps=300)
    assert tot.offers == 0 and tot.incentives == 0.0


class CheckingPolicy:
    """Wraps a policy and checks every proposal against the eligibility predicate."""

    def __init__(self, inner):
        self.inner, self.name, self.n = inner, inner.name, 0

    def reset(self, sim, world):
        getattr(self.inner, "reset", lambda *a: None)(sim, world)

    def begin_step(self, sim, world, orders, t):
        self.inner.begin_step(sim, world, orders, t)

    def decide(self, sim, world, order, t):
        s = self.inner.decide(sim, world, order, t)
        self.n += 1
        if s is not None:
            assert se.is_eligible(world, order, world.stations[s], sim.demand.detour_factor)
            assert world.stations[s].cell in action_cells(world.stations[order.dest].cell)
        return s


@pytest.mark.parametrize("make", [
    lambda: HeuristicPolicy("RND"),
    lambda: HeuristicPolicy("DMD"),
    lambda: CascadePolicy(Nets.create(np.random.default_rng(0)), training=True, rng=np.random.default_rng(1)),
])
def test_masking_soundness(make):
    sc = small_scenario(n_stations=20, docks=4, evs=3, demand={"base_rate": 15.0})
    pol = CheckingPolicy(make())
    se.run(sc, 5, pol, steps=288, check_invariants=True)
    assert pol.n > 400


def test_cascade_records_experiences():
    sc = small_scenario()
    pol = CascadePolicy(Nets.create(np.random.default_rng(0)), ppo.PPOConfig(intra_softmax=True), training=True,
                        rng=np.random.default_rng(1))
    tot, _ = se.run(sc, 1, pol, steps=144)
    ex = pol.take_experiences()
    assert len(ex) == tot.satisfied and pol.take_experiences() == []
    assert all(np.isfinite(e.logp) and e.logp <= 0 and e.intra_logp <= 0 for e in ex)
    with_cands = [e for e in ex if e.intra_candidates is not None]
    assert with_cands and all(0 <= e.intra_choice < len(e.intra_candidates) for e in with_cands)
