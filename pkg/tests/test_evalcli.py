import csv
import io
import math
import statistics

import numpy as np
import pytest
import yaml

from evrebalance.cli import main
from evrebalance.config import ConfigError
from evrebalance.evalcli.experiments import ExperimentSpec, evaluate, policy_factory, reports_csv
from evrebalance.evalcli.metrics import NA, compare, run_episode
from evrebalance.evalcli.sweep import quartiles, sweep, sweep_csv
from evrebalance.marl.ppo import PPOConfig
from evrebalance.marl.training import load_nets, save_nets, train
from evrebalance.simengine import EpisodeTotals, NoRebalancing

from conftest import small_raw, small_scenario

TINY_PPO = {"episode_days": 0.25, "epochs": 2, "eval_every": 2, "eval_seeds": 1, "rounds": 3}


@pytest.fixture
def cfg_path(tmp_path):
    raw = small_raw(ppo=TINY_PPO)
    p = tmp_path / "tiny.yaml"
    p.write_text(yaml.safe_dump(raw))
    return p


def read_csv(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


def totals(sat, lost, gmv=0.0, inc=0.0, rep=0):
    t = EpisodeTotals()
    t.generated, t.satisfied, t.lost, t.gmv, t.incentives, t.repositions = sat + lost, sat, lost, gmv, inc, rep
    return t


def test_metric_examples():
    r = compare("X", 0, totals(85, 15, 100.0, 5.0, 50), totals(40, 60, 90.0))
    assert r.ds == 0.85 and r.nv == 95.0
    assert r.d_ds == pytest.approx(45.0)
    assert r.repositions_per_extra_order == pytest.approx(50 / 45) and round(50 / 45, 2) == 1.11
    assert r.d_nv == pytest.approx(100 * 5 / 90)
    worse = compare("X", 0, totals(30, 70, 80.0, 1.0, 9), totals(40, 60, 90.0))
    assert worse.repositions_per_extra_order == NA


def test_nr_self_pairing(scenario):
    r = run_episode(scenario, NoRebalancing, 3, steps=200)
    assert (r.d_ds, r.d_gmv, r.d_nv, r.repositions) == (0.0, 0.0, 0.0, 0)
    assert r.nv == r.gmv and r.incentives == 0.0


def test_nv_identity_in_both_runs(scenario):
    spec = ExperimentSpec(scenario, "DMD", [0, 1], steps=200)
    for r in evaluate(spec):
        assert r.nv == pytest.approx(r.gmv - r.incentives)
        assert r.nr_nv == pytest.approx(r.nr_gmv)


def test_quartiles_match_brute_force():
    rng = np.random.default_rng(0)
    for n in range(1, 12):
        x = list(rng.normal(size=n))
        q1, med, q3 = quartiles(x)
        assert med == pytest.approx(statistics.median(x))
        assert q1 == pytest.approx(float(np.quantile(x, 0.25)))
        assert q3 == pytest.approx(float(np.quantile(x, 0.75)))
    assert quartiles([1.0, NA, NA]) == (NA, NA, NA)
    assert quartiles([1.0, 2.0, NA])[1] == 2.0


def test_sweep_cardinality_and_summaries(scenario):
    spec = ExperimentSpec(scenario, "DMD", [0, 1, 2, 3, 4], steps=60)
    rows = sweep(spec, "expansion-speed", [0, 1, 3])
    assert [r["kind"] for r in rows].count("run") == 15
    assert [r["kind"] for r in rows].count("summary") == 3
    for v in ("0.0", "1.0", "3.0"):
        runs = [float(r["d_ds"]) for r in rows if r["kind"] == "run" and r["value"] == v]
        summ = [r for r in rows if r["kind"] == "summary" and r["value"] == v][0]
        assert float(summ["d_ds"]) == pytest.approx(statistics.median(runs))
    assert sweep_csv(rows).count("\n") == 19


def test_sweep_accept_zero_no_change(scenario):
    rows = sweep(ExperimentSpec(scenario, "DMD", [0, 1], steps=100), "accept-prob", [0.0])
    assert all(float(r["d_ds"]) == 0.0 for r in rows)


def test_sweep_unknown_axis(scenario):
    with pytest.raises(ConfigError, match="axis"):
        sweep(ExperimentSpec(scenario, "NR", [0]), "gravity", [1.0])


def test_unknown_policy_and_missing_checkpoint(scenario, tmp_path):
    with pytest.raises(ConfigError, match="unknown policy"):
        policy_factory("GREEDY", scenario)
    with pytest.raises(ConfigError, match="checkpoint"):
        policy_factory("ac-PPO", scenario)
    with pytest.raises(ConfigError, match="not found"):
        policy_factory("ac-PPO", scenario, str(tmp_path / "nope.ckpt"))


def test_workers_do_not_change_results(scenario):
    spec = ExperimentSpec(scenario, "RND", [0, 1, 2], steps=150)
    assert reports_csv(evaluate(spec, 1)) == reports_csv(evaluate(spec, 3))


# -- training --------------------------------------------------------------


def test_zero_rounds_saves_initialisation(tmp_path):
    sc = small_scenario()
    res = train(sc, PPOConfig(**TINY_PPO), 4, rounds=0, out_dir=tmp_path)
    again = train(sc, PPOConfig(**TINY_PPO), 4, rounds=0)
    loaded = load_nets(tmp_path / "final.ckpt")
    assert all(np.array_equal(a, b) for a, b in zip(loaded.params, again.nets.params))
    assert res.diagnostics == []


def test_training_is_deterministic(tmp_path):
    sc = small_scenario()
    for d in ("a", "b"):
        train(sc, PPOConfig(**TINY_PPO), 9, out_dir=tmp_path / d)
    assert (tmp_path / "a" / "diagnostics.csv").read_bytes() == (tmp_path / "b" / "diagnostics.csv").read_bytes()
    assert (tmp_path / "a" / "final.ckpt").read_bytes() == (tmp_path / "b" / "final.ckpt").read_bytes()
    rows = read_csv(tmp_path / "a" / "diagnostics.csv")
    assert len(rows) == 3 and rows[1]["eval_d_nv"] != ""


def test_checkpoint_shape_mismatch_is_config_error(tmp_path, cfg_path, capsys):
    from evrebalance.marl.networks import Nets
    bad = Nets.create(np.random.default_rng(0), inter_hidden=(8, 8, 8, 8))
    save_nets(bad, tmp_path / "bad.ckpt")
    code = main(["eval", "--config", str(cfg_path), "--policy", "ac-PPO", "--checkpoint", str(tmp_path / "bad.ckpt"),
                 "--steps", "20", "--episodes", "1", "--out", str(tmp_path / "o")])
    assert code == 2
    err = capsys.readouterr().err
    assert "shape mismatch" in err and "inter.W0[156, 8]" in err and "inter.W0[156, 128]" in err


# -- command line ----------------------------------------------------------


def test_cli_eval_byte_identical(tmp_path, cfg_path):
    args = ["eval", "--config", str(cfg_path), "--policy", "DMD", "--seed", "7", "--steps", "100", "--episodes", "2"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b"), "--workers", "2"]) == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    man = yaml.safe_load((tmp_path / "a" / "manifest.yaml").read_text())
    assert man["seeds"] == [7, 8] and len(man["config_hash"]) == 64
    assert set(man["outputs"]) == {"metrics.csv"}


def test_cli_flags_before_command(tmp_path, cfg_path):
    code = main(["--config", str(cfg_path), "--steps", "30", "--out", str(tmp_path), "simulate"])
    assert code == 0
    assert (tmp_path / "trace_seed0.jsonl").read_text().count("\n") == 30


def test_cli_missing_config(tmp_path, capsys):
    code = main(["eval", "--config", str(tmp_path / "missing.yaml"), "--out", str(tmp_path)])
    assert code == 2
    assert "missing.yaml" in capsys.readouterr().err


def test_cli_bad_usage(capsys):
    assert main(["frobnicate"]) == 2
    assert "usage" in capsys.readouterr().err
    assert main(["eval", "--no-such-flag"]) == 2


def test_cli_bad_config_value(tmp_path):
    raw = small_raw(sim={"accept_prob": 3.0})
    p = tmp_path / "bad.yaml"
    p.write_text(yaml.safe_dump(raw))
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path / "o")]) == 2


def test_cli_sweep_accept_prob(tmp_path, cfg_path):
    code = main(["sweep", "--config", str(cfg_path), "--policy", "DMD", "--accept-prob", "0,0.5,1",
                 "--steps", "60", "--episodes", "2", "--out", str(tmp_path)])
    assert code == 0
    rows = read_csv(tmp_path / "sweep.csv")
    assert len(rows) == 2 * 3 + 3
    zero = [r for r in rows if r["value"] == "0.0"]
    assert all(float(r["d_ds"]) == 0.0 for r in zero)


def test_cli_train_then_eval(tmp_path, cfg_path):
    assert main(["train", "--config", str(cfg_path), "--rounds", "2", "--steps", "40", "--out", str(tmp_path)]) == 0
    for f in ("final.ckpt", "best.ckpt", "diagnostics.csv", "manifest.yaml"):
        assert (tmp_path / f).is_file()
    code = main(["eval", "--config", str(cfg_path), "--policy", "ac-ppo", "--checkpoint", str(tmp_path / "final.ckpt"),
                 "--steps", "40", "--episodes", "1", "--out", str(tmp_path / "ev")])
    assert code == 0
    row = read_csv(tmp_path / "ev" / "metrics.csv")[0]
    assert row["policy"] == "ac-PPO" and math.isfinite(float(row["nv"]))
