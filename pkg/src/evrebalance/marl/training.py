"""Training loop: collect an episode with the current weights, update, evaluate, checkpoint."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from ..config import Scenario
from ..neural.checkpoint import assign_arrays, read_arrays, write_arrays
from ..simengine import NoRebalancing, run
from .agent import CascadePolicy
from .networks import Nets
from .ppo import DivergenceError, PPOConfig, make_optimizer, pg_update, ppo_update

DIAG_COLUMNS = ["round", "episode_seed", "n_experiences", "mean_reward", "policy_loss", "value_loss", "entropy",
                "intra_loss", "mean_ratio", "clip_frac", "eval_d_ds", "eval_d_nv"]


def save_nets(nets: Nets, path) -> None:
    write_arrays(path, nets.named_params())


def load_nets(path, like: Optional[Nets] = None) -> Nets:
    nets = like.copy() if like is not None else Nets.create(np.random.default_rng(0))
    assign_arrays(nets.named_params(), read_arrays(path), str(path))
    return nets


def collect(scenario: Scenario, nets: Nets, cfg: PPOConfig, seed: int, episode: int = 0,
            steps: Optional[int] = None) -> tuple[list, object]:
    """One training episode with sampled inter-grid actions; returns (experiences, totals)."""
    policy = CascadePolicy(nets, cfg, training=True)
    policy.episode = episode
    n = steps if steps is not None else int(round(cfg.episode_days * scenario.config.steps_per_day))
    totals, _ = run(scenario, seed, policy, steps=n)
    return policy.take_experiences(), totals


def evaluate_nv(scenario: Scenario, nets: Nets, cfg: PPOConfig, seeds: list[int],
                steps: Optional[int] = None, nr_cache: Optional[dict] = None) -> tuple[float, float]:
    """Mean (delta DS in points, delta NV in percent) over ``seeds`` against NR."""
    dds, dnv = [], []
    for s in seeds:
        res, _ = run(scenario, s, CascadePolicy(nets, cfg), steps=steps)
        key = (s, steps)
        if nr_cache is not None and key in nr_cache:
            nr = nr_cache[key]
        else:
            nr, _ = run(scenario, s, NoRebalancing(), steps=steps)
            if nr_cache is not None:
                nr_cache[key] = nr
        ds = res.satisfied / max(1, res.satisfied + res.lost)
        nr_ds = nr.satisfied / max(1, nr.satisfied + nr.lost)
        dds.append(100.0 * (ds - nr_ds))
        nr_nv = nr.gmv - nr.incentives
        dnv.append(100.0 * ((res.gmv - res.incentives) - nr_nv) / nr_nv if nr_nv else 0.0)
    return float(np.mean(dds)), float(np.mean(dnv))


@dataclass
class TrainResult:
    nets: Nets
    best: Nets
    best_nv: float
    diagnostics: list[dict]
    final_path: Optional[Path] = None
    best_path: Optional[Path] = None
    diverged: Optional[str] = None


def train(scenario: Scenario, cfg: PPOConfig, seed: int, algo: str = "ppo", rounds: Optional[int] = None,
          out_dir: Optional[Path] = None, nets: Optional[Nets] = None, eval_steps: Optional[int] = None,
          log: Optional[Callable[[str], None]] = None,
          on_round: Optional[Callable[[int, Nets], None]] = None) -> TrainResult:
    """Train a shared cascaded policy for ``rounds`` rounds (one episode each).

    Episode seeds and the initial weights derive from ``seed`` only, so two runs
    with the same arguments produce identical diagnostics and checkpoints.
    Evaluation episodes use seeds disjoint from the training seeds.
    """
    if algo not in ("ppo", "pg"):
        raise ValueError(f"unknown algorithm {algo!r}")
    rounds = cfg.rounds if rounds is None else rounds
    root = np.random.SeedSequence([int(seed), 0x5EED])
    init_ss, update_ss, episode_ss = root.spawn(3)
    nets = Nets.create(np.random.default_rng(init_ss)) if nets is None else nets
    opt = make_optimizer(nets, cfg, algo)
    update_rng = np.random.default_rng(update_ss)
    episode_seeds = np.random.default_rng(episode_ss).integers(0, 2**31 - 1, size=max(rounds, 1))
    eval_seeds = [10_000_000 + int(seed) * 100 + k for k in range(cfg.eval_seeds)]
    nr_cache: dict = {}
    diags: list[dict] = []
    best, best_nv = nets.copy(), -math.inf
    update = ppo_update if algo == "ppo" else pg_update
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    diverged = None
    for k in range(rounds):
        batch, totals = collect(scenario, nets, cfg, int(episode_seeds[k]), episode=k)
        row = {"round": k, "episode_seed": int(episode_seeds[k]), "n_experiences": len(batch),
               "mean_reward": float(np.mean([e.reward for e in batch])) if batch else 0.0}
        last_good = nets.copy()
        try:
            stats = update(batch, nets, cfg, opt, update_rng, 0.0 if k < cfg.warmup_rounds else 1.0)
        except DivergenceError as e:
            nets = last_good
            diverged = f"round {k}: {e}"
            if log:
                log(f"diverged in {diverged}; keeping the last good weights")
            break
        row.update({k2: stats.as_dict()[k2] for k2 in ("policy_loss", "value_loss", "entropy", "intra_loss",
                                                       "mean_ratio", "clip_frac")})
        row["eval_d_ds"], row["eval_d_nv"] = "", ""
        if cfg.eval_every and ((k + 1) % cfg.eval_every == 0 or k == rounds - 1):
            dds, dnv = evaluate_nv(scenario, nets, cfg, eval_seeds, eval_steps, nr_cache)
            row["eval_d_ds"], row["eval_d_nv"] = dds, dnv
            if dnv > best_nv:
                best, best_nv = nets.copy(), dnv
                if out_dir is not None:
                    save_nets(best, out_dir / "best.ckpt")
        diags.append(row)
        if on_round is not None:
            on_round(k, nets)
        if log:
            log(" ".join(f"{c}={_fmt(row.get(c))}" for c in DIAG_COLUMNS))
    result = TrainResult(nets, best, best_nv, diags, diverged=diverged)
    if out_dir is not None:
        result.final_path = out_dir / "final.ckpt"
        save_nets(nets, result.final_path)
        result.best_path = out_dir / "best.ckpt"
        if not result.best_path.exists():
            save_nets(best, result.best_path)
        (out_dir / "diagnostics.csv").write_text(diagnostics_csv(diags))
    return result


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def diagnostics_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=DIAG_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: (repr(round(r[c], 10)) if isinstance(r.get(c), float) else r.get(c, "")) for c in DIAG_COLUMNS})
    return buf.getvalue()
