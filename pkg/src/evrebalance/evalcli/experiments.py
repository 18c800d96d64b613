"""Paired experiments: policy construction, multi-seed evaluation and CSV output."""

from __future__ import annotations

import csv
import io
import multiprocessing as mp
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

from ..config import ConfigError, Scenario, scenario_from_dict
from ..marl.agent import CascadePolicy
from ..marl.heuristics import HeuristicPolicy
from ..marl.ppo import PPOConfig
from ..marl.training import load_nets
from ..simengine import NoRebalancing
from .metrics import MetricsReport, run_episode

HEURISTICS = ("NR", "RND", "REV", "DMD")
LEARNED = ("ac-PG", "ac-PPO")
POLICIES = HEURISTICS + LEARNED
REPORT_COLUMNS = [f.name for f in fields(MetricsReport)]


def canonical_policy(name: str) -> str:
    for p in POLICIES:
        if p.lower() == name.lower():
            return p
    raise ConfigError(f"unknown policy {name!r}; expected one of {', '.join(POLICIES)}")


def policy_factory(name: str, scenario: Scenario, checkpoint: Optional[str] = None) -> Callable[[], object]:
    """Zero-argument constructor for a fresh policy instance (one per episode)."""
    name = canonical_policy(name)
    if name == "NR":
        return NoRebalancing
    if name in HEURISTICS:
        return lambda: HeuristicPolicy(name)
    if checkpoint is None:
        raise ConfigError(f"policy {name} needs --checkpoint")
    path = Path(checkpoint)
    if not path.is_file():
        raise ConfigError(f"checkpoint file not found: {path}")
    nets = load_nets(path)
    cfg = PPOConfig.from_dict(scenario.ppo)
    return lambda: CascadePolicy(nets, cfg, name=name)


@dataclass
class ExperimentSpec:
    scenario: Scenario
    policy: str
    seeds: list[int]
    checkpoint: Optional[str] = None
    overrides: dict[str, Any] = field(default_factory=dict)
    steps: Optional[int] = None

    def resolved(self) -> Scenario:
        return self.scenario.with_overrides(**self.overrides)


def _worker(job: tuple) -> MetricsReport:
    raw, path, policy, checkpoint, seed, steps = job
    scenario = scenario_from_dict(raw, path)
    return run_episode(scenario, policy_factory(policy, scenario, checkpoint), seed, canonical_policy(policy), steps)


def evaluate(spec: ExperimentSpec, workers: int = 1) -> list[MetricsReport]:
    """One paired report per seed, in seed-list order whatever the worker count."""
    sc = spec.resolved()
    policy_factory(spec.policy, sc, spec.checkpoint)  # fail fast on bad names or checkpoints
    jobs = [(sc.raw, sc.path, spec.policy, spec.checkpoint, int(s), spec.steps) for s in spec.seeds]
    return run_jobs(jobs, workers)


def run_jobs(jobs: Sequence[tuple], workers: int = 1) -> list[MetricsReport]:
    if workers <= 1 or len(jobs) <= 1:
        return [_worker(j) for j in jobs]
    methods = mp.get_all_start_methods()
    ctx = mp.get_context("fork" if "fork" in methods else "spawn")
    with ctx.Pool(min(workers, len(jobs))) as pool:
        return pool.map(_worker, jobs, chunksize=1)


def reports_csv(reports: Sequence[MetricsReport]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.row())
    return buf.getvalue()
