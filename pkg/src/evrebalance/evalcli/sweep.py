"""Parameter sweeps: one paired episode per (value, seed) plus per-value summaries."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import replace
from typing import Sequence

import numpy as np

from ..config import ConfigError
from .experiments import ExperimentSpec, canonical_policy, policy_factory, run_jobs
from .metrics import NA, MetricsReport

# CLI axis name -> scenario override name
AXES = {
    "expansion-speed": "expansion_speed",
    "charge-time": "charge_time",
    "full-range": "full_range",
    "accept-prob": "accept_prob",
}
SUMMARY_METRICS = ("d_ds", "d_gmv", "d_nv", "repositions_per_extra_order")
COLUMNS = (["kind", "axis", "value", "policy", "seed", "ds", "nv", "repositions"]
           + [m for m in SUMMARY_METRICS]
           + [f"{m}_{q}" for m in SUMMARY_METRICS for q in ("q1", "q3")])


def axis_key(axis: str) -> str:
    a = axis.replace("_", "-").lower()
    if a not in AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {', '.join(AXES)}")
    return AXES[a]


def quartiles(values: Sequence[object]) -> tuple[object, object, object]:
    """(q1, median, q3) with linear interpolation; NA counts as +inf, non-finite results print as NA."""
    x = np.array([math.inf if v == NA else float(v) for v in values], dtype=float)
    if len(x) == 0:
        return NA, NA, NA
    x.sort()
    out = []
    for q in (0.25, 0.5, 0.75):
        pos = q * (len(x) - 1)
        lo, hi = int(math.floor(pos)), int(math.ceil(pos))
        frac = pos - lo
        v = x[lo] if frac == 0 or x[lo] == x[hi] else x[lo] + frac * (x[hi] - x[lo])
        out.append(float(v) if math.isfinite(v) else NA)
    return out[0], out[1], out[2]


def sweep(spec: ExperimentSpec, axis: str, values: Sequence[float], workers: int = 1) -> list[dict]:
    """Long-format rows: one ``run`` row per (value, seed), then one ``summary`` row per value."""
    key = axis_key(axis)
    policy = canonical_policy(spec.policy)
    jobs, labels = [], []
    for v in values:
        sc = replace(spec, overrides={**spec.overrides, key: v}).resolved()
        policy_factory(policy, sc, spec.checkpoint)
        for s in spec.seeds:
            jobs.append((sc.raw, sc.path, policy, spec.checkpoint, int(s), spec.steps))
            labels.append(v)
    reports = run_jobs(jobs, workers)
    rows = [_run_row(axis, v, r) for v, r in zip(labels, reports)]
    for v in values:
        group = [r for lab, r in zip(labels, reports) if lab == v]
        rows.append(_summary_row(axis, v, policy, group))
    return rows


def _fmt(v) -> object:
    return repr(round(v, 10)) if isinstance(v, float) else v


def _run_row(axis: str, value: float, r: MetricsReport) -> dict:
    row = {c: "" for c in COLUMNS}
    row.update(kind="run", axis=axis, value=_fmt(float(value)), policy=r.policy, seed=r.seed, ds=_fmt(r.ds),
               nv=_fmt(r.nv), repositions=r.repositions)
    for m in SUMMARY_METRICS:
        row[m] = _fmt(getattr(r, m))
    return row


def _summary_row(axis: str, value: float, policy: str, group: list[MetricsReport]) -> dict:
    row = {c: "" for c in COLUMNS}
    row.update(kind="summary", axis=axis, value=_fmt(float(value)), policy=policy)
    for m in SUMMARY_METRICS:
        q1, med, q3 = quartiles([getattr(r, m) for r in group])
        row[m], row[f"{m}_q1"], row[f"{m}_q3"] = _fmt(med), _fmt(q1), _fmt(q3)
    return row


def sweep_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()
