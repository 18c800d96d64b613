"""Episode metrics and paired comparison against the no-rebalancing baseline."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Callable, Optional

from ..config import Scenario
from ..simengine import EpisodeTotals, NoRebalancing, run

NA = "NA"  # sentinel for an undefined repositions-per-extra-order


@dataclass
class MetricsReport:
    policy: str
    seed: int
    generated: int
    satisfied: int
    lost: int
    ds: float
    gmv: float
    incentives: float
    nv: float
    repositions: int
    offers: int
    nr_ds: float
    nr_gmv: float
    nr_nv: float
    d_ds: float  # percentage points
    d_gmv: float  # percent of the NR value
    d_nv: float  # percent of the NR value
    extra_satisfied: int
    repositions_per_extra_order: object  # float, or NA when extra_satisfied <= 0

    def row(self) -> dict[str, object]:
        return {f.name: _fmt(getattr(self, f.name)) for f in fields(self)}


def _fmt(v):
    if isinstance(v, float):
        return repr(round(v, 10))
    return v


def ds_of(t: EpisodeTotals) -> float:
    n = t.satisfied + t.lost
    return t.satisfied / n if n else 0.0


def _pct(a: float, b: float) -> float:
    return 100.0 * (a - b) / b if b else 0.0


def compare(policy: str, seed: int, res: EpisodeTotals, nr: EpisodeTotals) -> MetricsReport:
    ds, nr_ds = ds_of(res), ds_of(nr)
    nv, nr_nv = res.gmv - res.incentives, nr.gmv - nr.incentives
    extra = res.satisfied - nr.satisfied
    rpo = res.repositions / extra if extra > 0 else NA
    return MetricsReport(policy, seed, res.generated, res.satisfied, res.lost, ds, res.gmv, res.incentives, nv,
                         res.repositions, res.offers, nr_ds, nr.gmv, nr_nv, 100.0 * (ds - nr_ds),
                         _pct(res.gmv, nr.gmv), _pct(nv, nr_nv), extra, rpo)


def run_episode(scenario: Scenario, make_policy: Callable[[], object], seed: int, name: Optional[str] = None,
                steps: Optional[int] = None, nr_cache: Optional[dict] = None) -> MetricsReport:
    """Run one episode and its NR replay on the same demand and expansion streams."""
    policy = make_policy()
    label = name or getattr(policy, "name", type(policy).__name__)
    res, _ = run(scenario, seed, policy, steps=steps)
    key = (scenario.config_hash(), seed, steps)
    if nr_cache is not None and key in nr_cache:
        nr = nr_cache[key]
    else:
        nr, _ = run(scenario, seed, NoRebalancing(), steps=steps)
        if nr_cache is not None:
            nr_cache[key] = nr
    return compare(label, seed, res, nr)
