import math

import numpy as np
import pytest

from evrebalance.config import scenario_from_dict


def small_raw(n_stations: int = 12, radius: int = 2, cell: float = 3.0, evs: int = 3, docks: int = 6,
              seed: int = 0, **sections) -> dict:
    """A compact scenario dict: stations scattered over a radius-``radius`` board."""
    rng = np.random.default_rng(seed)
    span = cell * radius * 0.8
    stations = []
    while len(stations) < n_stations:
        x, y = rng.uniform(-span, span, size=2)
        if math.hypot(x, y) < span:
            stations.append({"pos": [float(x), float(y)], "docks": docks, "evs": evs})
    raw = {
        "version": 1,
        "grid": {"radius": radius, "cell_size_km": cell},
        "sim": {"full_range_km": 20.0, "episode_days": 1},
        "demand": {},
        "expansion": {},
        "stations": stations,
    }
    for k, v in sections.items():
        raw[k] = {**raw.get(k, {}), **v}
    return raw


def small_scenario(**kw):
    return scenario_from_dict(small_raw(**kw))


@pytest.fixture
def scenario():
    return small_scenario()


# one summary line per acceptance check, printed at the end of the session
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance checks")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
