"""Parametric spatio-temporal demand generator and the one-step-ahead forecast.

Rental requests arrive as independent Poisson counts per online station and
timestep. The rate of station ``s`` at timestep ``t`` is::

    lambda_{s,t} = base_rate * profile(t) * w_s(t)

where ``profile`` is the per-timestep share of a day (weekday or weekend) and
``w_s(t)`` is the station's popularity times a commuting bias of its cell,
normalised to mean 1 over the online stations. Destinations follow a gravity
model (popularity times distance decay) and trip durations are lognormal.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .hexgrid import ORIGIN, HexCoord, hex_distance
from .world import WorldState

STEPS_PER_DAY = 144
TIMESTEP_MIN = 10.0


def _gauss(h: np.ndarray, mu: float, sd: float) -> np.ndarray:
    # circular in hours so the profile wraps smoothly over midnight
    d = (h - mu + 12.0) % 24.0 - 12.0
    return np.exp(-0.5 * (d / sd) ** 2)


def _hours() -> np.ndarray:
    return (np.arange(STEPS_PER_DAY) + 0.5) * 24.0 / STEPS_PER_DAY


def default_weekday_profile() -> np.ndarray:
    h = _hours()
    w = 0.04 + 1.0 * _gauss(h, 8.0, 1.2) + 1.3 * _gauss(h, 18.0, 1.6)
    return w / w.sum()


def default_weekend_profile() -> np.ndarray:
    h = _hours()
    w = 0.04 + _gauss(h, 14.5, 3.5)
    return w / w.sum()


def local_maxima(profile: np.ndarray) -> list[int]:
    """Indices of strict local maxima, treating the day as circular."""
    n = len(profile)
    return [i for i in range(n) if profile[i] > profile[i - 1] and profile[i] >= profile[(i + 1) % n]]


@dataclass
class DemandModel:
    base_rate: float = 5.5  # orders per station per day
    weekday_profile: np.ndarray = field(default_factory=default_weekday_profile)
    weekend_profile: np.ndarray = field(default_factory=default_weekend_profile)
    morning_origin_bias: float = 0.5
    evening_origin_bias: float = 0.5
    dest_decay_km: float = 6.0
    duration_logsd: float = 0.6
    duration_logmean: float = math.log(46.0) - 0.5 * 0.6 ** 2
    detour_factor: float = 1.3
    price_per_min: float = 0.0826
    popularity_sd: float = 0.5  # lognormal sd of station popularity
    value_coupling: float = 0.3  # trip_scale = popularity ** coupling (renormalised)
    dest_popularity_exponent: float = 1.0  # below 1, busy stations export more trips than they attract
    start_weekday: int = 0  # 0 = Monday

    def __post_init__(self) -> None:
        self.weekday_profile = np.asarray(self.weekday_profile, dtype=float)
        self.weekend_profile = np.asarray(self.weekend_profile, dtype=float)
        for name in ("weekday_profile", "weekend_profile"):
            p = getattr(self, name)
            if p.shape != (STEPS_PER_DAY,):
                raise ValueError(f"{name} must have {STEPS_PER_DAY} entries, got {p.shape}")
            if (p < 0).any():
                raise ValueError(f"{name} has negative weights")
            if abs(p.sum() - 1.0) > 1e-9:
                raise ValueError(f"{name} must sum to 1, sums to {p.sum():.12f}")
        if self.base_rate < 0:
            raise ValueError("base_rate must be >= 0")
        if not (0.0 <= self.morning_origin_bias <= 1.0 and 0.0 <= self.evening_origin_bias <= 1.0):
            raise ValueError("origin biases must lie in [0, 1]")
        if self.detour_factor < 1.0:
            raise ValueError("detour_factor must be >= 1")
        if self.dest_decay_km <= 0:
            raise ValueError("dest_decay_km must be > 0")

    # -- calendar -----------------------------------------------------------

    def is_weekend(self, t: int) -> bool:
        return (t // STEPS_PER_DAY + self.start_weekday) % 7 >= 5

    def profile(self, t: int) -> float:
        p = self.weekend_profile if self.is_weekend(t) else self.weekday_profile
        return float(p[t % STEPS_PER_DAY])

    def rush_factors(self, t: int) -> tuple[float, float]:
        """Morning and evening commute intensities in [0, 1] (zero at weekends)."""
        if self.is_weekend(t):
            return 0.0, 0.0
        h = np.array([(t % STEPS_PER_DAY + 0.5) * 24.0 / STEPS_PER_DAY])
        return float(_gauss(h, 8.0, 1.5)[0]), float(_gauss(h, 18.0, 1.5)[0])

    # -- durations and prices -------------------------------------------------

    def mean_duration_min(self, trip_scale: float = 1.0) -> float:
        return trip_scale * math.exp(self.duration_logmean + 0.5 * self.duration_logsd ** 2)

    def sample_duration_min(self, rng: np.random.Generator, size=None, trip_scale=1.0):
        return trip_scale * rng.lognormal(self.duration_logmean, self.duration_logsd, size)

    def price(self, duration_steps: int) -> float:
        if duration_steps < 1:
            raise ValueError(f"duration must be >= 1 timestep, got {duration_steps}")
        return self.price_per_min * duration_steps * TIMESTEP_MIN

    def station_traits(self, rng: np.random.Generator) -> tuple[float, float]:
        """Draw (popularity, trip_scale) for a new station.

        Popularity is lognormal with mean 1. Busier stations get longer (more
        valuable) trips through ``trip_scale = popularity ** coupling``,
        rescaled so the demand-weighted mean trip scale is exactly 1.
        """
        sd, rho = self.popularity_sd, self.value_coupling
        z = float(rng.standard_normal())
        popularity = math.exp(sd * z - 0.5 * sd * sd)
        # E[popularity * trip_scale] = 1 for z ~ N(0, 1)
        trip_scale = math.exp(rho * sd * z - ((1 + rho) ** 2 - 1) * sd * sd / 2)
        return popularity, trip_scale


def cell_radial_position(cell: HexCoord, radius: int) -> float:
    """-1 at the board center, +1 on the outermost ring."""
    if radius == 0:
        return 0.0
    return 2.0 * hex_distance(cell, ORIGIN) / radius - 1.0


class _NetworkArrays:
    """Vectorised view of the online stations, rebuilt when the network changes."""

    def __init__(self, world: WorldState):
        idx = world.cell_index()
        ids = sorted(sid for sids in idx.values() for sid in sids)
        self.ids = np.array(ids, dtype=np.int64)
        self.row = {sid: i for i, sid in enumerate(ids)}
        st = [world.stations[s] for s in ids]
        self.pos = np.array([s.pos for s in st], dtype=float).reshape(-1, 2)
        self.popularity = np.array([s.popularity for s in st], dtype=float)
        self.trip_scale = np.array([s.trip_scale for s in st], dtype=float)
        self.radial = np.array([cell_radial_position(s.cell, world.grid.radius) for s in st], dtype=float)
        self.token = world._cell_index


def _arrays(world: WorldState) -> _NetworkArrays:
    cache = world.__dict__.setdefault("_demand_cache", {})
    arr = cache.get("arrays")
    idx = world.cell_index()
    if arr is None or arr.token is not idx:
        arr = _NetworkArrays(world)
        cache["arrays"] = arr
        cache["rates"] = {}
    return arr


def origin_weights(model: DemandModel, world: WorldState, t: int) -> np.ndarray:
    """Per online station weight ``w_s(t)``, mean 1 (aligned with the sorted online ids)."""
    arr = _arrays(world)
    if len(arr.ids) == 0:
        return np.zeros(0)
    m, e = model.rush_factors(t)
    bias = 1.0 + model.morning_origin_bias * m * arr.radial - model.evening_origin_bias * e * arr.radial
    w = arr.popularity * bias
    mean = w.mean()
    return w / mean if mean > 0 else np.ones_like(w)


def rates(model: DemandModel, world: WorldState, t: int) -> np.ndarray:
    """Poisson means for all online stations at timestep ``t``."""
    arr = _arrays(world)
    cache = world.__dict__["_demand_cache"]["rates"]
    key = (id(model), t)
    r = cache.get(key)
    if r is None:
        if len(cache) > 8:
            cache.clear()
        r = model.base_rate * model.profile(t) * origin_weights(model, world, t)
        cache[key] = r
    return r


def intensity(s: int, t: int, world: WorldState, model: DemandModel) -> float:
    station = world.stations[s]
    if not station.online:
        raise ValueError(f"station {s} is offline")
    arr = _arrays(world)
    return float(rates(model, world, t)[arr.row[s]])


def destination_weights(model: DemandModel, world: WorldState, origin: int, t: int) -> tuple[np.ndarray, np.ndarray]:
    """Destination ids and probabilities for a trip leaving ``origin`` at ``t``."""
    arr = _arrays(world)
    i = arr.row[origin]
    d = np.hypot(*(arr.pos - arr.pos[i]).T)
    m, e = model.rush_factors(t)
    # commuting flows run opposite to the origin bias: inward in the morning
    attract = 1.0 - model.morning_origin_bias * m * arr.radial + model.evening_origin_bias * e * arr.radial
    logits = model.dest_popularity_exponent * np.log(arr.popularity) + np.log(attract) - d / model.dest_decay_km
    logits[i] = -np.inf
    logits -= logits.max()
    p = np.exp(logits)
    p /= p.sum()
    return arr.ids, p


@dataclass
class OrderRequest:
    origin: int
    dest: int
    duration: int  # timesteps
    trip_km: float
    duration_min: float = 0.0


def sample_orders(world: WorldState, t: int, model: DemandModel,
                  rng: Optional[np.random.Generator] = None) -> list[OrderRequest]:
    """Draw this timestep's rental requests.

    Consumes only ``rng`` (the world's demand stream by default) and depends
    only on the online station set, so the stream is identical under every
    rebalancing policy.
    """
    rng = world.demand_rng if rng is None else rng
    arr = _arrays(world)
    if len(arr.ids) < 2:
        return []
    lam = rates(model, world, t)
    counts = rng.poisson(lam)
    out: list[OrderRequest] = []
    for i in np.flatnonzero(counts):
        origin = int(arr.ids[i])
        ids, p = destination_weights(model, world, origin, t)
        dests = rng.choice(len(ids), size=int(counts[i]), p=p)
        mins = model.sample_duration_min(rng, int(counts[i]), arr.trip_scale[i])
        for j, dur_min in zip(dests, mins):
            steps = max(1, int(round(dur_min / TIMESTEP_MIN)))
            km = model.detour_factor * float(np.hypot(*(arr.pos[j] - arr.pos[i])))
            out.append(OrderRequest(origin, int(ids[j]), steps, km, float(dur_min)))
    return out


def returns_by_station(world: WorldState, t: int) -> Counter:
    """Number of in-flight orders that complete at ``t``, per actual destination."""
    return Counter(o.actual_dest for o in world.active_orders.values() if o.t_end == t)


def expected_order_value(model: DemandModel, world: WorldState, s: int) -> float:
    return model.price_per_min * model.mean_duration_min(world.stations[s].trip_scale)


def forecast(s: int, t: int, world: WorldState, model: DemandModel,
             returns: Optional[Counter] = None) -> tuple[float, float, float]:
    """(expected pickups, expected returns, expected order value) at ``t + 1``."""
    if returns is None:
        returns = returns_by_station(world, t + 1)
    return (intensity(s, t + 1, world, model), float(returns.get(s, 0)), expected_order_value(model, world, s))


def price(duration: int, model: DemandModel) -> float:
    return model.price(duration)
