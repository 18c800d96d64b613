"""Scenario files: simulator configuration, board, and initial stations.

A scenario is a YAML document::

    version: 1
    grid:      {radius: 3, cell_size_km: 6.0, valid_cells: all}
    sim:       {full_range_km: 150, charge_time_min: 300, accept_prob: 1.0, ...}
    demand:    {base_rate: 5.5, ...}
    expansion: {deploy_rate_per_day: 0.5, close_rate_per_day: 0.3, speed: 1.0, ...}
    stations:  [{pos: [x_km, y_km], docks: 8, evs: 3}, ...]
    ppo:       {...}   # optional, see marl.PPOConfig

Every key is listed in README.md with its default.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .demand import DemandModel
from .expansion import ExpansionModel
from .hexgrid import GridError, GridIndex, HexCoord

SCENARIO_VERSION = 1


class ConfigError(ValueError):
    """Malformed scenario or override; the message names the offending key."""


@dataclass
class SimConfig:
    timestep_min: float = 10.0
    steps_per_day: int = 144
    cell_size_km: float = 6.0
    full_range_km: float = 150.0
    charge_time_min: float = 300.0
    accept_prob: float = 1.0
    budget: float = math.inf
    incentive_coeff: float = 0.1  # currency per km^2 of extra distance
    incentive_cap: float = 2.0
    episode_days: float = 7.0
    demand: DemandModel = field(default_factory=DemandModel)
    expansion: ExpansionModel = field(default_factory=ExpansionModel)

    def __post_init__(self) -> None:
        if not 0.0 <= self.accept_prob <= 1.0:
            raise ConfigError(f"sim.accept_prob must lie in [0, 1], got {self.accept_prob}")
        for key in ("timestep_min", "cell_size_km", "full_range_km", "episode_days"):
            if getattr(self, key) <= 0:
                raise ConfigError(f"sim.{key} must be > 0, got {getattr(self, key)}")
        for key in ("charge_time_min", "budget", "incentive_coeff", "incentive_cap"):
            if getattr(self, key) < 0:
                raise ConfigError(f"sim.{key} must be >= 0, got {getattr(self, key)}")
        if self.steps_per_day != 144 or self.timestep_min != 10.0:
            raise ConfigError("sim.timestep_min/steps_per_day are fixed at 10 min / 144 steps")

    @property
    def episode_steps(self) -> int:
        return int(round(self.episode_days * self.steps_per_day))


@dataclass
class StationSpec:
    pos: tuple[float, float]
    docks: int
    evs: int
    popularity: Optional[float] = None
    trip_scale: Optional[float] = None


@dataclass
class Scenario:
    config: SimConfig
    grid: GridIndex
    stations: list[StationSpec]
    ppo: dict[str, Any] = field(default_factory=dict)
    raw: dict[str, Any] = field(default_factory=dict)
    path: Optional[str] = None

    def with_overrides(self, **overrides: Any) -> "Scenario":
        """Copy with top-level experiment overrides applied (see ``OVERRIDE_KEYS``)."""
        raw = copy.deepcopy(self.raw)
        for name, value in overrides.items():
            if value is None:
                continue
            if name not in OVERRIDE_KEYS:
                raise ConfigError(f"unknown override {name!r}; expected one of {sorted(OVERRIDE_KEYS)}")
            section, key = OVERRIDE_KEYS[name]
            raw.setdefault(section, {})[key] = value
        return scenario_from_dict(raw, self.path)

    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


# experiment override name -> (section, key)
OVERRIDE_KEYS: dict[str, tuple[str, str]] = {
    "expansion_speed": ("expansion", "speed"),
    "charge_time": ("sim", "charge_time_min"),
    "full_range": ("sim", "full_range_km"),
    "accept_prob": ("sim", "accept_prob"),
    "budget": ("sim", "budget"),
    "episode_days": ("sim", "episode_days"),
    "learning_rate": ("ppo", "learning_rate"),
    "epochs": ("ppo", "epochs"),
    "rounds": ("ppo", "rounds"),
    "train_days": ("ppo", "episode_days"),
}


def _build(cls, section: str, data: Any, skip: tuple[str, ...] = ()):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{section} must be a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)} - set(skip)
    kwargs = {}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"unknown key {section}.{key}")
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def scenario_from_dict(raw: dict[str, Any], path: Optional[str] = None) -> Scenario:
    if not isinstance(raw, dict):
        raise ConfigError("scenario must be a mapping")
    allowed = {"version", "name", "grid", "sim", "demand", "expansion", "stations", "ppo"}
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"unknown key {key}")
    if raw.get("version", SCENARIO_VERSION) != SCENARIO_VERSION:
        raise ConfigError(f"version: unsupported scenario version {raw.get('version')!r}")

    g = dict(raw.get("grid") or {})
    for key in g:
        if key not in {"radius", "cell_size_km", "valid_cells"}:
            raise ConfigError(f"unknown key grid.{key}")
    if "radius" not in g:
        raise ConfigError("missing key grid.radius")
    cells = g.get("valid_cells", "all")
    try:
        valid = frozenset() if cells in (None, "all") else frozenset(HexCoord(int(q), int(r)) for q, r in cells)
        grid = GridIndex(int(g["radius"]), float(g.get("cell_size_km", 6.0)), valid)
    except (GridError, TypeError, ValueError) as exc:
        raise ConfigError(f"grid: {exc}") from exc

    demand_raw = dict(raw.get("demand") or {})
    for key in ("weekday_profile", "weekend_profile"):
        if key in demand_raw:
            p = np.asarray(demand_raw[key], dtype=float)
            demand_raw[key] = p / p.sum() if p.sum() > 0 else p
    demand = _build(DemandModel, "demand", demand_raw)
    exp_raw = dict(raw.get("expansion") or {})
    if "placement_weights" in exp_raw and exp_raw["placement_weights"] is not None:
        exp_raw["placement_weights"] = {HexCoord(int(q), int(r)): float(w) for q, r, w in exp_raw["placement_weights"]}
    expansion = _build(ExpansionModel, "expansion", exp_raw)
    sim_raw = dict(raw.get("sim") or {})
    if sim_raw.get("budget") in (None, "inf"):
        sim_raw.pop("budget", None)
    if sim_raw.get("cell_size_km", grid.cell_size_km) != grid.cell_size_km:
        raise ConfigError("sim.cell_size_km disagrees with grid.cell_size_km")
    sim_raw["cell_size_km"] = grid.cell_size_km
    config = _build(SimConfig, "sim", sim_raw, skip=("demand", "expansion"))
    config.demand = demand
    config.expansion = expansion

    st_raw = raw.get("stations")
    if not st_raw:
        raise ConfigError("missing key stations (at least one initial station is required)")
    stations = []
    for i, sd in enumerate(st_raw):
        if not isinstance(sd, dict):
            raise ConfigError(f"stations[{i}] must be a mapping")
        for key in sd:
            if key not in {"pos", "docks", "evs", "popularity", "trip_scale"}:
                raise ConfigError(f"unknown key stations[{i}].{key}")
        for key in ("pos", "docks", "evs"):
            if key not in sd:
                raise ConfigError(f"missing key stations[{i}].{key}")
        spec = StationSpec((float(sd["pos"][0]), float(sd["pos"][1])), int(sd["docks"]), int(sd["evs"]),
                           sd.get("popularity"), sd.get("trip_scale"))
        if spec.docks < 1 or not 0 <= spec.evs <= spec.docks:
            raise ConfigError(f"stations[{i}]: need docks >= 1 and 0 <= evs <= docks")
        stations.append(spec)

    ppo = raw.get("ppo") or {}
    if not isinstance(ppo, dict):
        raise ConfigError("ppo must be a mapping")
    return Scenario(config, grid, stations, dict(ppo), copy.deepcopy(raw), path)


def load_scenario(path: str | Path) -> Scenario:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"scenario file not found: {p}")
    try:
        raw = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: not valid YAML ({exc})") from exc
    return scenario_from_dict(raw, str(p))


def bundled_scenario_path(name: str = "desk") -> Path:
    return Path(str(resources.files("evrebalance") / "scenarios" / f"{name}.yaml"))


def load_bundled(name: str = "desk") -> Scenario:
    return load_scenario(bundled_scenario_path(name))
