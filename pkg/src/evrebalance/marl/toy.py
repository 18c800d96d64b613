"""Two-cell convergence harness.

Cell B (the origin) holds unpopular stations that start full; its neighbour A
holds popular stations that start empty, so A has a positive demand gap at
every step. Trips go to either cell with equal odds. A working learner should
send the orders that end in B over to A.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from ..config import Scenario, scenario_from_dict
from ..hexgrid import DIRECTIONS, ORIGIN, GridIndex, HexCoord, hex_center
from ..simengine import run
from .agent import CascadePolicy, action_cells
from .networks import masked_log_probs
from .ppo import PPOConfig
from .training import train

CELL_B = ORIGIN
CELL_A = ORIGIN + DIRECTIONS[0]
TOY_STEPS = 36  # six hours per training episode


def toy_scenario(cell_size_km: float = 1.0, per_cell: int = 3, docks: int = 12, evs_b: int = 10,
                 pop_a: float = 3.0, pop_b: float = 1.0, base_rate: float = 100.0) -> Scenario:
    """Scenario dict for the two-cell world (flat daily profile, no expansion)."""
    grid = GridIndex(1, cell_size_km)
    stations = []
    for cell, pop, evs in ((CELL_B, pop_b, evs_b), (CELL_A, pop_a, 0)):
        cx, cy = hex_center(cell, grid)
        for k in range(per_cell):
            dy = (k - (per_cell - 1) / 2) * 0.2 * cell_size_km
            stations.append({"pos": [cx, cy + dy], "docks": docks, "evs": evs, "popularity": pop,
                             "trip_scale": 1.0})
    flat = [1.0] * 144
    raw = {
        "version": 1,
        "name": "toy2",
        "grid": {"radius": 1, "cell_size_km": cell_size_km,
                 "valid_cells": [list(CELL_B.as_tuple()), list(CELL_A.as_tuple())]},
        "sim": {"full_range_km": 150.0, "charge_time_min": 300.0, "accept_prob": 1.0,
                "episode_days": TOY_STEPS / 144},
        "demand": {"base_rate": base_rate, "weekday_profile": flat, "weekend_profile": flat,
                   "morning_origin_bias": 0.0, "evening_origin_bias": 0.0, "dest_decay_km": 1e6,
                   "dest_popularity_exponent": 0.0},
        "expansion": {"deploy_rate_per_day": 0.0, "close_rate_per_day": 0.0},
        "stations": stations,
    }
    return scenario_from_dict(raw)


def toy_config(**kw) -> PPOConfig:
    base = dict(episode_days=TOY_STEPS / 144, eval_every=0, rounds=200)
    base.update(kw)
    return PPOConfig(**base)


class _Probe(CascadePolicy):
    """Greedy evaluation policy that records the inter-grid probability of cell A."""

    def __init__(self, nets, cfg):
        super().__init__(nets, cfg)
        self.probs: list[float] = []

    def decide(self, sim, world, order, t):
        _, logits, _, _, _ = self._step[order.id]
        logp = masked_log_probs(logits, self._mask(sim, world, order))
        cells = action_cells(world.stations[order.dest].cell)
        self.probs.append(float(np.exp(logp[cells.index(CELL_A)])))
        return super().decide(sim, world, order, t)


def starved_probability(scenario: Scenario, nets, cfg: PPOConfig, seeds=(0, 1)) -> float:
    """Mean probability the inter-grid policy puts on cell A over all decisions."""
    probs: list[float] = []
    for s in seeds:
        p = _Probe(nets, cfg)
        run(scenario, 10_000 + s, p, steps=TOY_STEPS)
        probs += p.probs
    return float(np.mean(probs)) if probs else float("nan")


@dataclass
class ToyRun:
    algo: str
    seed: int
    final_prob: float
    first_round_above: Optional[int]  # first checked round with probability > threshold


def run_toy(algo: str, seed: int, rounds: int = 200, check_every: int = 20, threshold: float = 0.9,
            cfg: Optional[PPOConfig] = None, scenario: Optional[Scenario] = None) -> ToyRun:
    """Train on the toy world, probing the policy every ``check_every`` rounds."""
    scenario = scenario or toy_scenario()
    cfg = replace(cfg or toy_config(), rounds=rounds)
    state = {"first": None, "prob": float("nan")}

    def probe(k: int, nets) -> None:
        if (k + 1) % check_every == 0 or k == rounds - 1:
            state["prob"] = starved_probability(scenario, nets, cfg)
            if state["first"] is None and state["prob"] > threshold:
                state["first"] = k + 1

    train(scenario, cfg, seed, algo=algo, on_round=probe)
    return ToyRun(algo, seed, state["prob"], state["first"])
