"""Write the desk-scale scenario used by the acceptance suite.

Half-scale city: radius-3 board of 37 cells with 3 km cells, ~60 stations and
~200 EVs; the destination decay is scaled with it. The EV range (8 km, under two
average trips) is short enough that battery state limits supply, so charging
time matters. Stations are concentrated towards the center (cell weight
exp(-k * ring)) so that central cells hold several stations each, as in a
dense city core.

    python scripts/make_desk_scenario.py > src/evrebalance/scenarios/desk.yaml
"""

import argparse
import sys

import numpy as np
import yaml

from evrebalance.hexgrid import ORIGIN, GridIndex, hex_center, hex_distance, nearest_cell


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--stations", type=int, default=60)
    ap.add_argument("--evs", type=int, default=200)
    ap.add_argument("--radius", type=int, default=3)
    ap.add_argument("--seed", type=int, default=20200701)
    ap.add_argument("--cell-size", type=float, default=3.0)
    ap.add_argument("--concentration", type=float, default=1.5, help="k in exp(-k * ring)")
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    grid = GridIndex(args.radius, args.cell_size)
    w = args.cell_size
    cells = grid.sorted_valid_cells()
    p = np.array([np.exp(-args.concentration * hex_distance(c, ORIGIN)) for c in cells])
    p /= p.sum()
    stations = []
    for k in rng.choice(len(cells), size=args.stations, p=p):
        cx, cy = hex_center(cells[k], grid)
        while True:
            x, y = cx + rng.uniform(-0.6 * w, 0.6 * w), cy + rng.uniform(-0.5 * w, 0.5 * w)
            if nearest_cell(x, y, grid.cell_size_km) == cells[k]:
                break
        docks = int(rng.integers(6, 11))
        stations.append({"pos": [round(float(x), 3), round(float(y), 3)], "docks": docks, "evs": 0})
    # spread the fleet proportionally to dock counts, never filling a station
    total = sum(s["docks"] for s in stations)
    left = args.evs
    for s in stations:
        s["evs"] = min(s["docks"] - 2, int(round(args.evs * s["docks"] / total)))
        left -= s["evs"]
    i = 0
    while left > 0:
        s = stations[i % len(stations)]
        if s["evs"] < s["docks"] - 1:
            s["evs"] += 1
            left -= 1
        i += 1

    doc = {
        "version": 1,
        "name": "desk",
        "grid": {"radius": args.radius, "cell_size_km": args.cell_size, "valid_cells": "all"},
        "sim": {
            "full_range_km": 8.0,
            "charge_time_min": 300.0,
            "accept_prob": 1.0,
            "budget": "inf",
            "incentive_coeff": 0.1,
            "incentive_cap": 2.0,
            "episode_days": 7,
        },
        "demand": {"dest_decay_km": args.cell_size, "popularity_sd": 0.7, "dest_popularity_exponent": 0.5, "value_coupling": 0.1},
        "expansion": {"deploy_rate_per_day": 1.0, "close_rate_per_day": 0.3, "speed": 1.0},
        "stations": stations,
        # training settings for this scenario; see README for the rest of the keys
        "ppo": {
            "learning_rate": 1.0e-3,
            "gamma": 0.0,
            "intra_softmax": True,
            "episode_days": 7.0,
            "rounds": 500,
            "eval_every": 25,
        },
    }
    yaml.safe_dump(doc, sys.stdout, sort_keys=False, default_flow_style=None)


if __name__ == "__main__":
    main()
