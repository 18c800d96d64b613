"""Paired comparison of every policy against NR on the desk scenario (medians over seeds).

    python scripts/baseline_table.py --checkpoint runs/desk/ac-ppo/final.ckpt \
        [--pg-checkpoint runs/desk/ac-pg/final.ckpt] [--seeds 1 2 3 4 5] [--csv table.csv]
"""

import argparse
import csv
import sys

from evrebalance.config import load_bundled, load_scenario
from evrebalance.evalcli.experiments import ExperimentSpec, evaluate
from evrebalance.evalcli.sweep import quartiles


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--checkpoint", help="ac-PPO weights")
    ap.add_argument("--pg-checkpoint", help="ac-PG weights")
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--expansion-speed", type=float)
    ap.add_argument("--csv", help="also write the per-seed reports here")
    args = ap.parse_args(argv)

    sc = load_scenario(args.config) if args.config else load_bundled()
    overrides = {"expansion_speed": args.expansion_speed} if args.expansion_speed is not None else {}
    runs = [("RND", None), ("REV", None), ("DMD", None)]
    if args.pg_checkpoint:
        runs.append(("ac-PG", args.pg_checkpoint))
    if args.checkpoint:
        runs.append(("ac-PPO", args.checkpoint))

    every = []
    print(f"{'policy':8} {'dDS (pp)':>9} {'dGMV %':>8} {'dNV %':>8} {'reposit/extra':>14}")
    for name, ckpt in runs:
        reports = evaluate(ExperimentSpec(sc, name, args.seeds, ckpt, overrides), args.workers)
        every += reports
        med = {m: quartiles([getattr(r, m) for r in reports])[1]
               for m in ("d_ds", "d_gmv", "d_nv", "repositions_per_extra_order")}
        rpo = med["repositions_per_extra_order"]
        print(f"{name:8} {med['d_ds']:9.2f} {med['d_gmv']:8.2f} {med['d_nv']:8.2f} "
              f"{rpo if isinstance(rpo, str) else format(rpo, '.2f'):>14}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(every[0].row()), lineterminator="\n")
            w.writeheader()
            w.writerows(r.row() for r in every)
        print(f"per-seed reports -> {args.csv}", file=sys.stderr)


if __name__ == "__main__":
    main()
