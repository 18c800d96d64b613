"""Sensitivity sweeps of a trained checkpoint: acceptance probability, charging time,
expansion speed and EV range. Writes one long-format CSV per axis.

    python scripts/sensitivity.py --checkpoint runs/desk/ac-ppo/final.ckpt --out runs/desk/sweeps
"""

import argparse
from pathlib import Path

from evrebalance.config import load_bundled, load_scenario
from evrebalance.evalcli.experiments import ExperimentSpec
from evrebalance.evalcli.sweep import sweep, sweep_csv

AXES = {
    "accept-prob": [0.0, 0.25, 0.5, 0.75, 1.0],
    "charge-time": [0.0, 150.0, 300.0, 450.0, 600.0],
    "expansion-speed": [0.0, 1.0, 2.0, 3.0],
    "full-range": [6.0, 8.0, 12.0, 20.0],
}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--checkpoint", required=True)
    ap.add_argument("--policy", default="ac-PPO")
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    ap.add_argument("--axes", nargs="+", default=list(AXES), choices=list(AXES))
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="runs/sweeps")
    args = ap.parse_args(argv)

    sc = load_scenario(args.config) if args.config else load_bundled()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = ExperimentSpec(sc, args.policy, args.seeds, args.checkpoint)
    for axis in args.axes:
        rows = sweep(spec, axis, AXES[axis], args.workers)
        (out / f"{axis}.csv").write_text(sweep_csv(rows))
        print(axis)
        for r in rows:
            if r["kind"] == "summary":
                print(f"  {r['value']:>6}  dDS {float(r['d_ds']):7.2f}  dNV {float(r['d_nv']):7.2f}")


if __name__ == "__main__":
    main()
