"""Train ac-PPO (and optionally the ac-PG ablation) on the desk scenario.

    python scripts/train_desk.py --out runs/desk --seed 1 [--pg] [--rounds 500]

Writes final.ckpt, best.ckpt and diagnostics.csv per algorithm under --out.
"""

import argparse
import time
from pathlib import Path

from evrebalance.config import load_bundled, load_scenario
from evrebalance.marl.ppo import PPOConfig
from evrebalance.marl.training import train


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="scenario YAML (default: bundled desk)")
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--rounds", type=int)
    ap.add_argument("--pg", action="store_true", help="also train the ac-PG ablation")
    args = ap.parse_args(argv)

    sc = load_scenario(args.config) if args.config else load_bundled()
    cfg = PPOConfig.from_dict(sc.ppo)
    for algo in ("ppo", "pg") if args.pg else ("ppo",):
        out = Path(args.out) / f"ac-{algo}"
        t0 = time.time()
        res = train(sc, cfg, args.seed, algo=algo, rounds=args.rounds, out_dir=out,
                    log=lambda m: None if m.endswith("eval_d_nv=") else print(m, flush=True))
        print(f"ac-{algo.upper()}: {len(res.diagnostics)} rounds in {time.time() - t0:.0f}s, "
              f"best eval dNV {res.best_nv:.2f}% -> {out}")


if __name__ == "__main__":
    main()
