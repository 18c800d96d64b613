"""Two-cell toy world: how fast ac-PPO and ac-PG learn to send EVs to the starved cell.

    python scripts/toy_convergence.py [--seeds 10] [--rounds 200]
"""

import argparse

import numpy as np

from evrebalance.marl.toy import run_toy


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--rounds", type=int, default=200)
    args = ap.parse_args(argv)
    for algo in ("ppo", "pg"):
        runs = [run_toy(algo, s, rounds=args.rounds) for s in range(args.seeds)]
        p = np.array([r.final_prob for r in runs])
        for r in runs:
            print(f"ac-{algo.upper()} seed {r.seed}: P(starved cell) {r.final_prob:.3f}, "
                  f"first above 0.9 at round {r.first_round_above}")
        print(f"ac-{algo.upper()}: median {np.median(p):.3f}, across-seed variance {p.var():.5f}\n")


if __name__ == "__main__":
    main()
