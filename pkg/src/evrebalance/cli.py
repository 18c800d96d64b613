"""Command line: ``evrebalance {simulate,train,eval,sweep} [flags]``.

Exit status is 0 on success, 2 for configuration or usage errors and 1 for
runtime failures. Every run writes its files under ``--out`` together with a
``manifest.yaml`` recording the resolved config hash, seeds and output digests.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import sys
from pathlib import Path
from typing import Optional, Sequence

import yaml

from . import __version__
from .config import ConfigError, Scenario, bundled_scenario_path, load_scenario
from .evalcli.experiments import ExperimentSpec, canonical_policy, evaluate, policy_factory, reports_csv
from .evalcli.sweep import AXES, axis_key, sweep, sweep_csv
from .marl.ppo import PPOConfig
from .marl.training import train
from .neural.checkpoint import CheckpointError
from .simengine import run

OVERRIDE_FLAGS = {  # flag dest -> scenario override name
    "expansion_speed": "expansion_speed",
    "accept_prob": "accept_prob",
    "charge_time": "charge_time",
    "full_range": "full_range",
}


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="scenario YAML (default: bundled desk scenario)")
    p.add_argument("--seed", type=int, default=0, help="root seed (default 0)")
    p.add_argument("--out", default="out", help="output directory (default ./out)")
    p.add_argument("--policy", help="NR, RND, REV, DMD, ac-PG or ac-PPO")
    p.add_argument("--checkpoint", help="weights file for ac-PG / ac-PPO")
    p.add_argument("--episodes", type=int, help="number of seeds, starting at --seed")
    p.add_argument("--steps", type=int, help="episode length in 10-minute steps (default: scenario)")
    p.add_argument("--workers", type=int, default=1, help="parallel episodes (results do not depend on it)")
    p.add_argument("--expansion-speed", dest="expansion_speed", metavar="X")
    p.add_argument("--accept-prob", dest="accept_prob", metavar="P")
    p.add_argument("--charge-time", dest="charge_time", metavar="MIN")
    p.add_argument("--full-range", dest="full_range", metavar="KM")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = argparse.ArgumentParser(prog="evrebalance", description=__doc__.splitlines()[0],
                                 epilog="Flags may appear before or after the command.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")
    sub.add_parser("simulate", parents=[common], help="run episodes and write per-step traces")
    t = sub.add_parser("train", parents=[common], help="train ac-PPO (or ac-PG) and save checkpoints")
    t.add_argument("--rounds", type=int, help="training rounds (default: ppo.rounds)")
    sub.add_parser("eval", parents=[common], help="paired evaluation against NR")
    s = sub.add_parser("sweep", parents=[common], help="evaluate over a list of override values")
    s.add_argument("--axis", help=f"one of {', '.join(AXES)} (or give a comma list to that flag)")
    s.add_argument("--values", help="comma-separated values for --axis")
    return ap


def _floats(text: str, flag: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--{flag}: expected a number or comma-separated numbers, got {text!r}") from None


def _overrides(args, allow_list_for: Optional[str] = None) -> dict[str, float]:
    out = {}
    for dest, key in OVERRIDE_FLAGS.items():
        raw = getattr(args, dest)
        if raw is None or dest == allow_list_for:
            continue
        vals = _floats(raw, dest.replace("_", "-"))
        if len(vals) != 1:
            raise ConfigError(f"--{dest.replace('_', '-')} takes a single value here")
        out[key] = vals[0]
    return out


def _load(args) -> Scenario:
    path = args.config if args.config else bundled_scenario_path()
    return load_scenario(path)


def _seeds(args, default: int) -> list[int]:
    n = default if args.episodes is None else args.episodes
    if n < 1:
        raise ConfigError("--episodes must be >= 1")
    return [args.seed + k for k in range(n)]


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _manifest(out: Path, command: str, scenario: Scenario, args, seeds: list[int], files: list[str],
              extra: Optional[dict] = None) -> None:
    doc = {
        "tool": "evrebalance",
        "version": __version__,
        "command": command,
        "scenario": str(args.config) if args.config else "bundled:desk",
        "config_hash": scenario.config_hash(),
        "seeds": seeds,
        "policy": args.policy,
        "checkpoint": args.checkpoint,
        "checkpoint_sha256": _digest(Path(args.checkpoint)) if args.checkpoint else None,
        "steps": args.steps,
        "outputs": {f: _digest(out / f) for f in files},
    }
    doc.update(extra or {})
    (out / "manifest.yaml").write_text(yaml.safe_dump(doc, sort_keys=True))


def cmd_simulate(args) -> None:
    sc = _load(args).with_overrides(**_overrides(args))
    policy = canonical_policy(args.policy or "NR")
    make = policy_factory(policy, sc, args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = _seeds(args, 1)
    files, rows = [], []
    for s in seeds:
        name = f"trace_seed{s}.jsonl"
        with open(out / name, "w") as fh:
            tot, _ = run(sc, s, make(), steps=args.steps, trace=fh)
        files.append(name)
        rows.append({"seed": s, "generated": tot.generated, "satisfied": tot.satisfied, "lost": tot.lost,
                     "gmv": repr(round(tot.gmv, 10)), "incentives": repr(round(tot.incentives, 10)),
                     "repositions": tot.repositions, "offers": tot.offers})
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    (out / "totals.csv").write_text(buf.getvalue())
    files.append("totals.csv")
    _manifest(out, "simulate", sc, args, seeds, files, {"policy": policy})


def cmd_eval(args) -> None:
    base = _load(args)
    policy = canonical_policy(args.policy or "NR")
    spec = ExperimentSpec(base, policy, _seeds(args, 5), args.checkpoint, _overrides(args), args.steps)
    reports = evaluate(spec, args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(reports_csv(reports))
    _manifest(out, "eval", spec.resolved(), args, spec.seeds, ["metrics.csv"], {"policy": policy})


def cmd_sweep(args) -> None:
    listed = [d for d in OVERRIDE_FLAGS if getattr(args, d) is not None and "," in getattr(args, d)]
    if args.axis:
        key = axis_key(args.axis)
        if args.values is None:
            raise ConfigError("--axis needs --values")
        axis, values = args.axis, _floats(args.values, "values")
        skip = key
    elif len(listed) == 1:
        skip = listed[0]
        axis = skip.replace("_", "-")
        values = _floats(getattr(args, skip), axis)
    else:
        raise ConfigError("sweep needs --axis/--values or exactly one override flag with a comma list")
    if not values:
        raise ConfigError("sweep needs at least one value")
    base = _load(args)
    policy = canonical_policy(args.policy or "NR")
    spec = ExperimentSpec(base, policy, _seeds(args, 5), args.checkpoint, _overrides(args, skip), args.steps)
    rows = sweep(spec, axis, values, args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(sweep_csv(rows))
    _manifest(out, "sweep", spec.resolved(), args, spec.seeds, ["sweep.csv"],
              {"policy": policy, "axis": axis, "values": values})


def cmd_train(args) -> None:
    sc = _load(args).with_overrides(**_overrides(args))
    policy = canonical_policy(args.policy or "ac-PPO")
    if policy not in ("ac-PPO", "ac-PG"):
        raise ConfigError(f"train supports ac-PPO and ac-PG, not {policy}")
    cfg = PPOConfig.from_dict(sc.ppo)
    out = Path(args.out)
    res = train(sc, cfg, args.seed, algo="ppo" if policy == "ac-PPO" else "pg", rounds=args.rounds,
                out_dir=out, eval_steps=args.steps, log=lambda m: print(m, file=sys.stderr, flush=True))
    if res.diverged:
        print(f"training diverged ({res.diverged}); checkpoints hold the last good weights", file=sys.stderr)
    _manifest(out, "train", sc, args, [args.seed], ["final.ckpt", "best.ckpt", "diagnostics.csv"],
              {"policy": policy, "rounds": cfg.rounds if args.rounds is None else args.rounds,
               "diverged": res.diverged})
    if res.diverged:
        raise RuntimeError("training diverged")


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep}


def _command_first(argv: list[str]) -> list[str]:
    """Move the subcommand to the front so global flags may precede it."""
    for i, tok in enumerate(argv):
        if tok in COMMANDS:
            return [tok] + argv[:i] + argv[i + 1:]
    return argv


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(_command_first(argv))
    except SystemExit as e:  # argparse already printed usage to stderr
        return int(e.code) if isinstance(e.code, int) else 2
    try:
        COMMANDS[args.command](args)
    except (ConfigError, CheckpointError) as e:
        print(f"evrebalance: error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - reported as a runtime failure
        print(f"evrebalance: runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
