"""``cpbrl`` command line: data generation, model training, synthesis,
evaluation, comparison and trajectory export.

Exit status is 0 on success, 1 on a domain error (bad inputs, missing files,
failed searches) and 2 on a usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiment as ex
from .dynamics import DomainError
from .policies import describe

log = logging.getLogger("cpbrl")


def _common() -> argparse.ArgumentParser:
    # Global flags are accepted before or after the subcommand.
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=argparse.SUPPRESS, help="YAML experiment config")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (overrides the config)")
    p.add_argument("--out", default=argparse.SUPPRESS, help="output directory (default: runs)")
    p.add_argument("--force", action="store_true", default=argparse.SUPPRESS, help="overwrite existing artifacts")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="cpbrl", parents=[common],
                                     description="Batch RL on the cart-pole balancing task.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate a random-exploration transition batch")
    p.add_argument("--n", type=int, help="number of transitions (default: config batch_size)")
    p.add_argument("--file", help="batch CSV path (default: OUT/batch.csv)")

    p = sub.add_parser("train-model", parents=[common], help="train the world model")
    p.add_argument("--batch", help="batch CSV (default: OUT/batch.csv)")
    p.add_argument("--model-dir", help="bundle directory (default: OUT/model)")

    p = sub.add_parser("synthesize", parents=[common], help="build a policy with one method")
    p.add_argument("method", choices=ex.METHODS)
    p.add_argument("--batch", help="batch CSV (default: OUT/batch.csv)")
    p.add_argument("--model-dir", help="world model bundle (default: OUT/model)")
    p.add_argument("--run", type=int, default=0, help="run index used to derive the method seed")

    p = sub.add_parser("evaluate", parents=[common], help="penalty of a policy file")
    p.add_argument("policy")
    p.add_argument("--evaluator", choices=("model", "system"), default="system")
    p.add_argument("--model-dir", help="world model bundle (default: OUT/model)")
    p.add_argument("--report", help="JSON report path (default: next to the policy)")

    p = sub.add_parser("compare", parents=[common], help="run several methods and tabulate penalties")
    p.add_argument("--methods", nargs="+", choices=ex.METHODS, help="default: all")
    p.add_argument("--runs", type=int, help="runs per stochastic method (default: config runs)")

    p = sub.add_parser("rollout", parents=[common], help="export a trajectory on the true dynamics")
    p.add_argument("policy")
    p.add_argument("--start", default="0.1,0,0,0", help="theta,theta_dot,rho,rho_dot")
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--setpoint", help="position setpoints, e.g. 200:1.0")
    p.add_argument("--file", help="CSV path (default: OUT/rollout.csv)")
    return parser


def _workspace(args) -> ex.Workspace:
    cfg = ex.load_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        if args.seed < 0:
            raise ex.ConfigError("seed: must be non-negative")
        cfg.seed = args.seed
    return ex.Workspace(getattr(args, "out", "runs"), cfg, getattr(args, "force", False))


def _print(obj) -> None:
    print(json.dumps(obj, indent=1))


def cmd_gen_data(args, ws):
    info = ex.run_gen_data(ws, args.n, args.file)
    print(f"wrote {info['samples']} transitions to {info['path']}")
    print("reward classes: " + ", ".join(f"{k}: {v}" for k, v in info["rewards"].items()))


def cmd_train_model(args, ws):
    info = ex.run_train_model(ws, args.batch, args.model_dir)
    if info["skipped"]:
        print(f"world model at {info['path']} exists; use --force to retrain")
        return
    print(f"wrote world model to {info['path']}")
    for k, v in info["delta_rmse"].items():
        print(f"  hold-out delta RMSE {k:10s} {v:.3g}")
    print(f"  hold-out reward accuracy {info['reward_accuracy']:.4f}")


def cmd_synthesize(args, ws):
    syn = ex.synthesize(args.method, ws, args.run, args.batch, args.model_dir)
    for line in syn.lines:
        print(line)
    for path in ex.save_synthesis(ws, syn, args.run):
        print(f"wrote {path}")


def cmd_evaluate(args, ws):
    pol = ex.load_policy_checked(args.policy)
    rep = ex.evaluate(pol, args.evaluator, ws, args.model_dir)
    rep["policy"] = str(args.policy)
    out = Path(args.report) if args.report else Path(args.policy).with_suffix(f".{args.evaluator}.json")
    ex._atomic_text(out, json.dumps(rep, indent=1) + "\n")
    print(describe(pol))
    print(f"{args.evaluator} penalty {rep['penalty']:.4f} over {len(rep['per_state'])} test states")
    print(f"wrote {out}")


def cmd_compare(args, ws):
    def progress(name, run, m, s):
        log.info("%s run %d: model %.4f system %.4f", name, run, m, s)

    rows = ex.run_compare(ws, args.methods, args.runs, progress)
    ex.write_table(rows, ws.root / "compare.csv")
    text = ex.format_table(rows)
    ex._atomic_text(ws.root / "compare.txt", text + "\n")
    print(text)


def cmd_rollout(args, ws):
    pol = ex.load_policy_checked(args.policy)
    rows = ex.rollout(pol, ex.parse_state(args.start), args.steps, ex.parse_schedule(args.setpoint), ws.cfg.dt)
    out = Path(args.file) if args.file else ws.root / "rollout.csv"
    ex.write_rollout(rows, out)
    print(f"wrote {len(rows)} steps to {out}")


COMMANDS = {"gen-data": cmd_gen_data, "train-model": cmd_train_model, "synthesize": cmd_synthesize,
            "evaluate": cmd_evaluate, "compare": cmd_compare, "rollout": cmd_rollout}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        ws = _workspace(args)
        COMMANDS[args.command](args, ws)
    except (DomainError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
