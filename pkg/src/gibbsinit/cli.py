"""Command line entry point: ``gibbsinit {run,sweep,compare,theory-check,list-problems}``.

Exit codes: 0 success, 2 invalid input or configuration, 3 experiment unstable.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness, theory
from .errors import ExperimentUnstable, GibbsInitError

log = logging.getLogger("gibbsinit")

EXIT_OK, EXIT_INVALID, EXIT_UNSTABLE = 0, 2, 3


def _load(args):
    cfg = harness.load_config(args.config)
    changes = {}
    if getattr(args, "output_dir", None):
        changes["output_dir"] = args.output_dir
    if getattr(args, "workers", None):
        changes["workers"] = args.workers
    if getattr(args, "replications", None):
        changes["replications"] = args.replications
    return cfg.replace(**changes) if changes else cfg


def _line(label, r):
    return (f"{label}: success_rate={r.success_rate:.4f} (se {r.standard_error:.4f}) "
            f"valid={r.n_valid} failed={r.n_failed} median={r.median_value:.6g}")


def cmd_run(args) -> int:
    cfg = _load(args)
    r = harness.run_experiment(cfg)
    print(_line(cfg.plan.strategy, r))
    if cfg.output_dir:
        print(f"results written to {cfg.output_dir}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise GibbsInitError("bad-axis", "no sweep values given")
    for v, r in zip(values, harness.sweep(cfg, args.axis, values)):
        print(_line(f"{args.axis}={v}", r))
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _load(args)
    strategies = args.strategies.split(",") if args.strategies else harness.STRATEGIES
    for s, r in harness.compare_strategies(cfg, strategies).items():
        print(_line(s, r))
    return EXIT_OK


def cmd_theory(args) -> int:
    report = theory.theory_battery(quick=args.quick, seed=args.seed)
    for name, entry in report.items():
        print(f"{name:14s} {'pass' if entry['passed'] else 'FAIL'}")
    if args.output:
        Path(args.output).write_text(json.dumps(report, indent=2) + "\n")
    return EXIT_OK if all(e["passed"] for e in report.values()) else 1


def cmd_list(args) -> int:
    for name in harness.PROBLEMS:
        prm = ", ".join(f"{k}={v}" for k, v in harness.PROBLEM_DEFAULTS[name].items())
        rule = harness.SUCCESS_DEFAULTS[name]
        print(f"{name:12s} {prm}  [success: {rule['mode']} {rule['threshold']}]")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gibbsinit", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def exp_args(p):
        p.add_argument("config", help="YAML experiment config")
        p.add_argument("--output-dir")
        p.add_argument("--workers", type=int)
        p.add_argument("--replications", type=int)

    p = sub.add_parser("run", help="run one experiment")
    exp_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run one experiment per axis value")
    exp_args(p)
    p.add_argument("--axis", required=True, choices=harness.SWEEP_AXES)
    p.add_argument("--values", required=True, help="comma separated")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="run the config under several strategies")
    exp_args(p)
    p.add_argument("--strategies", help="comma separated (default: all four)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("theory-check", help="numerical checks of the bounds")
    p.add_argument("--output", help="write the JSON report here")
    p.add_argument("--quick", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("list-problems", help="problems and their default parameters")
    p.set_defaults(func=cmd_list)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ExperimentUnstable as exc:
        print(f"experiment-unstable: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except (GibbsInitError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
