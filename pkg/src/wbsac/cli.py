"""Command-line entry point: ``wbsac {train,eval,verify,sweep}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from .agents import AGENT_KINDS
from .harness import (ConfigError, ExperimentConfig, UnknownEnvError, evaluate_checkpoint,
                      run_experiment, sweep)

EXIT_OK = 0
EXIT_CONFIG_ERROR = 3
EXIT_UNREADABLE_CONFIG = 4
EXIT_UNKNOWN_ENV = 5
EXIT_MISSING_CHECKPOINT = 6
EXIT_VERIFY_FAILED = 7
EXIT_RUN_FAILED = 8


def _add_common(p, out_required=False):
    p.add_argument("--config", help="YAML experiment config")
    p.add_argument("--seed-set", help="named train/eval seed set (default, alt)")
    p.add_argument("--seeds", help="comma-separated train seeds")
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--agent", choices=sorted(AGENT_KINDS))
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field; repeatable")


def build_parser():
    parser = argparse.ArgumentParser(prog="wbsac", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one experiment config over its seeds")
    _add_common(p)
    p.add_argument("--no-plots", action="store_true")

    p = sub.add_parser("eval", help="evaluate a saved checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("verify", help="run the oracle and gradient verification suites")
    p.add_argument("--quick", action="store_true", help="smaller instance counts")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("sweep", help="grid over beta_o / lambda_sched / fixed_xi_o")
    _add_common(p)
    p.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2,...", required=True)
    p.add_argument("--no-plots", action="store_true")
    return parser


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    overrides = list(args.override)
    if args.agent:
        overrides.append(f"agent={args.agent}")
    if args.seed_set:
        overrides.append(f"seed_set={args.seed_set}")
    if args.seeds:
        overrides.append(f"seeds=[{args.seeds}]")
    if args.out:
        overrides.append(f"out_dir={args.out}")
    return cfg.with_overrides(overrides).validate()


def _parse_grid(items):
    grid = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"grid axis {item!r} is not KEY=V1,V2,...")
        key, raw = item.split("=", 1)
        grid[key.strip()] = [yaml.safe_load(v) for v in raw.split(",")]
    return grid


def _cmd_train(args):
    cfg = _load_config(args)
    record = run_experiment(cfg, plots=not args.no_plots)
    last = record.aggregate[-1] if record.aggregate else None
    print(json.dumps({"out_dir": str(record.out_dir), "failed_seeds": record.failed,
                      "final": last}, default=str))
    return EXIT_OK if record.ok else EXIT_RUN_FAILED


def _cmd_eval(args):
    if not Path(args.checkpoint).is_file():
        print(f"error: checkpoint not found: {args.checkpoint}", file=sys.stderr)
        return EXIT_MISSING_CHECKPOINT
    cfg = _load_config(args)
    ret = evaluate_checkpoint(args.checkpoint, cfg)
    print(json.dumps({"checkpoint": args.checkpoint, "eval_return": ret,
                      "episodes": cfg.eval_episodes}))
    return EXIT_OK


def _cmd_verify(args):
    from .verify import run_all

    results = run_all(quick=args.quick, seed=args.seed)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY_FAILED


def _cmd_sweep(args):
    base = _load_config(args)
    results = sweep(base, _parse_grid(args.grid), plots=not args.no_plots)
    failed = False
    for point, record in results:
        failed |= not record.ok
        print(json.dumps({"point": point, "out_dir": str(record.out_dir),
                          "failed_seeds": record.failed}))
    return EXIT_RUN_FAILED if failed else EXIT_OK


COMMANDS = {"train": _cmd_train, "eval": _cmd_eval, "verify": _cmd_verify, "sweep": _cmd_sweep}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UnknownEnvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNKNOWN_ENV
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNREADABLE_CONFIG


if __name__ == "__main__":
    sys.exit(main())
