"""Command line entry point: ``relaxbench run`` and ``relaxbench validate``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .artifacts import dumps
from .config import ConfigError, parse_config
from .experiments import EXIT_CONFIG_ERROR, resolve_jobs, run_experiment


def _load(path: str):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    return parse_config(text)


def _cmd_validate(args) -> int:
    cfg = _load(args.config)
    sys.stdout.write(dumps(cfg.resolved()))
    return 0


def _cmd_run(args) -> int:
    cfg = _load(args.config)
    try:
        jobs = resolve_jobs(args.jobs)
    except ValueError as exc:
        raise ConfigError(f"jobs: {exc}") from exc
    outcome = run_experiment(cfg, args.out, jobs)
    for check in outcome.checks:
        print(check.line())
    if outcome.error:
        print(f"ERROR {outcome.error['type']}: {outcome.error['message']}")
    out_dir = args.out if args.out is not None else cfg.output.dir
    print(f"{outcome.status.upper()} {cfg.kind} -> {out_dir}")
    return outcome.exit_code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relaxbench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment and write its artifacts")
    p_run.add_argument("config", help="experiment config (JSON)")
    p_run.add_argument("--out", default=None, help="output directory (overrides output.dir)")
    p_run.add_argument("--jobs", type=int, default=None,
                       help="parallel sweep members (default: $RELAXBENCH_JOBS or 1)")
    p_run.set_defaults(func=_cmd_run)

    p_val = sub.add_parser("validate", help="validate a config and print it with defaults resolved")
    p_val.add_argument("config", help="experiment config (JSON)")
    p_val.set_defaults(func=_cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
