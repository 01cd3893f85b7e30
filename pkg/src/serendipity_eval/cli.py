"""Command line: ``serendipity-eval {run,validate,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .runner import ConfigError, RunConfig, RunFailed, check, run
from .seren_eva import MetaEvalReport


def _load(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    if getattr(args, "offline", False):
        cfg.offline = True
    if getattr(args, "parallelism", None):
        cfg.parallelism = args.parallelism
    if getattr(args, "out", None):
        cfg.output_dir = Path(args.out)
    return cfg


def cmd_run(args) -> int:
    try:
        cfg = _load(args)
        report = run(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RunFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(report.table(), end="")
    if cfg.output_dir:
        print(f"run written to {cfg.output_dir}")
    return 0


def cmd_validate(args) -> int:
    try:
        cfg = _load(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    errors, _ = check(cfg)
    if errors:
        for e in errors:
            print(f"error: {e}", file=sys.stderr)
        return 2
    print("ok")
    return 0


def cmd_report(args) -> int:
    path = Path(args.report)
    if path.is_dir():
        path = path / "report.json"
    if not path.exists():
        print(f"error: report not found: {path}", file=sys.stderr)
        return 2
    report = MetaEvalReport.from_dict(json.loads(path.read_text(encoding="utf-8")))
    if args.format == "json":
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    else:
        print(report.table(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="serendipity-eval",
        description="Meta-evaluate serendipity scorers against user-study ratings.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a run configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--offline", action="store_true", help="forbid network; needs mocks or a warm cache")
    p.add_argument("--parallelism", type=int)
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="check a configuration without running it")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("report", help="re-render a saved report")
    p.add_argument("report", help="report.json or a run directory")
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
