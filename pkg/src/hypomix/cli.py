"""Command line entry point: ``hypomix <kind> --config FILE [--override k=v]... [--out DIR] [--tag NAME]``."""

from __future__ import annotations

import argparse
import sys

from .experiments import (
    EXIT_ERROR, EXIT_USAGE, KINDS, ConfigError, load_config, run_experiment,
)
from .sde import WORKERS_ENV


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hypomix",
        description="Run one verification experiment and write CSV/JSON/SVG outputs plus a manifest.",
        epilog=f"Worker threads for Monte Carlo runs come from ${WORKERS_ENV} (default 1). "
               "Exit codes: 0 all verdicts pass, 1 a verdict failed, 2 usage or validation error, "
               "3 runtime error.",
    )
    p.add_argument("kind", choices=KINDS)
    p.add_argument("--config", required=True, metavar="FILE")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="section.key=value; a bare key refers to [experiment]")
    p.add_argument("--out", metavar="DIR", help="output root (default: experiment.out)")
    p.add_argument("--tag", metavar="NAME", help="run directory name instead of a timestamp")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else 0
    try:
        cfg = load_config(args.config).with_overrides(args.override)
        if cfg.kind != args.kind:
            raise ConfigError([f"experiment.kind is {cfg.kind!r} but the command asked for {args.kind!r}"])
        manifest = run_experiment(cfg, args.out, args.tag)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"hypomix: config error: {p}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"hypomix: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc, FileNotFoundError) else EXIT_ERROR
    for v in manifest.verdicts:
        print(f"{'PASS' if v.passed else 'FAIL'}  {v.name}: {v.value} ({v.threshold})")
    if manifest.error:
        print(f"hypomix: error: {manifest.error}", file=sys.stderr)
    print(f"outputs: {manifest.directory}")
    return manifest.exit_code


if __name__ == "__main__":
    sys.exit(main())
