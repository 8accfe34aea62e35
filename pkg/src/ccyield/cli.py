"""Command-line driver: ``ccyield <command> <config.json> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .pipeline import (
    StageError,
    run_byo,
    run_compare,
    run_optimize,
    run_quadrature,
    run_surrogate,
    run_yield,
)
from .simulators import SimulationError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SIMULATION = 3
EXIT_INFEASIBLE = 4

COMMANDS = ("quadrature", "surrogate", "optimize", "yield", "byo", "compare")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ccyield", description="Chance-constrained yield-aware design optimisation.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("inputs", nargs="*", help="config file (compare: two or more results files)")
    p.add_argument("--config", help="config file (alternative to the positional argument)")
    p.add_argument("--out", help="output directory (default: config 'output' or ./out)")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="worker pool size")
    p.add_argument("--seed", type=int, help="override every seed in the config")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "compare":
        return _compare(args)
    paths = ([args.config] if args.config else []) + list(args.inputs)
    if len(paths) != 1:
        print("error: give exactly one config file", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(paths[0], args.seed)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out or cfg.output or "out")
    workers = max(1, args.workers)
    runners = {
        "quadrature": lambda: run_quadrature(cfg, out),
        "surrogate": lambda: run_surrogate(cfg, out, workers),
        "optimize": lambda: run_optimize(cfg, out, workers),
        "yield": lambda: run_yield(cfg, out, workers),
        "byo": lambda: run_byo(cfg, out, workers),
    }
    try:
        result = runners[args.command]()
    except SimulationError as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    except StageError as exc:
        if isinstance(exc.cause, SimulationError):
            print(f"simulation error in stage {exc.stage}: {exc.cause}", file=sys.stderr)
            return EXIT_SIMULATION
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(_summary(result), indent=2))
    if result.get("status") == "infeasible":
        return EXIT_INFEASIBLE
    return EXIT_OK


def _summary(result: dict) -> dict:
    return {k: v for k, v in result.items() if k not in ("history", "spec")}


def _compare(args) -> int:
    paths = [Path(p) for p in ([args.config] if args.config else []) + list(args.inputs)]
    try:
        rows = run_compare(paths, Path(args.out) if args.out else None)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    cols = list(rows[0])
    print(",".join(cols))
    for r in rows:
        print(",".join("" if r[c] is None else str(r[c]) for c in cols))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
