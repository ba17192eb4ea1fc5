"""Command line entry point: ``surfch <subcommand> <config.json>``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

from .experiments import ConfigError, load_config, run_scenario

EXIT_OK, EXIT_SOLVER, EXIT_CONFIG = 0, 1, 2

_SUBCOMMAND_SCENARIO = {
    "run": None,
    "sweep-delta": "delta_sweep",
    "sweep-theta": "theta_sweep",
    "mms": "mms",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="surfch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "sweep-delta", "sweep-theta", "mms", "validate"):
        p = sub.add_parser(name)
        p.add_argument("config", help="JSON experiment configuration")
        p.add_argument("--out", metavar="DIR", help="output directory (overrides output.directory)")
        p.add_argument("--snapshots", metavar="N", type=int, help="write a VTK snapshot every N steps")
        p.add_argument("--quiet", action="store_true", help="only log errors")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        if not args.quiet:
            print(cfg.to_json())
        return EXIT_OK
    scenario = _SUBCOMMAND_SCENARIO[args.command]
    if scenario is not None:
        cfg = cfg.replace(scenario=scenario)
        if scenario == "delta_sweep" and cfg.material.deltas is None:
            print("config error: material.deltas: required for sweep-delta", file=sys.stderr)
            return EXIT_CONFIG
        if scenario == "theta_sweep" and cfg.material.thetas is None:
            print("config error: material.thetas: required for sweep-theta", file=sys.stderr)
            return EXIT_CONFIG
    if args.snapshots is not None:
        if args.snapshots < 0:
            print("config error: --snapshots must be >= 0", file=sys.stderr)
            return EXIT_CONFIG
        cfg = cfg.replace(output=dataclasses.replace(cfg.output, snapshot_every=args.snapshots))
    status, summary = run_scenario(cfg, args.out)
    if not args.quiet:
        brief = {k: summary[k] for k in ("scenario", "status", "wall_clock_s") if k in summary}
        print(json.dumps(brief))
    return EXIT_SOLVER if status else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
