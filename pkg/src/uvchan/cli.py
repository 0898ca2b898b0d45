"""The ``uvchan`` command line.

Subcommands::

    run        simulate one scenario and dump CIR/transfer/delay-spread files
    sweep      run a (conditions x seeds) grid and write aggregated statistics
    dump-table write the built-in parameter table
    sample     dump inverse-transform samples of one parameter-table row

Exit codes: 0 on success, 2 on configuration/validation errors, 1 on
runtime failures.  Set ``UVCHAN_LOG`` (DEBUG/INFO/WARNING) for verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import ConfigError, load_scenario
from .params import DensityCondition, TableFormatError, default_table, load_table, save_table
from .runner import dump_parameter_samples, run_to_files, sweep_to_files

logger = logging.getLogger(__name__)


def _parse_seeds(text: str) -> list[int]:
    if ".." in text:
        lo, hi = text.split("..", 1)
        first, last = int(lo), int(hi)
        if last < first:
            raise ValueError(f"empty seed range {text!r}")
        return list(range(first, last + 1))
    return [int(s) for s in text.split(",") if s != ""]


def _parse_conditions(text: str) -> list[DensityCondition]:
    return [DensityCondition(part.strip().lower()) for part in text.split(",") if part.strip()]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uvchan",
        description="Deterministic multi-UAV-to-multi-vehicle channel simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate one scenario")
    p_run.add_argument("--config", required=True, help="scenario JSON file")
    p_run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p_run.add_argument("--condition", choices=[c.value for c in DensityCondition],
                       default=None, help="override the density condition")
    p_run.add_argument("--out", default="out", help="output directory")
    p_run.add_argument("--table", default=None, help="parameter-table JSON (default: built-in)")
    p_run.add_argument("--threads", type=int, default=1, help="accepted for symmetry; a single run is serial")

    p_sweep = sub.add_parser("sweep", help="run a conditions x seeds grid")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--seeds", required=True,
                         help="seed list: 'A..B' inclusive or comma separated")
    p_sweep.add_argument("--conditions", required=True,
                         help="comma separated density conditions")
    p_sweep.add_argument("--out", default="sweep")
    p_sweep.add_argument("--table", default=None)
    p_sweep.add_argument("--threads", type=int, default=1)

    p_dump = sub.add_parser("dump-table", help="write the built-in parameter table")
    p_dump.add_argument("--out", required=True)

    p_sample = sub.add_parser("sample", help="dump samples of one table row")
    p_sample.add_argument("--family", required=True)
    p_sample.add_argument("--sclass", required=True)
    p_sample.add_argument("--condition", required=True)
    p_sample.add_argument("-n", "--count", type=int, default=100_000)
    p_sample.add_argument("--seed", type=int, default=1)
    p_sample.add_argument("--out", required=True)
    p_sample.add_argument("--table", default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("UVCHAN_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            scenario = load_scenario(args.config)
            if args.seed is not None:
                scenario.seed = args.seed
            if args.condition is not None:
                scenario.condition = DensityCondition(args.condition)
            scenario.validate()
            table = load_table(args.table) if args.table else default_table()
            manifest = run_to_files(scenario, args.out, table)
            print(f"run complete: {len(manifest['files'])} files in {args.out}")
            return 0
        if args.command == "sweep":
            scenario = load_scenario(args.config)
            try:
                seeds = _parse_seeds(args.seeds)
                conditions = _parse_conditions(args.conditions)
            except ValueError as exc:
                raise ConfigError([str(exc)]) from None
            if not seeds:
                raise ConfigError(["seeds: empty list"])
            if not conditions:
                raise ConfigError(["conditions: empty list"])
            table = load_table(args.table) if args.table else default_table()
            manifest = sweep_to_files(scenario, conditions, seeds, args.out,
                                      threads=max(1, args.threads), table=table)
            print(f"sweep complete: {len(manifest['files'])} files in {args.out}")
            return 0
        if args.command == "dump-table":
            save_table(default_table(), args.out)
            print(f"parameter table written to {args.out}")
            return 0
        if args.command == "sample":
            try:
                dump_parameter_samples(args.family, args.sclass, args.condition,
                                       args.count, args.seed, args.out,
                                       table=load_table(args.table) if args.table else None)
            except (ValueError, KeyError) as exc:
                raise ConfigError([str(exc)]) from None
            print(f"samples written to {args.out}")
            return 0
        parser.error(f"unknown command {args.command!r}")
        return 2
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 2
    except TableFormatError as exc:
        print(f"parameter table error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        logger.exception("run failed")
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
