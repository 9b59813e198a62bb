"""Command-line driver.

Each stage subcommand works on the replications, alphas and calibration sizes
selected by ``--rep``, ``--alpha`` and ``--n-cal`` (default: all configured)
and expects the previous stage's files to be in ``--output`` already::

    edgecal simulate --config desk.ini
    edgecal bootstrap --config desk.ini --jobs 8
    edgecal split / calibrate / evaluate --config desk.ini
    edgecal report --config desk.ini

``edgecal run-all`` chains every stage and writes the manifest.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import List, Optional

from . import __version__
from .experiment import (
    ExperimentConfig,
    load_config,
    run_experiment,
    stage_bootstrap,
    stage_calibrate,
    stage_evaluate,
    stage_simulate,
    stage_split,
    to_ini,
    write_reports,
)

STAGES = {
    "simulate": stage_simulate,
    "bootstrap": stage_bootstrap,
    "split": stage_split,
    "calibrate": stage_calibrate,
    "evaluate": stage_evaluate,
}


class StageError(RuntimeError):
    pass


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file; flags below override its values")
    common.add_argument("--jobs", type=int, help="worker processes for the bootstrap")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--output", help="output directory")
    common.add_argument("--replications", type=int, help="number of simulated networks")
    common.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    common.add_argument("-v", "--verbose", action="store_true")
    select = argparse.ArgumentParser(add_help=False)
    select.add_argument("--rep", type=int, action="append", help="replication index (repeatable)")
    select.add_argument("--alpha", type=float, action="append", help="significance level (repeatable)")
    select.add_argument("--n-cal", type=int, action="append", help="calibration size (repeatable)")

    parser = argparse.ArgumentParser(prog="edgecal", description="Bootstrap edge-probability calibration experiments")
    parser.add_argument("--version", action="version", version=f"edgecal {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        sub.add_parser(name, parents=[common, select], help=f"run the {name} stage")
    sub.add_parser("run-all", parents=[common], help="run every stage for every replication")
    sub.add_parser("report", parents=[common], help="aggregate metrics and significance tests")
    return parser


def _resolve(args) -> ExperimentConfig:
    return load_config(
        args.config, jobs=args.jobs, master_seed=args.seed, output_dir=args.output,
        replications=args.replications,
    )


def _pick(requested, available, what):
    if not requested:
        return list(available)
    unknown = [x for x in requested if x not in available]
    if unknown:
        raise ValueError(f"{what} {unknown} not in the config {list(available)}")
    return requested


def _run_stage(name: str, config: ExperimentConfig, args):
    fn = STAGES[name]
    reps = _pick(args.rep, range(config.replications), "replications")
    alphas = _pick(args.alpha, config.alphas, "alpha")
    sizes = _pick(args.n_cal, config.calibration_sizes, "calibration size")
    for rep in reps:
        if name == "simulate":
            jobs = [()]
        elif name == "bootstrap":
            jobs = [(a,) for a in alphas]
        else:
            jobs = [(a, n) for a in alphas for n in sizes]
        for extra in jobs:
            try:
                paths = fn(config, rep, *extra)
            except Exception as exc:
                where = "/".join([f"rep {rep}"] + [str(x) for x in extra])
                raise StageError(f"stage {name} failed ({where}): {exc}") from exc
            for path in sorted(paths.values()):
                print(path)


def main(argv: Optional[List[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        config = _resolve(args)
    except (OSError, ValueError) as exc:
        print(f"edgecal: config error: {exc}", file=sys.stderr)
        return 2
    if args.print_config:
        sys.stdout.write(to_ini(config))
        return 0
    try:
        if args.command in STAGES:
            try:
                _run_stage(args.command, config, args)
            except ValueError as exc:
                print(f"edgecal: {exc}", file=sys.stderr)
                return 2
        elif args.command == "report":
            try:
                paths = write_reports(config)
            except Exception as exc:
                raise StageError(f"stage report failed: {exc}") from exc
            for path in sorted(paths.values()):
                print(path)
        else:
            manifest = run_experiment(config)
            for rep, reason in sorted(manifest.failures.items()):
                print(f"edgecal: {rep}: {reason}", file=sys.stderr)
            if manifest.failures:
                return 1
            print(f"{len(manifest.artifacts)} artifacts written to {config.output_dir}")
    except StageError as exc:
        print(f"edgecal: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
