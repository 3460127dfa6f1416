"""Command line interface of the workbench.

Exit codes: 0 on success, 1 on usage or validation errors, 2 on numerical
failures.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .artifacts import OutputLayout, read_trace, round_significant, write_csv, write_json
from .config import WorkbenchConfig, load_config
from .errors import NumericalError, ValidationError
from .harness import build_path, run_fekf_validation, run_identification, run_tracking_comparison, run_training
from .kpis import compute_kpis
from .logging_setup import configure_logging
from .paths import PATH_KINDS, path_to_frame

LOGGER = logging.getLogger(__name__)

DEFAULT_CONFIG = "config/workbench.yml"
EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _common_options() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", default=DEFAULT_CONFIG, help="Path to the workbench configuration file")
    common.add_argument("--seed", type=int, default=None, help="Override the configured seed")
    common.add_argument("--out", default=None, help="Override the output directory")
    common.add_argument("--verbose", action="store_true", help="Log at DEBUG level")
    common.add_argument(
        "--debug-module",
        action="append",
        default=None,
        metavar="LOGGER",
        help="Log one module at DEBUG, e.g. robocar_twin.drl (repeatable)",
    )
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = _Parser(prog="workbench", description="Digital-twin workbench for a scaled robotic car")
    commands = parser.add_subparsers(dest="command", required=True)

    commands.add_parser("identify", parents=[common], help="Identify motor and chassis parameters")
    commands.add_parser("fekf", parents=[common], help="Validate the federated estimator on the oval")

    track = commands.add_parser("track", parents=[common], help="Compare the controllers on the validation paths")
    track.add_argument("--policy", default=None, help="Policy file for the DRL controller")

    train = commands.add_parser("train", parents=[common], help="Train the steering-rate agent")
    train.add_argument("--episodes", type=int, default=None, help="Override the number of training episodes")
    train.add_argument("--no-demonstrator", action="store_true", help="Drop the demonstrator term from the reward")

    kpi = commands.add_parser("kpi", parents=[common], help="Recompute KPIs from a trace with t, dy and delta columns")
    kpi.add_argument("--trace", required=True, help="CSV trace to evaluate")

    paths = commands.add_parser("paths", help="Reference path utilities")
    path_commands = paths.add_subparsers(dest="path_command", required=True)
    export = path_commands.add_parser("export", parents=[common], help="Write a reference path table")
    export.add_argument("--kind", required=True, choices=PATH_KINDS, help="Path to export")
    return parser


def _load(args: argparse.Namespace) -> WorkbenchConfig:
    config = load_config(args.config)
    return config.with_overrides(seed=args.seed, out_dir=args.out)


def _layout(config: WorkbenchConfig, experiment: str) -> OutputLayout:
    return OutputLayout.for_run(config.output.out_dir, experiment, config.seed)


def _identify(args: argparse.Namespace) -> None:
    config = _load(args)
    layout = _layout(config, "identification")
    run_identification(config, layout)
    LOGGER.info("Identification report written", extra={"artifact": str(layout.directory)})


def _fekf(args: argparse.Namespace) -> None:
    config = _load(args)
    layout = _layout(config, "fekf")
    run_fekf_validation(config, layout)
    LOGGER.info("Estimator report written", extra={"artifact": str(layout.directory)})


def _track(args: argparse.Namespace) -> None:
    config = _load(args)
    if args.policy:
        config.tracking.policy_file = Path(args.policy)
    layout = _layout(config, "tracking")
    run_tracking_comparison(config, layout)
    LOGGER.info("Tracking report written", extra={"artifact": str(layout.directory)})


def _train(args: argparse.Namespace) -> None:
    config = _load(args)
    layout = _layout(config, "train")
    use_demonstrator = False if args.no_demonstrator else None
    report = run_training(config, layout, episodes=args.episodes, use_demonstrator=use_demonstrator)
    if report["diverged"]:
        msg = "Training did not improve on the random-policy baseline"
        raise NumericalError(msg)
    LOGGER.info("Training report written", extra={"artifact": str(layout.directory)})


def _trace_step(t: np.ndarray) -> float:
    if t.size < 2:
        msg = "A KPI trace needs at least two samples"
        raise ValidationError(msg)
    steps = np.diff(t)
    dt = round_significant(float(np.median(steps)))
    if dt is None or not dt > 0 or not np.allclose(steps, dt, rtol=1e-6, atol=0.0):
        msg = "KPI traces must be uniformly sampled in t"
        raise ValidationError(msg)
    return dt


def _kpi(args: argparse.Namespace) -> None:
    trace_file = Path(args.trace)
    frame = read_trace(trace_file, ("t", "dy", "delta"))
    dt = _trace_step(frame["t"].to_numpy(dtype=float))
    report = compute_kpis(frame["dy"], frame["delta"], dt, path=trace_file.stem)
    payload = report.as_dict()
    if args.out:
        write_json(Path(args.out) / "kpi" / f"{trace_file.stem}.json", payload)
    print(json.dumps({key: payload[key] for key in ("ME", "RMSE", "IACA", "T_f")}, sort_keys=True))


def _paths_export(args: argparse.Namespace) -> None:
    config = _load(args)
    path = build_path(config, args.kind)
    layout = OutputLayout(root=config.output.out_dir, experiment="paths", tag=args.kind)
    write_csv(layout.directory / f"{args.kind}.csv", path_to_frame(path), f"{args.kind} reference path: s,X,Y,psi,kappa")
    if path.gates is not None:
        write_json(layout.directory / "gates.json", path.gates.as_dict())
    LOGGER.info("Path exported", extra={"path": args.kind, "artifact": str(layout.directory)})


_HANDLERS: dict[str, Callable[[argparse.Namespace], None]] = {
    "identify": _identify,
    "fekf": _fekf,
    "track": _track,
    "train": _train,
    "kpi": _kpi,
    "paths": _paths_export,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_VALIDATION
    except SystemExit as exc:
        # --help
        return int(exc.code or 0)

    configure_logging(logging.DEBUG if args.verbose else logging.INFO, modules=args.debug_module)
    try:
        _HANDLERS[args.command](args)
    except ValidationError as exc:
        LOGGER.error("Validation failed", extra={"command": args.command, "reason": str(exc)})
        return EXIT_VALIDATION
    except NumericalError as exc:
        LOGGER.error("Numerical failure", extra={"command": args.command, "reason": str(exc)})
        return EXIT_NUMERICAL
    return EXIT_OK


__all__ = ["build_parser", "main"]
