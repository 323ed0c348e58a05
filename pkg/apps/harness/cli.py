"""
Command-line entry point: ``ipvi {train,eval,synth,compare}``.

Exit codes: 0 success, 1 usage or config error, 2 data or checkpoint error,
3 training abort.
"""

from __future__ import annotations

import argparse
import sys
from collections.abc import Sequence
from dataclasses import asdict
from typing import Any, NoReturn

import orjson
import structlog

from apps.shared.config import settings
from apps.shared.errors import EXIT_DATA, EXIT_OK, EXIT_USAGE, IpviError
from apps.shared.logging import configure_logging
from apps.synthbench import parse_sweep_spec, run_sweep

from .compare import DEFAULT_SEEDS, compare, discover_configs
from .config import load_config
from .metrics import start_metrics_server
from .runner import evaluate_checkpoint, run_experiment

logger = structlog.get_logger(__name__)


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """Raises :class:`UsageError` on bad arguments instead of exiting."""

    def error(self, message: str) -> NoReturn:
        raise UsageError(message)


def build_parser() -> Parser:
    parser = Parser(prog="ipvi", description="Implicit posterior variational inference for deep GPs")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    train = sub.add_parser("train", help="Train and evaluate one configuration")
    train.add_argument("--config", required=True, help="Config file (.conf key=value or .yaml)")
    train.add_argument("--seed", type=int, help="Override the config seed")
    train.add_argument("--out", help="Output directory (default: IPVI_OUTPUT_DIR)")
    train.add_argument("--resume", help="Checkpoint to resume training from")

    evaluate = sub.add_parser("eval", help="Evaluate a checkpoint on a CSV")
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--data", required=True)
    evaluate.add_argument("--samples", type=int, help="Posterior samples for the predictive")

    synth = sub.add_parser("synth", help="Sensitivity sweep on the five-mode benchmark")
    synth.add_argument("--method", choices=["ipvi", "sghmc"], required=True)
    synth.add_argument("--sweep", default="", help="e.g. 'grid=0.01,0.05;capacity=small,large'")
    synth.add_argument("--out", help="Sweep CSV path")
    synth.add_argument("--seed", type=int)

    comp = sub.add_parser("compare", help="Multi-seed comparison of every config in a directory")
    comp.add_argument("--configs", required=True, help="Directory of config files")
    comp.add_argument("--seeds", type=int, default=DEFAULT_SEEDS)
    comp.add_argument("--out", help="Output directory for runs and summary.csv")
    return parser


def _emit(payload: Any) -> None:
    sys.stdout.write(orjson.dumps(payload, option=orjson.OPT_SORT_KEYS).decode() + "\n")


def cmd_train(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = config.with_overrides(seed=args.seed)
    _emit(run_experiment(config, args.out, resume=args.resume))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    _emit(evaluate_checkpoint(args.checkpoint, args.data, args.samples))
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    options = parse_sweep_spec(args.sweep)
    if args.seed is not None:
        options["seed"] = args.seed
    rows = run_sweep(args.method, out_path=args.out, **options)
    _emit([asdict(row) for row in rows])
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    rows = compare(discover_configs(args.configs), seeds=args.seeds, out_dir=args.out)
    _emit([asdict(row) for row in rows])
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "synth": cmd_synth,
    "compare": cmd_compare,
}


def main(argv: Sequence[str] | None = None) -> int:
    configure_logging(settings.log_level)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"ipvi: {exc}\n")
        return EXIT_USAGE

    if settings.metrics_port:
        start_metrics_server(settings.metrics_port)

    try:
        return COMMANDS[args.command](args)
    except IpviError as exc:
        logger.error("command_failed", command=args.command, error_type=type(exc).__name__, error=str(exc))
        return exc.exit_code
    except OSError as exc:
        logger.error("command_failed", command=args.command, error_type="OSError", error=str(exc))
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
