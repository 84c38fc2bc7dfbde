"""Command line interface for selfish-mesh."""

import argparse
import json
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import inflect
from loguru import logger
from rich.console import Console
from rich.table import Table

from .__version__ import __version__
from .config import ScenarioConfig, Strategy, load_config
from .engine import run as run_scenario
from .harness import MetricsRecord
from .sweep import DEFAULT_DROP_PROBS, SweepResult, SweepSpec, sweep as run_sweep, write_csv
from .trace import read_trace, replay as replay_trace, write_trace
from .utils import ConfigInvalid, SelfishMeshError, configure_logging

p = inflect.engine()
console = Console()

EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _config(args: argparse.Namespace, *, crosscheck: bool | None = None) -> ScenarioConfig:
    overrides: dict[str, Any] = {
        "seed": args.seed,
        "crosscheck_enabled": crosscheck,
        "strategy": Strategy.parse(args.strategy) if args.strategy is not None else None,
        "drop_prob": getattr(args, "drop_prob", None),
        "selfish_fraction": args.selfish_fraction,
    }
    return load_config(args.config, overrides)


def _parse_drop_probs(raw: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in raw.split(",") if x.strip())
    except ValueError as e:
        msg = f"Invalid drop probabilities '{raw}'"
        raise ConfigInvalid(msg) from e


def _rate(value: float | None) -> str:
    return "-" if value is None else f"{value:.3f}"


def _metrics_table(title: str, metrics: list[MetricsRecord], baseline: list[MetricsRecord]) -> Table:
    table = Table(title=title)
    table.add_column("window end (s)", justify="right")
    for record in metrics[:1] + baseline[:1]:
        table.add_column(f"{record.mode} detection", justify="right")
        table.add_column(f"{record.mode} false positives", justify="right")

    for configured, other in zip(metrics, baseline, strict=True):
        table.add_row(
            f"{configured.window_end:g}",
            _rate(configured.detection_rate),
            _rate(configured.false_positive_rate),
            _rate(other.detection_rate),
            _rate(other.false_positive_rate),
        )
    return table


def _sweep_table(result: SweepResult) -> Table:
    runs = result.spec.runs_per_point
    table = Table(title=f"Sweep ({runs} {p.plural_noun('run', runs)} per point)")
    for column in ("strategy", "drop_prob", "mode", "detection", "sd", "false positives", "sd", "runs"):
        table.add_column(column, justify="right")
    for row in result.rows:
        table.add_row(
            row.strategy,
            f"{row.drop_prob:.1f}",
            row.mode,
            _rate(row.mean_detection_rate),
            _rate(row.sd_detection_rate),
            _rate(row.mean_fp_rate),
            _rate(row.sd_fp_rate),
            str(row.runs),
        )
    return table


def _write_json(path: Path, document: dict[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, indent=2) + "\n", encoding="utf-8")
    logger.info(f"SIM: Wrote metrics to {path}")


def run_command(args: argparse.Namespace) -> None:
    """Simulate one scenario and report per-window detection metrics."""
    config = _config(args, crosscheck=args.crosscheck)
    result = run_scenario(config, collect_trace=args.trace is not None)

    if args.output is not None:
        _write_json(args.output, result.to_dict())
    if args.trace is not None and result.trace is not None:
        write_trace(args.trace, result.trace)

    console.print(_metrics_table(f"Seed {config.seed}", result.metrics, result.baseline_metrics))


def sweep_command(args: argparse.Namespace) -> None:
    """Sweep drop probabilities and aggregate final-window rates for both fusion modes."""
    base = _config(args)
    spec = SweepSpec(
        base=base,
        drop_probs=_parse_drop_probs(args.drop_probs),
        runs_per_point=args.runs,
        workers=args.workers,
    )
    result = run_sweep(spec)

    write_csv(args.output, result)
    console.print(_sweep_table(result))


def replay_command(args: argparse.Namespace) -> None:
    """Recompute metrics from a recorded trace without simulating the protocol."""
    records = read_trace(args.trace)
    config = load_config(args.config) if args.config is not None else None
    result = replay_trace(records, config)

    if args.output is not None:
        _write_json(
            args.output,
            {
                "metrics": [m.to_dict() for m in result.metrics],
                "baseline_metrics": [m.to_dict() for m in result.baseline_metrics],
            },
        )
    console.print(
        _metrics_table(f"Replay of {args.trace.name}", result.metrics, result.baseline_metrics)
    )


def _scenario_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-c", "--config", type=Path, help="scenario file of key=value lines")
    parser.add_argument("--seed", type=int, help="scenario seed")
    parser.add_argument("--strategy", help="selfish strategy: DropReq or DropRep")
    parser.add_argument(
        "--selfish-fraction", type=float, help="fraction of nodes planted selfish"
    )


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser with its three subcommands."""
    parser = argparse.ArgumentParser(
        prog="selfish-mesh",
        description="Simulate selfish route-discovery behavior in a wireless mesh and detect it.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--log-level", default="INFO", help="TRACE, DEBUG, INFO, WARNING or ERROR (default: INFO)"
    )
    parser.add_argument("--log-file", type=Path, help="also log to this file")
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    run = commands.add_parser("run", help=run_command.__doc__)
    _scenario_options(run)
    run.add_argument(
        "--crosscheck",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="fuse header cross-check evidence",
    )
    run.add_argument("--drop-prob", type=float, help="probability a selfish node drops")
    run.add_argument("-o", "--output", type=Path, help="metrics JSON file")
    run.add_argument("--trace", type=Path, help="trace JSONL file")
    run.set_defaults(handler=run_command)

    sweep = commands.add_parser("sweep", help=sweep_command.__doc__)
    _scenario_options(sweep)
    sweep.add_argument("-o", "--output", type=Path, default=Path("sweep.csv"), help="CSV file")
    sweep.add_argument("--runs", type=int, default=10, help="runs per drop probability")
    sweep.add_argument(
        "--drop-probs",
        default=",".join(f"{x:.1f}" for x in DEFAULT_DROP_PROBS),
        help="comma-separated drop probabilities",
    )
    sweep.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    sweep.set_defaults(handler=sweep_command)

    replay = commands.add_parser("replay", help=replay_command.__doc__)
    replay.add_argument("trace", type=Path, help="trace JSONL file written by 'run'")
    replay.add_argument("-c", "--config", type=Path, help="scenario file overriding the header")
    replay.add_argument("-o", "--output", type=Path, help="metrics JSON file")
    replay.set_defaults(handler=replay_command)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point of the ``selfish-mesh`` console script.

    Args:
        argv: Arguments without the program name; defaults to ``sys.argv[1:]``.

    Returns:
        0 on success, 2 for configuration errors, 3 for any other simulator error.
    """
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level, args.log_file)
    logger.debug(f"Starting selfish-mesh v{__version__}")

    try:
        args.handler(args)
    except SelfishMeshError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_CONFIG if isinstance(e, ConfigInvalid) else EXIT_RUNTIME

    return 0


if __name__ == "__main__":
    raise SystemExit(main())
