"""Drop-probability sweeps over many seeded runs.

Cell ``i`` of a sweep (drop probability index times runs per point, plus the run index) uses
seed ``base_seed + i``. Each run evaluates both fusion modes, so every CSV row pair compares
cross-check on and off on identical simulations.
"""

import csv
import dataclasses
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import inflect
import numpy as np
from loguru import logger

from selfish_mesh.config import ScenarioConfig, Strategy
from selfish_mesh.engine import run
from selfish_mesh.harness import BASELINE, CROSSCHECK
from selfish_mesh.utils.errors import ConfigInvalid, SelfishMeshError

p = inflect.engine()

DEFAULT_DROP_PROBS: tuple[float, ...] = tuple(round(1.0 - 0.1 * i, 1) for i in range(10))
CSV_COLUMNS = (
    "strategy",
    "drop_prob",
    "mode",
    "mean_detection_rate",
    "sd_detection_rate",
    "mean_fp_rate",
    "sd_fp_rate",
    "runs",
)
SEED_RULE = "seed = base_seed + prob_index * runs_per_point + run_index"


@dataclass(frozen=True)
class SweepCell:
    """One run of a sweep."""

    index: int
    drop_prob: float
    run: int
    seed: int


@dataclass(frozen=True)
class SweepSpec:
    """Which drop probabilities to sweep and how many runs per point."""

    base: ScenarioConfig = field(default_factory=ScenarioConfig)
    strategy: Strategy | None = None
    drop_probs: tuple[float, ...] = DEFAULT_DROP_PROBS
    runs_per_point: int = 10
    workers: int = 1

    def __post_init__(self) -> None:
        if not self.drop_probs:
            msg = "A sweep needs at least one drop probability"
            raise ConfigInvalid(msg)
        outside = [prob for prob in self.drop_probs if not 0 <= prob <= 1]
        if outside:
            msg = f"Drop probabilities must lie in [0, 1]: {outside}"
            raise ConfigInvalid(msg)
        if self.runs_per_point < 1 or self.workers < 1:
            msg = "runs_per_point and workers must be at least 1"
            raise ConfigInvalid(msg)

    @property
    def cells(self) -> list[SweepCell]:
        """Every run in cell order."""
        return [
            SweepCell(
                index=i * self.runs_per_point + r,
                drop_prob=prob,
                run=r,
                seed=self.base.seed + i * self.runs_per_point + r,
            )
            for i, prob in enumerate(self.drop_probs)
            for r in range(self.runs_per_point)
        ]

    def config_for(self, cell: SweepCell) -> ScenarioConfig:
        """Scenario of one cell."""
        return dataclasses.replace(
            self.base,
            strategy=self.strategy or self.base.strategy,
            drop_prob=cell.drop_prob,
            seed=cell.seed,
        )


@dataclass
class CellOutcome:
    """Final-window rates of one cell per mode, or the error that stopped it."""

    cell: SweepCell
    rates: dict[str, tuple[float | None, float | None]] = field(default_factory=dict)
    error: str | None = None


@dataclass
class SweepRow:
    """Aggregated rates of one (drop probability, mode) point."""

    strategy: str
    drop_prob: float
    mode: str
    mean_detection_rate: float | None
    sd_detection_rate: float | None
    mean_fp_rate: float | None
    sd_fp_rate: float | None
    runs: int


@dataclass
class SweepResult:
    """Rows in CSV order plus the outcome of every cell."""

    spec: SweepSpec
    rows: list[SweepRow]
    outcomes: list[CellOutcome]

    @property
    def failures(self) -> list[CellOutcome]:
        """Cells that raised."""
        return [o for o in self.outcomes if o.error is not None]


def run_cell(cell: SweepCell, config: ScenarioConfig) -> CellOutcome:
    """Run one cell and keep its final-window rates.

    Errors are captured into the outcome so one failed cell does not abort the sweep.
    """
    try:
        result = run(config, collect_trace=False)
    except SelfishMeshError as e:
        return CellOutcome(cell, error=f"{type(e).__name__}: {e}")

    outcome = CellOutcome(cell)
    for record in (result.metrics[-1:] + result.baseline_metrics[-1:]):
        outcome.rates[record.mode] = (record.detection_rate, record.false_positive_rate)
    return outcome


def _mean_sd(values: list[float]) -> tuple[float | None, float | None]:
    if not values:
        return None, None
    array = np.asarray(values, dtype=np.float64)
    return float(array.mean()), float(array.std(ddof=0))


def aggregate(spec: SweepSpec, outcomes: list[CellOutcome]) -> list[SweepRow]:
    """Mean and population standard deviation per drop probability and mode.

    Runs whose rate is undefined (no selfish or no honest nodes) are left out of that rate.
    """
    strategy = (spec.strategy or spec.base.strategy).value
    rows: list[SweepRow] = []
    for prob in spec.drop_probs:
        cells = [o for o in outcomes if o.cell.drop_prob == prob and o.error is None]
        for mode in (CROSSCHECK, BASELINE):
            rates = [o.rates[mode] for o in cells if mode in o.rates]
            detection = _mean_sd([d for d, _ in rates if d is not None])
            false_positive = _mean_sd([f for _, f in rates if f is not None])
            rows.append(
                SweepRow(strategy, prob, mode, *detection, *false_positive, runs=len(rates))
            )
    return rows


def sweep(spec: SweepSpec) -> SweepResult:
    """Run every cell of ``spec`` and aggregate the final-window rates.

    Args:
        spec: The sweep definition.

    Returns:
        One row per (drop probability, mode) and the outcome of every cell, in cell order.
    """
    cells = spec.cells
    configs = [spec.config_for(cell) for cell in cells]
    logger.info(
        f"SWEEP: {len(spec.drop_probs)} drop {p.plural_noun('probability', len(spec.drop_probs))} "
        f"x {spec.runs_per_point} {p.plural_noun('run', spec.runs_per_point)} "
        f"on {spec.workers} {p.plural_noun('worker', spec.workers)}"
    )

    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            outcomes = list(pool.map(run_cell, cells, configs))
    else:
        outcomes = [run_cell(cell, config) for cell, config in zip(cells, configs, strict=True)]

    for outcome in outcomes:
        if outcome.error is not None:
            logger.warning(
                f"SWEEP: Cell {outcome.cell.index} (seed {outcome.cell.seed}) failed: {outcome.error}"
            )

    return SweepResult(spec, aggregate(spec, outcomes), outcomes)


def _format(value: float | None) -> str:
    return "" if value is None else f"{value:.6f}"


def write_csv(path: Path, result: SweepResult) -> Path:
    """Write the aggregated table and its ``.meta.json`` sidecar.

    Returns:
        Path of the sidecar.
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in result.rows:
            writer.writerow(
                [
                    row.strategy,
                    f"{row.drop_prob:.1f}",
                    row.mode,
                    _format(row.mean_detection_rate),
                    _format(row.sd_detection_rate),
                    _format(row.mean_fp_rate),
                    _format(row.sd_fp_rate),
                    row.runs,
                ]
            )

    meta_path = path.with_name(path.name + ".meta.json")
    meta_path.write_text(json.dumps(sweep_metadata(result), indent=2) + "\n", encoding="utf-8")
    logger.info(f"SWEEP: Wrote {path} and {meta_path.name}")
    return meta_path


def sweep_metadata(result: SweepResult) -> dict[str, Any]:
    """Seed derivation and per-cell seeds, for the sidecar file."""
    spec = result.spec
    return {
        "seed_rule": SEED_RULE,
        "base_seed": spec.base.seed,
        "runs_per_point": spec.runs_per_point,
        "drop_probs": list(spec.drop_probs),
        "metric_window": "final",
        "base_config": spec.base.to_dict(),
        "cells": [
            dataclasses.asdict(o.cell) | {"error": o.error} for o in result.outcomes
        ],
    }
