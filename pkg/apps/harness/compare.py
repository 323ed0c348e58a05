"""
Multi-seed comparison of experiment configs.

Every (config, seed) run lives in ``<out>/<config name>/seed-<n>/``; a run whose
``metrics.json`` already carries the matching ``config_hash`` is reused instead of retrained.
"""

from __future__ import annotations

from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import orjson
import structlog

from apps.shared.config import settings
from apps.shared.errors import ConfigError, IpviError
from apps.shared.files import atomic_write_bytes, atomic_write_text, csv_text

from .config import ExperimentConfig, load_config
from .runner import JSON_OPTIONS, METRICS_FILE, run_experiment

logger = structlog.get_logger(__name__)

DEFAULT_SEEDS = 10
SUMMARY_HEADER = (
    "config",
    "method",
    "tying",
    "num_layers",
    "runs",
    "failures",
    "train_mll_mean",
    "train_mll_std",
    "test_mll_mean",
    "test_mll_std",
)
CONFIG_SUFFIXES = (".conf", ".yaml", ".yml")


@dataclass
class CompareJob:
    name: str
    config: ExperimentConfig
    out_dir: Path


@dataclass
class SummaryRow:
    config: str
    method: str
    tying: str
    num_layers: int
    runs: int
    failures: int
    train_mll_mean: float
    train_mll_std: float
    test_mll_mean: float
    test_mll_std: float

    def cells(self) -> list[Any]:
        return [getattr(self, key) for key in SUMMARY_HEADER]


def _cached(job: CompareJob) -> dict[str, Any] | None:
    path = job.out_dir / METRICS_FILE
    if not path.exists():
        return None
    try:
        result = orjson.loads(path.read_bytes())
    except orjson.JSONDecodeError:
        return None
    if result.get("config_hash") != job.config.config_hash:
        return None
    return result


def run_job(job: CompareJob) -> dict[str, Any] | None:
    """Metrics for one (config, seed), or ``None`` when the run failed."""
    cached = _cached(job)
    if cached is not None:
        logger.info("compare_cached", config=job.name, seed=job.config.seed)
        return cached
    try:
        return run_experiment(job.config, job.out_dir)
    except IpviError as exc:
        logger.error(
            "compare_config_failed",
            config=job.name,
            seed=job.config.seed,
            error_type=type(exc).__name__,
            error=str(exc),
        )
        return None


def _mean_std(values: list[float]) -> tuple[float, float]:
    if not values:
        return float("nan"), float("nan")
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return float(arr.mean()), std


def summarize(
    name: str, config: ExperimentConfig, results: Sequence[dict[str, Any] | None]
) -> SummaryRow:
    done = [r for r in results if r is not None]
    train_mean, train_std = _mean_std([r["train_mll"] for r in done])
    test_mean, test_std = _mean_std([r["test_mll"] for r in done])
    return SummaryRow(
        config=name,
        method=config.method,
        tying=config.tying,
        num_layers=config.num_layers,
        runs=len(done),
        failures=len(results) - len(done),
        train_mll_mean=train_mean,
        train_mll_std=train_std,
        test_mll_mean=test_mean,
        test_mll_std=test_std,
    )


def discover_configs(directory: str | Path) -> dict[str, ExperimentConfig]:
    root = Path(directory)
    if not root.is_dir():
        raise ConfigError(f"config directory {root} does not exist")
    paths = sorted(p for p in root.iterdir() if p.suffix in CONFIG_SUFFIXES)
    return {p.stem: load_config(p) for p in paths}


def compare(
    configs: dict[str, ExperimentConfig],
    seeds: int = DEFAULT_SEEDS,
    out_dir: str | Path | None = None,
    out_path: str | Path | None = None,
    workers: int | None = None,
) -> list[SummaryRow]:
    if len(configs) < 2:
        raise ConfigError(f"compare needs at least 2 configs, got {len(configs)}")
    if seeds < 1:
        raise ConfigError("compare needs at least one seed")
    root = Path(out_dir or settings.output_dir)
    jobs = [
        CompareJob(name, config.with_overrides(seed=config.seed + s), root / name / f"seed-{s}")
        for name, config in configs.items()
        for s in range(seeds)
    ]
    workers = workers or settings.workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_job, jobs))
    else:
        results = [run_job(job) for job in jobs]

    rows = []
    for i, (name, config) in enumerate(configs.items()):
        rows.append(summarize(name, config, results[i * seeds : (i + 1) * seeds]))
    target = Path(out_path) if out_path is not None else root / "summary.csv"
    write_summary(rows, target)
    logger.info("compare_done", configs=len(configs), seeds=seeds, out=str(target))
    return rows


def write_summary(rows: Sequence[SummaryRow], path: str | Path) -> Path:
    path = Path(path)
    payload = [dict(zip(SUMMARY_HEADER, row.cells())) for row in rows]
    atomic_write_bytes(path.with_suffix(".json"), orjson.dumps(payload, option=JSON_OPTIONS))
    return atomic_write_text(path, csv_text(SUMMARY_HEADER, [row.cells() for row in rows]))
