"""
One experiment end to end: load and split the data, build the DGP, train with the
configured method, evaluate, and write ``training_log.csv``, ``metrics.json`` and
``checkpoint.bin`` into the output directory.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import orjson
import structlog

from apps.dgp import DGPModel, build, predict
from apps.ipvi import DGPProblem
from apps.numcore import Rng
from apps.shared.config import settings
from apps.shared.errors import CheckpointFormatError, ConfigError, TrainingAbort
from apps.shared.files import atomic_write_bytes, atomic_write_text, csv_text

from . import metrics
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, parse_text
from .data import Dataset, Standardizer, load_csv, split
from .trainers import Trainer, make_likelihood, make_trainer, model_from_checkpoint

logger = structlog.get_logger(__name__)

LOG_HEADER = ("iter", "player1", "player2", "elbo", "seconds")
LOG_FILE = "training_log.csv"
METRICS_FILE = "metrics.json"
CHECKPOINT_FILE = "checkpoint.bin"
# Evaluation draws from its own stream so the numbers do not depend on training length.
EVAL_SEED_OFFSET = 7919
JSON_OPTIONS = orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY


@dataclass
class Prepared:
    config: ExperimentConfig
    train: Dataset
    test: Dataset
    model: DGPModel
    problem: DGPProblem


def prepare(config: ExperimentConfig) -> Prepared:
    if not config.data:
        raise ConfigError("config has no data path")
    dataset = load_csv(config.data, config.task, config.targets)
    split_seed = config.seed if config.split_seed is None else config.split_seed
    train, test = split(dataset, config.split_fraction, split_seed)
    likelihood = make_likelihood(config, dataset.num_classes)
    y_dim = dataset.num_classes if config.task == "classification" else dataset.y_raw.shape[1]
    model = build(config, train.x, y_dim, likelihood)
    problem = DGPProblem(
        model,
        train.x,
        train.y,
        batch_size=config.effective_batch_size(len(train)),
        num_samples=config.mc_samples,
        train_hypers=config.train_hypers,
        train_inducing=config.train_inducing,
    )
    return Prepared(config, train, test, model, problem)


def _data_blobs(train: Dataset) -> dict[str, np.ndarray]:
    out = {"data.x_mean": train.x_stats.mean, "data.x_std": train.x_stats.std}
    if train.y_stats is not None:
        out["data.y_mean"] = train.y_stats.mean
        out["data.y_std"] = train.y_stats.std
    return out


def _snapshot(trainer: Trainer, prepared: Prepared, path: Path) -> Path:
    blobs = trainer.blobs()
    blobs.update(_data_blobs(prepared.train))
    return save_checkpoint(path, prepared.config.canonical_text(), blobs, trainer.rng.get_state())


def _log_cells(record: dict[str, Any]) -> list[Any]:
    return [record[key] for key in LOG_HEADER]


def _read_log(path: Path, upto: int) -> list[list[str]]:
    """Rows of an earlier training log up to and including iteration ``upto``."""
    if not path.exists():
        return []
    with open(path, newline="") as handle:
        rows = list(csv.reader(handle))
    return [row for row in rows[1:] if row and int(row[0]) <= upto]


def _write_log(out_dir: Path, rows: list[list[Any]]) -> Path:
    return atomic_write_text(out_dir / LOG_FILE, csv_text(LOG_HEADER, rows))


def _evaluate(trainer: Trainer, prepared: Prepared, rng: Rng) -> dict[str, Any]:
    config = prepared.config
    sampler = trainer.sampler()
    train = predict(
        prepared.model, sampler, prepared.train.x, prepared.train.y, config.predict_samples, rng
    )
    test = predict(
        prepared.model, sampler, prepared.test.x, prepared.test.y, config.predict_samples, rng
    )
    result: dict[str, Any] = {
        "train_mll": train.mll,
        "test_mll": test.mll,
        "elbo": trainer.elbo(rng),
    }
    if test.accuracy is not None:
        result["test_accuracy"] = test.accuracy
    return result


def run_experiment(
    config: ExperimentConfig,
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
) -> dict[str, Any]:
    """Train and evaluate one configuration; returns the ``metrics.json`` payload."""
    started = time.perf_counter()
    out = Path(out_dir or settings.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    prepared = prepare(config)
    trainer = make_trainer(config, prepared.problem, Rng(config.seed))
    rows: list[list[Any]] = []

    if resume is not None:
        checkpoint = load_checkpoint(resume)
        if checkpoint.config_text != config.canonical_text():
            logger.warning("checkpoint_config_mismatch", checkpoint=str(resume))
        trainer.restore(checkpoint)
        rows = _read_log(out / LOG_FILE, trainer.iteration)

    log = logger.bind(method=config.method, config_hash=config.config_hash, seed=config.seed)
    log.info("experiment_start", out=str(out), start_iteration=trainer.iteration)

    def on_record(_state: Any, record: dict[str, Any]) -> None:
        rows.append(_log_cells(record))
        metrics.record_iteration(config.method, record)
        every = config.checkpoint_every
        if every and record["iter"] % every == 0:
            _snapshot(trainer, prepared, out / f"checkpoint-{record['iter']:06d}.bin")

    try:
        trainer.train(on_record)
    except TrainingAbort as exc:
        rows.append(_log_cells(exc.record))
        _write_log(out, rows)
        metrics.record_run(config.method, success=False)
        raise
    _write_log(out, rows)

    result = _evaluate(trainer, prepared, Rng(config.seed + EVAL_SEED_OFFSET))
    result.update(
        {
            "method": config.method,
            "tying": config.tying,
            "num_layers": config.num_layers,
            "iters": trainer.iteration,
            "seconds": round(time.perf_counter() - started, 3),
            "seed": config.seed,
            "config_hash": config.config_hash,
            "units": "standardized",
        }
    )
    atomic_write_bytes(out / METRICS_FILE, orjson.dumps(result, option=JSON_OPTIONS))
    _snapshot(trainer, prepared, out / CHECKPOINT_FILE)
    metrics.record_run(config.method, success=True)
    log.info("experiment_done", test_mll=result["test_mll"], elbo=result["elbo"], iters=trainer.iteration)
    return result


def _eval_dataset(config: ExperimentConfig, checkpoint: Checkpoint, data: str | Path) -> Dataset:
    """Rows of ``data`` standardized with the statistics saved from training."""
    dataset = load_csv(data, config.task, config.targets)
    if "data.x_mean" not in checkpoint.blobs:
        raise CheckpointFormatError("checkpoint has no data statistics")
    x_stats = Standardizer(checkpoint.blobs["data.x_mean"], checkpoint.blobs["data.x_std"])
    y_stats = None
    if config.task == "regression":
        y_stats = Standardizer(checkpoint.blobs["data.y_mean"], checkpoint.blobs["data.y_std"])
    return Dataset(
        x_raw=dataset.x_raw,
        y_raw=dataset.y_raw,
        task=config.task,
        x_stats=x_stats,
        y_stats=y_stats,
        indices=dataset.indices,
    )


def evaluate_checkpoint(
    checkpoint_path: str | Path,
    data: str | Path,
    num_samples: int | None = None,
) -> dict[str, Any]:
    """Predictive log-likelihood of a saved posterior on a new CSV."""
    checkpoint = load_checkpoint(checkpoint_path)
    config = parse_text(checkpoint.config_text)
    dataset = _eval_dataset(config, checkpoint, data)
    model = model_from_checkpoint(config, checkpoint)
    if dataset.input_dim != model.input_dim:
        raise ConfigError(
            f"data has {dataset.input_dim} input columns, model expects {model.input_dim}"
        )
    problem = DGPProblem(model, dataset.x, dataset.y)
    trainer = make_trainer(config, problem, Rng(config.seed))
    trainer.restore(checkpoint)
    count = num_samples or config.predict_samples
    prediction = predict(
        model, trainer.sampler(), dataset.x, dataset.y, count, Rng(config.seed + EVAL_SEED_OFFSET)
    )
    result: dict[str, Any] = {
        "mll": prediction.mll,
        "rows": len(dataset),
        "samples": count,
        "method": config.method,
        "config_hash": config.config_hash,
        "units": "standardized",
    }
    if prediction.accuracy is not None:
        result["accuracy"] = prediction.accuracy
    logger.info("checkpoint_evaluated", checkpoint=str(checkpoint_path), mll=prediction.mll)
    return result
