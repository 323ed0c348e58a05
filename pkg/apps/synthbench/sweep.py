"""
Sensitivity sweeps on the five-mode benchmark.

IPVI is swept over the discriminator rate α_Ψ and over generator capacity; SGHMC over
its step size η. Every setting is scored with JSD, MLL and the number of modes found.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import astuple, dataclass, field
from pathlib import Path

import numpy as np
import structlog

from apps.baselines import SghmcState, run_chain
from apps.ipvi import BRDConfig, GameState, brd_train, param_count, posterior_blocks
from apps.numcore import Rng
from apps.shared.config import settings
from apps.shared.errors import ConfigError, IpviError
from apps.shared.files import atomic_write_text, csv_text

from .mixture import (
    build_ground_truth,
    estimate_jsd,
    grad_log_posterior,
    mll_metric,
    modes_found,
)
from .problem import MixtureProblem

logger = structlog.get_logger(__name__)

SWEEP_HEADER = ("method", "setting", "params", "jsd", "mll", "modes_found", "seed")

# generator hidden widths at roughly 30, 100 and 300 parameters for a 4-d noise input
CAPACITY_LEVELS: dict[str, tuple[int, ...]] = {
    "small": (4,),
    "medium": (6, 8),
    "large": (14, 14),
}
SYNTH_NOISE_DIM = 4
DISC_HIDDEN = (32, 32)

DEFAULT_RATES = (0.01, 0.05, 0.1)
DEFAULT_STEP_SIZES = (0.001, 0.01, 0.1, 0.3, 1.0)
IPVI_ITERS = 20000
SGHMC_STEPS = 100_000
SGHMC_THIN = 10
EVAL_SAMPLES = 10_000

# sampler settings from the step-size sensitivity study; unset keys use SghmcState defaults
SGHMC_VARIANTS: dict[str, dict[str, float]] = {
    "a": {"step_size": 0.3, "friction": 0.4, "fisher": 0.1},
    "b": {"step_size": 0.3, "init": 4.0, "friction": 0.4},
    "c": {"step_size": 0.3, "init": 4.0, "fisher": 0.1},
}


@dataclass
class SweepRow:
    method: str
    setting: float
    params: int
    jsd: float
    mll: float
    modes_found: int
    seed: int


@dataclass
class SweepTask:
    method: str
    setting: float
    seed: int
    capacity: str = "large"
    budget: int | None = None
    sghmc: dict[str, float] = field(default_factory=dict)


def ipvi_samples(
    rate_psi: float,
    hidden: Sequence[int],
    seed: int,
    iters: int = IPVI_ITERS,
    count: int = EVAL_SAMPLES,
    config: BRDConfig | None = None,
) -> tuple[np.ndarray, int]:
    """Train IPVI on the benchmark; returns (samples of u, generator parameter count)."""
    config = config or BRDConfig(rate_psi=rate_psi, max_iters=iters, log_every=max(iters, 1))
    problem = MixtureProblem()
    rng = Rng(seed)
    state = GameState.initialize(
        problem, config, rng, SYNTH_NOISE_DIM, hidden=hidden, disc_hidden=DISC_HIDDEN
    )
    brd_train(state, problem, config)
    blocks = posterior_blocks(state.generator, state.phi, problem.inducing_inputs(), count, rng)
    return blocks[0].reshape(-1), param_count(state.phi)


def sghmc_samples(
    step_size: float,
    seed: int,
    steps: int = SGHMC_STEPS,
    thin: int = SGHMC_THIN,
    init: float = 0.0,
    friction: float = 0.05,
    fisher: float = 1.0,
) -> np.ndarray:
    state = SghmcState.start(init, step_size, friction=friction, fisher=fisher)
    samples, _ = run_chain(state, grad_log_posterior, steps, Rng(seed), thin=thin)
    return samples.reshape(-1)


def score(samples: np.ndarray) -> tuple[float, float, int]:
    truth = build_ground_truth()
    finite = samples[np.isfinite(samples)]
    if finite.size == 0:
        return math.nan, math.nan, 0
    return estimate_jsd(finite, truth), mll_metric(finite, truth), modes_found(finite, truth)


def run_setting(task: SweepTask) -> SweepRow:
    """One sweep cell; numerical failures become a row of NaNs."""
    params = 0
    try:
        if task.method == "ipvi":
            hidden = CAPACITY_LEVELS[task.capacity]
            samples, params = ipvi_samples(
                task.setting, hidden, task.seed, iters=task.budget or IPVI_ITERS
            )
        elif task.method == "sghmc":
            options = {**task.sghmc, "step_size": task.setting}
            samples = sghmc_samples(
                seed=task.seed, steps=task.budget or SGHMC_STEPS, **options
            )
            params = 1
        else:
            raise ConfigError(f"unknown sweep method {task.method!r}")
        jsd, mll, modes = score(samples)
    except ConfigError:
        raise
    except (IpviError, FloatingPointError) as exc:
        logger.warning(
            "sweep_setting_failed", method=task.method, setting=task.setting, error=str(exc)
        )
        return SweepRow(task.method, task.setting, params, math.nan, math.nan, 0, task.seed)
    logger.info(
        "sweep_setting",
        method=task.method,
        setting=task.setting,
        capacity=task.capacity,
        jsd=jsd,
        modes=modes,
    )
    return SweepRow(task.method, task.setting, params, jsd, mll, modes, task.seed)


def build_tasks(
    method: str,
    grid: Sequence[float],
    capacities: Sequence[str] = ("large",),
    seed: int = 0,
    budget: int | None = None,
    sghmc: dict[str, float] | None = None,
) -> list[SweepTask]:
    if method == "ipvi":
        unknown = [c for c in capacities if c not in CAPACITY_LEVELS]
        if unknown:
            raise ConfigError(f"unknown capacity levels: {unknown}")
        return [
            SweepTask("ipvi", float(rate), seed, capacity, budget)
            for capacity in capacities
            for rate in grid
        ]
    if method == "sghmc":
        return [
            SweepTask("sghmc", float(eta), seed, budget=budget, sghmc=dict(sghmc or {}))
            for eta in grid
        ]
    raise ConfigError(f"unknown sweep method {method!r}")


def run_sweep(
    method: str,
    grid: Sequence[float] | None = None,
    capacities: Sequence[str] = ("large",),
    seed: int = 0,
    out_path: str | Path | None = None,
    budget: int | None = None,
    workers: int | None = None,
    sghmc: dict[str, float] | None = None,
) -> list[SweepRow]:
    if grid is None:
        grid = DEFAULT_RATES if method == "ipvi" else DEFAULT_STEP_SIZES
    tasks = build_tasks(method, grid, capacities, seed, budget, sghmc)
    workers = workers or settings.workers
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_setting, tasks))
    else:
        rows = [run_setting(task) for task in tasks]
    if out_path is not None:
        write_sweep_csv(rows, out_path)
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], path: str | Path) -> Path:
    return atomic_write_text(path, csv_text(SWEEP_HEADER, [astuple(r) for r in rows]))


def parse_sweep_spec(spec: str) -> dict[str, object]:
    """
    ``grid=0.01,0.05;capacity=small,large;budget=500;variant=a`` into keyword arguments.

    A bare comma list is read as the grid.
    """
    out: dict[str, object] = {}
    for part in filter(None, (p.strip() for p in spec.split(";"))):
        key, sep, value = part.partition("=")
        if not sep:
            key, value = "grid", part
        key = key.strip()
        try:
            if key == "grid":
                out["grid"] = [float(v) for v in value.split(",") if v.strip()]
            elif key == "capacity":
                out["capacities"] = [v.strip() for v in value.split(",") if v.strip()]
            elif key in ("budget", "seed"):
                out[key] = int(value)
            elif key == "variant":
                if value.strip() not in SGHMC_VARIANTS:
                    raise ConfigError(f"unknown SGHMC variant {value!r}")
                out["sghmc"] = {
                    k: v for k, v in SGHMC_VARIANTS[value.strip()].items() if k != "step_size"
                }
            else:
                raise ConfigError(f"unknown sweep key {key!r}")
        except ValueError as exc:
            raise ConfigError(f"bad sweep value for {key}: {value!r}") from exc
    return out
