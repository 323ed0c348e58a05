"""
Mean-field Gaussian variational inference for DGPs (doubly stochastic VI).

Each layer carries q(U_ℓ) = ∏_j N(U_ℓ[:, j] | m_ℓ[:, j], L_ℓ L_ℓᵀ) with one Cholesky
factor shared by the layer's output columns. The factor's diagonal is stored through
softplus, so S stays positive definite under unconstrained ascent.
"""

from __future__ import annotations

import math
import time
from collections.abc import Callable, Mapping
from dataclasses import dataclass
from typing import Any

import numpy as np
import structlog

from apps.dgp import BoundDGP, DGPModel, InducingSample, data_fit
from apps.gpcore import kzz_cholesky
from apps.numcore import Rng, Tape, Tensor, as_tensor, bind, ops
from apps.numcore.linalg import log_det_from_chol, tri_solve
from apps.numcore.optim import Ascent
from apps.shared.errors import ConfigError, TrainingAbort
from apps.shared.logging import training_log_fields

logger = structlog.get_logger(__name__)

DEFAULT_DSVI_RATE = 0.01


def _inverse_softplus(x: np.ndarray) -> np.ndarray:
    return np.log(np.expm1(x))


def kl_gaussian(mean: object, chol_s: object, chol_k: object) -> Tensor:
    """
    KL[N(m, S) ‖ N(0, K)] summed over the columns of ``mean``.

    S = L_S L_Sᵀ and K = L_K L_Kᵀ are shared by all columns.
    """
    mean, chol_s, chol_k = as_tensor(mean), as_tensor(chol_s), as_tensor(chol_k)
    if mean.ndim == 1:
        mean = ops.reshape(mean, (mean.shape[0], 1))
    size, columns = mean.shape
    trace = ops.sum(ops.square(tri_solve(chol_k, chol_s)))
    mahalanobis = ops.sum(ops.square(tri_solve(chol_k, mean)))
    log_dets = ops.sub(log_det_from_chol(chol_k), log_det_from_chol(chol_s))
    per_column = ops.add(ops.sub(trace, float(size)), log_dets)
    return ops.mul(0.5, ops.add(ops.mul(per_column, float(columns)), mahalanobis))


class GaussianVariational:
    """q(𝒰) = ∏_ℓ q(U_ℓ) over tensors named ``q.layer{ℓ}.mean`` / ``q.layer{ℓ}.chol_raw``."""

    def __init__(self, params: Mapping[str, Tensor], num_layers: int):
        self.params = params
        self.num_layers = num_layers

    @staticmethod
    def init_params(model: DGPModel, inner_scale: float | None = None) -> dict[str, np.ndarray]:
        """Start at the prior (m = 0, S = K_ZZ), or at S = inner_scale·I for hidden layers."""
        bound = model.bind()
        params: dict[str, np.ndarray] = {}
        last = model.num_layers - 1
        for i, layer in enumerate(model.layers):
            m = model.num_inducing
            if inner_scale is not None and i < last:
                chol = np.sqrt(inner_scale) * np.eye(m)
            else:
                chol = np.array(bound.chol(i).value)
            raw = np.tril(chol, -1)
            raw[np.diag_indices(m)] = _inverse_softplus(np.diag(chol))
            params[f"q.layer{i}.mean"] = np.zeros((m, layer.d_out))
            params[f"q.layer{i}.chol_raw"] = raw
        return params

    def mean(self, layer: int) -> Tensor:
        return as_tensor(self.params[f"q.layer{layer}.mean"])

    def chol(self, layer: int) -> Tensor:
        raw = as_tensor(self.params[f"q.layer{layer}.chol_raw"])
        size = raw.shape[0]
        strict = ops.mul(raw, np.tril(np.ones((size, size)), -1))
        diag = ops.reshape(ops.softplus(ops.diag_part(raw)), (size, 1))
        return ops.add(strict, ops.mul(ops.expand(diag, (size, size)), np.eye(size)))

    def sample(self, rng: Rng) -> InducingSample:
        blocks = []
        for i in range(self.num_layers):
            mean = self.mean(i)
            noise = rng.normal(mean.shape)
            blocks.append(ops.add(mean, ops.matmul(self.chol(i), Tensor(noise))))
        return InducingSample(blocks)

    def kl(self, bound: BoundDGP) -> Tensor:
        total = Tensor(0.0)
        for i in range(self.num_layers):
            total = ops.add(total, kl_gaussian(self.mean(i), self.chol(i), bound.chol(i)))
        return total

    def covariance(self, layer: int) -> np.ndarray:
        chol = self.chol(layer).value
        return chol @ chol.T


def dsvi_elbo(
    model: DGPModel | BoundDGP,
    q: GaussianVariational,
    x_b: np.ndarray,
    y_b: np.ndarray,
    num_samples: int,
    rng: Rng,
) -> Tensor:
    """Scaled MC data fit over ``num_samples`` joint draws of (𝒰, F) minus Σ_ℓ KL."""
    bound = model if isinstance(model, BoundDGP) else model.bind()
    if num_samples < 1:
        raise ConfigError("DSVI needs at least one sample")
    fit = Tensor(0.0)
    for _ in range(num_samples):
        fit = ops.add(fit, data_fit(bound, x_b, y_b, q.sample(rng), 1, rng))
    return ops.sub(ops.mul(fit, 1.0 / num_samples), q.kl(bound))


@dataclass
class DsviState:
    q_params: dict[str, np.ndarray]
    opt_q: Ascent
    opt_theta: Ascent
    rng: Rng
    iteration: int = 0

    @classmethod
    def initialize(
        cls,
        model: DGPModel,
        rng: Rng,
        rate: float = DEFAULT_DSVI_RATE,
        rate_theta: float = DEFAULT_DSVI_RATE,
        optimizer: str = "adam",
        inner_scale: float | None = None,
    ) -> DsviState:
        return cls(
            q_params=GaussianVariational.init_params(model, inner_scale),
            opt_q=Ascent(optimizer, rate),
            opt_theta=Ascent(optimizer, rate_theta),
            rng=rng,
        )


def dsvi_train(
    state: DsviState,
    problem: Any,
    max_iters: int,
    log_every: int = 100,
    on_record: Callable[[DsviState, dict[str, Any]], None] | None = None,
) -> list[dict[str, Any]]:
    """Joint ascent on (θ, m, L); ``problem`` is a :class:`apps.ipvi.DGPProblem`."""
    model: DGPModel = problem.model
    records = []
    while state.iteration < max_iters:
        started = time.perf_counter()
        batch = problem.next_batch(state.rng)
        tape = Tape()
        theta = tape.watch(problem.theta_params())
        q_leaves = tape.watch(state.q_params)
        q = GaussianVariational(q_leaves, model.num_layers)
        elbo = dsvi_elbo(
            model.bind(theta), q, batch.x, batch.y, problem.num_samples, state.rng
        )
        grads = tape.backward(elbo)
        problem.update_theta(state.opt_theta.step(problem.theta_params(), grads.by_name(theta)))
        state.q_params = state.opt_q.step(state.q_params, grads.by_name(q_leaves))
        state.iteration += 1

        value = elbo.item()
        record = training_log_fields(
            state.iteration, None, value, value, time.perf_counter() - started
        )
        if not math.isfinite(value):
            logger.error("brd_abort", method="dsvi", **record)
            raise TrainingAbort(f"non-finite ELBO at iteration {state.iteration}", record)
        records.append(record)
        if state.iteration % log_every == 0:
            logger.info("dsvi_iteration", **record)
        if on_record is not None:
            on_record(state, record)
    return records


def dsvi_sampler(state: DsviState, num_layers: int) -> Callable[[int, Rng], list[InducingSample]]:
    """Posterior sampler for :func:`apps.dgp.predict` built from the trained q."""

    def sample(count: int, rng: Rng) -> list[InducingSample]:
        q = GaussianVariational(bind(state.q_params), num_layers)
        return [q.sample(rng) for _ in range(count)]

    return sample
