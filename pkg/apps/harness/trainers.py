"""
Method adapters used by the runner: one object per training method that can train,
snapshot itself into named blobs, restore from a checkpoint and sample the posterior.
"""

from __future__ import annotations

from collections.abc import Callable
from typing import Any, Protocol

import numpy as np

from apps.baselines import DsviState, GaussianVariational, dsvi_elbo, dsvi_sampler, dsvi_train
from apps.dgp import DGPLayer, DGPModel, InducingSample
from apps.gpcore import Likelihood
from apps.ipvi import BRDConfig, DGPProblem, GameState, brd_train, elbo_estimate, sample_posterior
from apps.numcore import Rng, bind
from apps.numcore.optim import OptimizerState
from apps.shared.errors import CheckpointFormatError

from .checkpoint import Checkpoint
from .config import ExperimentConfig

Sampler = Callable[[int, Rng], list[InducingSample]]
OnRecord = Callable[[Any, dict[str, Any]], None]


class Trainer(Protocol):
    method: str

    @property
    def iteration(self) -> int: ...

    @property
    def rng(self) -> Rng: ...

    def train(self, on_record: OnRecord) -> list[dict[str, Any]]: ...

    def blobs(self) -> dict[str, np.ndarray]: ...

    def restore(self, checkpoint: Checkpoint) -> None: ...

    def sampler(self) -> Sampler: ...

    def elbo(self, rng: Rng) -> float: ...


def make_likelihood(config: ExperimentConfig, num_classes: int) -> Likelihood:
    if config.task == "classification":
        return Likelihood("robustmax", num_classes=num_classes, leak=config.robustmax_eps)
    return Likelihood("gaussian")


def brd_config(config: ExperimentConfig) -> BRDConfig:
    return BRDConfig(
        rate_psi=config.rate_psi,
        rate_phi=config.rate_phi,
        rate_theta=config.rate_theta,
        n_disc=config.n_disc,
        num_samples=config.num_samples,
        max_iters=config.max_iters,
        optimizer=config.optimizer,
        log_every=config.log_every,
        disc_samples=config.disc_samples,
    )


def model_blobs(model: DGPModel) -> dict[str, np.ndarray]:
    out = {f"theta.{k}": np.asarray(v) for k, v in model.params.items()}
    for i, layer in enumerate(model.layers):
        out[f"model.layer{i}.w_mean"] = layer.w_mean
    out["model.n_total"] = np.array([float(model.n_total)])
    out["model.num_classes"] = np.array([float(model.likelihood.num_classes)])
    return out


def model_from_checkpoint(config: ExperimentConfig, checkpoint: Checkpoint) -> DGPModel:
    layers = []
    for i in range(config.num_layers):
        name = f"model.layer{i}.w_mean"
        if name not in checkpoint.blobs:
            raise CheckpointFormatError(f"checkpoint has no {name!r} blob")
        w = checkpoint.blobs[name]
        layers.append(DGPLayer(w.shape[0], w.shape[1], w))
    likelihood = make_likelihood(config, int(checkpoint.scalar("model.num_classes")))
    return DGPModel(
        layers=layers,
        likelihood=likelihood,
        n_total=int(checkpoint.scalar("model.n_total")),
        params={k: np.array(v) for k, v in checkpoint.group("theta").items()},
    )


def _restore_model(model: DGPModel, checkpoint: Checkpoint) -> None:
    params = checkpoint.group("theta")
    missing = set(model.params) - set(params)
    if missing:
        raise CheckpointFormatError(f"checkpoint is missing model blobs: {sorted(missing)}")
    model.params.update({k: np.array(v) for k, v in params.items()})


class IpviTrainer:
    method = "ipvi"

    def __init__(self, config: ExperimentConfig, problem: DGPProblem, rng: Rng):
        self.config = config
        self.problem = problem
        self.brd = brd_config(config)
        self.state = GameState.initialize(
            problem,
            self.brd,
            rng,
            noise_dim=config.noise_dim or problem.model.input_dim,
            tied=config.tying == "tied",
            hidden=config.gen_hidden,
            disc_hidden=config.disc_hidden,
            disc_kind=config.disc_kind,
        )

    @property
    def iteration(self) -> int:
        return self.state.iteration

    @property
    def rng(self) -> Rng:
        return self.state.rng

    def train(self, on_record: OnRecord) -> list[dict[str, Any]]:
        return brd_train(self.state, self.problem, self.brd, on_record)

    def blobs(self) -> dict[str, np.ndarray]:
        state = self.state
        out = model_blobs(self.problem.model)
        out.update({f"phi.{k}": v for k, v in state.phi.items()})
        out.update({f"psi.{k}": v for k, v in state.psi.items()})
        out.update(state.opt_psi.state.blobs("opt.psi"))
        out.update(state.opt_phi.state.blobs("opt.phi"))
        out.update(state.opt_theta.state.blobs("opt.theta"))
        out["model.noise_dim"] = np.array([float(state.generator.noise_dim)])
        out["state.iteration"] = np.array([float(state.iteration)])
        return out

    def restore(self, checkpoint: Checkpoint) -> None:
        state = self.state
        _restore_model(self.problem.model, checkpoint)
        phi, psi = checkpoint.group("phi"), checkpoint.group("psi")
        if set(phi) != set(state.phi) or set(psi) != set(state.psi):
            raise CheckpointFormatError("network blobs do not match the configured architecture")
        state.phi = {k: np.array(v) for k, v in phi.items()}
        state.psi = {k: np.array(v) for k, v in psi.items()}
        state.opt_psi.state = OptimizerState.from_blobs(checkpoint.blobs, "opt.psi")
        state.opt_phi.state = OptimizerState.from_blobs(checkpoint.blobs, "opt.phi")
        state.opt_theta.state = OptimizerState.from_blobs(checkpoint.blobs, "opt.theta")
        state.rng = Rng.from_state(checkpoint.rng_state)
        state.iteration = int(checkpoint.scalar("state.iteration"))

    def sampler(self) -> Sampler:
        state, problem = self.state, self.problem

        def sample(count: int, rng: Rng) -> list[InducingSample]:
            return sample_posterior(
                state.generator, state.phi, problem.inducing_inputs(), count, rng
            )

        return sample

    def elbo(self, rng: Rng) -> float:
        return elbo_estimate(
            self.state,
            self.problem,
            k_eval=self.config.elbo_samples,
            refine_steps=self.config.elbo_refine_steps,
            config=self.brd,
            rng=rng,
        )


class DsviTrainer:
    method = "dsvi"

    def __init__(self, config: ExperimentConfig, problem: DGPProblem, rng: Rng):
        self.config = config
        self.problem = problem
        self.state = DsviState.initialize(
            problem.model,
            rng,
            rate=config.dsvi_rate,
            rate_theta=config.dsvi_rate,
            optimizer=config.optimizer,
        )

    @property
    def iteration(self) -> int:
        return self.state.iteration

    @property
    def rng(self) -> Rng:
        return self.state.rng

    def train(self, on_record: OnRecord) -> list[dict[str, Any]]:
        return dsvi_train(
            self.state, self.problem, self.config.max_iters, self.config.log_every, on_record
        )

    def blobs(self) -> dict[str, np.ndarray]:
        out = model_blobs(self.problem.model)
        out.update(self.state.q_params)
        out.update(self.state.opt_q.state.blobs("opt.q"))
        out.update(self.state.opt_theta.state.blobs("opt.theta"))
        out["state.iteration"] = np.array([float(self.state.iteration)])
        return out

    def restore(self, checkpoint: Checkpoint) -> None:
        _restore_model(self.problem.model, checkpoint)
        q = {f"q.{k}": np.array(v) for k, v in checkpoint.group("q").items()}
        if set(q) != set(self.state.q_params):
            raise CheckpointFormatError("variational blobs do not match the configured model")
        self.state.q_params = q
        self.state.opt_q.state = OptimizerState.from_blobs(checkpoint.blobs, "opt.q")
        self.state.opt_theta.state = OptimizerState.from_blobs(checkpoint.blobs, "opt.theta")
        self.state.rng = Rng.from_state(checkpoint.rng_state)
        self.state.iteration = int(checkpoint.scalar("state.iteration"))

    def sampler(self) -> Sampler:
        return dsvi_sampler(self.state, self.problem.model.num_layers)

    def elbo(self, rng: Rng) -> float:
        model = self.problem.model
        q = GaussianVariational(bind(self.state.q_params), model.num_layers)
        batch = self.problem.full_batch()
        return dsvi_elbo(model, q, batch.x, batch.y, self.config.elbo_samples, rng).item()


def make_trainer(config: ExperimentConfig, problem: DGPProblem, rng: Rng) -> Trainer:
    if config.method == "dsvi":
        return DsviTrainer(config, problem, rng)
    return IpviTrainer(config, problem, rng)
