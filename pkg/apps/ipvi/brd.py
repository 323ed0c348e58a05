"""
Best-response dynamics for the two-player inference game.

Each outer iteration runs ``n_disc`` ascent steps on the discriminator payoff, then
one ascent step each on θ and Φ using the Player-2 payoff. θ only receives gradient
through the data-fit term because T_Ψ never sees θ.
"""

from __future__ import annotations

import copy
import math
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np
import structlog

from apps.dgp import stack_samples
from apps.numcore import Rng, Tape, bind
from apps.numcore.optim import Ascent
from apps.shared.errors import ConfigError, TrainingAbort
from apps.shared.logging import training_log_fields

from .game import Problem, discriminator_payoff, player2_payoff, posterior_blocks
from .networks import Discriminator, Generator, Params

logger = structlog.get_logger(__name__)

DEFAULT_RATE_PSI = 0.05
DEFAULT_RATE_PHI = 0.001
DEFAULT_RATE_THETA = 0.025
DEFAULT_N_DISC = 3
DEFAULT_NUM_SAMPLES = 10
DEFAULT_MAX_ITERS = 20000
DEFAULT_REFINE_STEPS = 500

Record = dict[str, Any]


@dataclass
class BRDConfig:
    rate_psi: float = DEFAULT_RATE_PSI
    rate_phi: float = DEFAULT_RATE_PHI
    rate_theta: float = DEFAULT_RATE_THETA
    n_disc: int = DEFAULT_N_DISC
    num_samples: int = DEFAULT_NUM_SAMPLES
    max_iters: int = DEFAULT_MAX_ITERS
    optimizer: str = "adam"
    log_every: int = 100
    disc_samples: int | None = None

    def __post_init__(self) -> None:
        if min(self.rate_psi, self.rate_phi, self.rate_theta) <= 0.0:
            raise ConfigError("learning rates must be positive")
        if self.n_disc < 1 or self.num_samples < 1:
            raise ConfigError("n_disc and K must be at least 1")
        if self.disc_samples is not None and self.disc_samples < 1:
            raise ConfigError("disc_samples must be at least 1")
        if self.max_iters < 0:
            raise ConfigError("max_iters cannot be negative")

    @property
    def discriminator_count(self) -> int:
        """Prior and posterior draws per discriminator step; defaults to K."""
        return self.num_samples if self.disc_samples is None else self.disc_samples


@dataclass
class GameState:
    generator: Generator
    discriminator: Discriminator
    phi: Params
    psi: Params
    opt_psi: Ascent
    opt_phi: Ascent
    opt_theta: Ascent
    rng: Rng
    iteration: int = 0

    @classmethod
    def initialize(
        cls,
        problem: Problem,
        config: BRDConfig,
        rng: Rng,
        noise_dim: int,
        tied: bool = True,
        hidden: Sequence[int] | None = None,
        disc_hidden: Sequence[int] | None = None,
        disc_kind: str = "mlp",
    ) -> GameState:
        """Fresh networks; ``disc_hidden`` defaults to the generator's widths."""
        generator = Generator(noise_dim, problem.layers, tied=tied, hidden=hidden)
        discriminator = Discriminator(
            problem.layers,
            tied=tied,
            hidden=hidden if disc_hidden is None else disc_hidden,
            kind=disc_kind,
        )
        return cls(
            generator=generator,
            discriminator=discriminator,
            phi=generator.init_params(rng),
            psi=discriminator.init_params(rng),
            opt_psi=Ascent(config.optimizer, config.rate_psi),
            opt_phi=Ascent(config.optimizer, config.rate_phi),
            opt_theta=Ascent(config.optimizer, config.rate_theta),
            rng=rng,
        )


def discriminator_step(
    state: GameState, problem: Problem, psi: Params, optimizer: Ascent, count: int, rng: Rng
) -> tuple[Params, float]:
    """One ascent step on the Player-1 payoff at frozen Φ; returns (Ψ', payoff)."""
    z_all = problem.inducing_inputs()
    prior = problem.prior_blocks(count, rng)
    posterior = posterior_blocks(state.generator, state.phi, z_all, count, rng)
    tape = Tape()
    leaves = tape.watch(psi)
    payoff = discriminator_payoff(state.discriminator, leaves, prior, posterior, z_all)
    grads = tape.backward(payoff).by_name(leaves)
    return optimizer.step(psi, grads), payoff.item()


def player2_step(state: GameState, problem: Problem, count: int) -> float:
    """One ascent step each on θ and Φ against the frozen discriminator."""
    rng = state.rng
    batch = problem.next_batch(rng)
    eps = rng.normal((count, state.generator.noise_dim))
    tape = Tape()
    phi = tape.watch(state.phi)
    theta = tape.watch(problem.theta_params())
    blocks = state.generator.generate_batch(phi, eps, problem.inducing_inputs())
    payoff = player2_payoff(
        problem, state.discriminator, bind(state.psi), theta, blocks, batch, rng
    )
    grads = tape.backward(payoff)
    new_theta = state.opt_theta.step(problem.theta_params(), grads.by_name(theta))
    state.phi = state.opt_phi.step(state.phi, grads.by_name(phi))
    problem.update_theta(new_theta)
    return payoff.item()


def brd_train(
    state: GameState,
    problem: Problem,
    config: BRDConfig,
    on_record: Callable[[GameState, Record], None] | None = None,
) -> list[Record]:
    """Run outer iterations until ``config.max_iters``; returns the per-iteration log."""
    records: list[Record] = []
    while state.iteration < config.max_iters:
        started = time.perf_counter()
        player1 = math.nan
        for _ in range(config.n_disc):
            state.psi, player1 = discriminator_step(
                state, problem, state.psi, state.opt_psi, config.discriminator_count, state.rng
            )
        player2 = player2_step(state, problem, config.num_samples)
        state.iteration += 1

        # the Player-2 payoff is the ELBO estimate under the current discriminator
        record = training_log_fields(
            state.iteration, player1, player2, player2, time.perf_counter() - started
        )
        if not (math.isfinite(player1) and math.isfinite(player2)):
            logger.error("brd_abort", **record)
            raise TrainingAbort(f"non-finite payoff at iteration {state.iteration}", record)
        records.append(record)
        if state.iteration % config.log_every == 0:
            logger.info("brd_iteration", **record)
        if on_record is not None:
            on_record(state, record)
    return records


def elbo_estimate(
    state: GameState,
    problem: Problem,
    k_eval: int = 100,
    refine_steps: int = DEFAULT_REFINE_STEPS,
    config: BRDConfig | None = None,
    rng: Rng | None = None,
) -> float:
    """
    Full-batch (1/K) Σ [data_fit − T_Ψ] after refining a copy of Ψ at frozen Φ.

    The training state's Ψ and optimizer are left untouched.
    """
    config = config or BRDConfig()
    rng = rng or state.rng.spawn()
    psi = copy.deepcopy(state.psi)
    optimizer = Ascent(config.optimizer, config.rate_psi)
    for _ in range(refine_steps):
        psi, _ = discriminator_step(
            state, problem, psi, optimizer, config.discriminator_count, rng
        )

    z_all = problem.inducing_inputs()
    blocks = posterior_blocks(state.generator, state.phi, z_all, k_eval, rng)
    samples = stack_samples(blocks)
    fit = problem.data_fit_sum(bind(problem.theta_params()), samples, problem.full_batch(), rng)
    scores = state.discriminator.score(bind(psi), blocks, z_all)
    return float((fit.item() - float(np.sum(scores.value))) / k_eval)


