"""Player payoffs, prior sampling and posterior sampling for the inference game."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from typing import Protocol

import numpy as np

from apps.dgp import DGPModel, InducingSample, stack_samples
from apps.gpcore import KernelHyper, jitter_chol, rbf_ard
from apps.numcore import Rng, Tensor, bind, ops
from apps.shared.errors import ContractError

from .networks import Discriminator, Generator, LayerShape


class Batch(Protocol):
    x: np.ndarray
    y: np.ndarray


class Problem(Protocol):
    """What the game needs from a model: a prior sampler, a data-fit term and θ."""

    layers: list[LayerShape]

    def inducing_inputs(self) -> list[np.ndarray]: ...

    def theta_params(self) -> dict[str, np.ndarray]: ...

    def update_theta(self, values: Mapping[str, np.ndarray]) -> None: ...

    def prior_blocks(self, count: int, rng: Rng) -> list[np.ndarray]: ...

    def next_batch(self, rng: Rng) -> Batch: ...

    def full_batch(self) -> Batch: ...

    def data_fit_sum(
        self, theta: Mapping[str, Tensor], samples: Sequence[InducingSample], batch: Batch, rng: Rng
    ) -> Tensor: ...


# ---------------------------------------------------------------------- sampling


def generate(
    generator: Generator, phi: Mapping[str, Tensor], eps: np.ndarray, z_all: Sequence[np.ndarray]
) -> InducingSample:
    """𝒰 = g_Φ(ε): the same ε feeds every layer."""
    eps = np.asarray(eps, dtype=np.float64).reshape(1, -1)
    blocks = generator.generate_batch(phi, eps, z_all)
    return InducingSample([ops.reshape(b, b.shape[1:]) for b in blocks])


def posterior_blocks(
    generator: Generator,
    phi: Mapping[str, np.ndarray],
    z_all: Sequence[np.ndarray],
    count: int,
    rng: Rng,
) -> list[np.ndarray]:
    if count < 1:
        raise ContractError("need at least one posterior sample")
    eps = rng.normal((count, generator.noise_dim))
    return [b.value for b in generator.generate_batch(bind(phi), eps, z_all)]


def sample_posterior(
    generator: Generator,
    phi: Mapping[str, np.ndarray],
    z_all: Sequence[np.ndarray],
    count: int,
    rng: Rng,
) -> list[InducingSample]:
    return stack_samples(posterior_blocks(generator, phi, z_all, count, rng))


def prior_blocks(model: DGPModel, count: int, rng: Rng) -> list[np.ndarray]:
    """Per layer (K, M, D_out) draws with every column ~ N(0, K_ZZ)."""
    if count < 1:
        raise ContractError("need at least one prior sample")
    out = []
    for i, layer in enumerate(model.layers):
        z = model.params[f"layer{i}.Z"]
        hyper = KernelHyper.from_params(bind(model.params), f"layer{i}.")
        chol = jitter_chol(rbf_ard(z, z, hyper)).factor.value
        noise = rng.normal((count, z.shape[0], layer.d_out))
        out.append(np.einsum("ij,kjd->kid", chol, noise))
    return out


def sample_prior(model: DGPModel, count: int, rng: Rng) -> list[InducingSample]:
    return stack_samples(prior_blocks(model, count, rng))


# ----------------------------------------------------------------------- payoffs


def discriminator_payoff(
    discriminator: Discriminator,
    psi: Mapping[str, Tensor],
    prior: Sequence[object],
    posterior: Sequence[object],
    z_all: Sequence[np.ndarray],
) -> Tensor:
    """mean log(1 − σ(T(𝒱))) + mean log σ(T(𝒰)), with 𝒱 from the prior and 𝒰 from q."""
    t_prior = discriminator.score(psi, prior, z_all)
    t_post = discriminator.score(psi, posterior, z_all)
    return ops.add(
        ops.mean(ops.log_sigmoid(ops.neg(t_prior))), ops.mean(ops.log_sigmoid(t_post))
    )


def player2_payoff(
    problem: Problem,
    discriminator: Discriminator,
    psi: Mapping[str, Tensor],
    theta: Mapping[str, Tensor],
    blocks: Sequence[Tensor],
    batch: Batch,
    rng: Rng,
) -> Tensor:
    """(1/K) Σ_k [data_fit(𝒰_k) − T_Ψ(𝒰_k)] for a stacked (K, M, D_out) draw per layer."""
    count = blocks[0].shape[0]
    samples = [InducingSample([ops.getitem(b, k) for b in blocks]) for k in range(count)]
    fit = problem.data_fit_sum(theta, samples, batch, rng)
    scores = discriminator.score(psi, blocks, problem.inducing_inputs())
    return ops.mul(ops.sub(fit, ops.sum(scores)), 1.0 / count)
