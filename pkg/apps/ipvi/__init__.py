from .brd import BRDConfig, GameState, brd_train, discriminator_step, elbo_estimate, player2_step
from .game import (
    discriminator_payoff,
    generate,
    player2_payoff,
    posterior_blocks,
    prior_blocks,
    sample_posterior,
    sample_prior,
)
from .networks import Discriminator, Generator, LayerShape, param_count
from .problem import Batch, DGPProblem

__all__ = [
    "BRDConfig",
    "Batch",
    "DGPProblem",
    "Discriminator",
    "GameState",
    "Generator",
    "LayerShape",
    "brd_train",
    "discriminator_payoff",
    "discriminator_step",
    "elbo_estimate",
    "generate",
    "param_count",
    "player2_payoff",
    "player2_step",
    "posterior_blocks",
    "prior_blocks",
    "sample_posterior",
    "sample_prior",
]
