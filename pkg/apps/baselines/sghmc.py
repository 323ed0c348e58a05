"""
Scale-adapted stochastic gradient Hamiltonian Monte Carlo for low-dimensional targets.

The preconditioner V is an exponential moving average of squared gradients. The
update follows the maximization convention used elsewhere: ``grad`` is ∇ log p.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, replace

import numpy as np

from apps.numcore import Rng
from apps.shared.errors import ConfigError, DomainError

FISHER_DECAY = 0.99
FISHER_FLOOR = 1e-8


@dataclass(frozen=True)
class SghmcState:
    position: np.ndarray
    momentum: np.ndarray
    step_size: float
    friction: float
    fisher: np.ndarray

    def __post_init__(self) -> None:
        if self.step_size <= 0.0:
            raise ConfigError(f"SGHMC step size must be positive, got {self.step_size}")
        if not 0.0 < self.friction < 1.0:
            raise ConfigError(f"SGHMC friction must lie in (0, 1), got {self.friction}")
        if np.any(self.fisher < 0.0):
            raise ConfigError("SGHMC Fisher estimate must be non-negative")

    @classmethod
    def start(
        cls,
        init: object,
        step_size: float,
        friction: float = 0.05,
        fisher: float | np.ndarray = 1.0,
    ) -> SghmcState:
        """``init`` is the starting position of the chain."""
        position = np.atleast_1d(np.asarray(init, dtype=np.float64)).copy()
        return cls(
            position=position,
            momentum=np.zeros_like(position),
            step_size=float(step_size),
            friction=float(friction),
            fisher=np.broadcast_to(np.asarray(fisher, dtype=np.float64), position.shape).copy(),
        )


def sghmc_step(
    state: SghmcState, grad: np.ndarray, rng: Rng, inject_noise: bool = True
) -> SghmcState:
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        raise DomainError("SGHMC gradient is not finite")
    fisher = FISHER_DECAY * state.fisher + (1.0 - FISHER_DECAY) * grad * grad
    precond = 1.0 / np.sqrt(np.maximum(fisher, FISHER_FLOOR))
    eta, alpha = state.step_size, state.friction
    momentum = (1.0 - alpha) * state.momentum + eta * precond * grad
    if inject_noise:
        momentum = momentum + np.sqrt(2.0 * alpha * eta * precond) * rng.normal(grad.shape)
    return replace(
        state, position=state.position + momentum, momentum=momentum, fisher=fisher
    )


def run_chain(
    state: SghmcState,
    grad_log_density: Callable[[np.ndarray], np.ndarray],
    num_steps: int,
    rng: Rng,
    thin: int = 10,
    burn_in: int = 0,
) -> tuple[np.ndarray, SghmcState]:
    """Returns kept positions (num_kept × dim) and the final state."""
    kept = []
    for step in range(1, num_steps + 1):
        state = sghmc_step(state, grad_log_density(state.position), rng)
        if step > burn_in and step % thin == 0:
            kept.append(state.position.copy())
    samples = np.array(kept) if kept else np.empty((0, state.position.size))
    return samples, state
