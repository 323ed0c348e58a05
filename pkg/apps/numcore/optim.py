"""
Ascent optimizers over named parameter dicts.

Both follow the maximization convention of the payoffs they climb: the update
adds the (scaled) gradient.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from apps.shared.errors import DimensionError

Params = dict[str, np.ndarray]

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class OptimizerState:
    step: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)

    def blobs(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}.step": np.array([float(self.step)])}
        out.update({f"{prefix}.m.{k}": v for k, v in self.m.items()})
        out.update({f"{prefix}.v.{k}": v for k, v in self.v.items()})
        return out

    @classmethod
    def from_blobs(cls, blobs: Mapping[str, np.ndarray], prefix: str) -> OptimizerState:
        state = cls(step=int(blobs[f"{prefix}.step"][0]))
        for key, value in blobs.items():
            if key.startswith(f"{prefix}.m."):
                state.m[key[len(prefix) + 3 :]] = np.array(value)
            elif key.startswith(f"{prefix}.v."):
                state.v[key[len(prefix) + 3 :]] = np.array(value)
        return state


def _check(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
    for name, value in params.items():
        if name not in grads:
            raise DimensionError(f"missing gradient for {name}")
        if grads[name].shape != value.shape:
            raise DimensionError(
                f"gradient shape {grads[name].shape} does not match {name} {value.shape}"
            )


def sga_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    rate: float,
) -> tuple[Params, OptimizerState]:
    _check(params, grads)
    updated = {k: v + rate * grads[k] for k, v in params.items()}
    return updated, OptimizerState(step=state.step + 1)


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    rate: float,
) -> tuple[Params, OptimizerState]:
    _check(params, grads)
    t = state.step + 1
    new = OptimizerState(step=t)
    updated: Params = {}
    for name, value in params.items():
        g = grads[name]
        m = BETA1 * state.m.get(name, np.zeros_like(value)) + (1.0 - BETA1) * g
        v = BETA2 * state.v.get(name, np.zeros_like(value)) + (1.0 - BETA2) * g * g
        m_hat = m / (1.0 - BETA1**t)
        v_hat = v / (1.0 - BETA2**t)
        updated[name] = value + rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        new.m[name] = m
        new.v[name] = v
    return updated, new


STEPS = {"adam": adam_step, "sga": sga_step}


class Ascent:
    """Stateful wrapper binding a step rule to a learning rate."""

    def __init__(self, kind: str, rate: float):
        if kind not in STEPS:
            raise ValueError(f"unknown optimizer {kind!r}")
        self.kind = kind
        self.rate = rate
        self.state = OptimizerState()

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> Params:
        if not params:
            return {}
        updated, self.state = STEPS[self.kind](params, grads, self.state, self.rate)
        return updated
