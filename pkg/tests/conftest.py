"""Shared fixtures and finite-difference helpers."""

from __future__ import annotations

from collections.abc import Callable
from pathlib import Path

import numpy as np
import pytest

from apps.numcore import Rng, Tape, Tensor

FD_STEP = 1e-5


def numeric_grad(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central finite differences of a scalar function of one array."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[idx] += h
        down[idx] -= h
        grad[idx] = (fn(up) - fn(down)) / (2.0 * h)
    return grad


def tape_grad(fn: Callable[[Tensor], Tensor], x: np.ndarray) -> np.ndarray:
    tape = Tape()
    leaf = tape.variable(x)
    return tape.backward(fn(leaf)).of(leaf)


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))


def check_grad(fn: Callable[[Tensor], Tensor], x: np.ndarray, tol: float = 1e-5) -> float:
    """Tape gradient of ``fn`` at ``x`` against central differences; returns the error."""
    analytic = tape_grad(fn, x)
    numeric = numeric_grad(lambda v: fn(Tensor(v)).item(), x)
    err = rel_err(analytic, numeric)
    assert err <= tol, f"gradient mismatch {err:.3e}\n{analytic}\nvs\n{numeric}"
    return err


def sine_data(n: int = 40, d: int = 1, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    gen = np.random.default_rng(seed)
    x = gen.uniform(-2.0, 2.0, size=(n, d))
    y = np.sin(2.0 * x.sum(axis=1, keepdims=True)) + 0.1 * gen.standard_normal((n, 1))
    return x, y


def write_csv(path: Path, x: np.ndarray, y: np.ndarray, header: bool = True) -> Path:
    lines = []
    if header:
        lines.append(",".join([f"x{i}" for i in range(x.shape[1])] + ["y"]))
    for row_x, row_y in zip(x, y):
        lines.append(",".join(f"{v:.17g}" for v in [*row_x, *np.ravel(row_y)]))
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def rng() -> Rng:
    return Rng(0)


@pytest.fixture
def regression_csv(tmp_path: Path) -> Path:
    x, y = sine_data(n=40, d=2)
    return write_csv(tmp_path / "sine.csv", x, y)
