"""
Differentiable tensor operations.

Binary elementwise ops accept exact-shape operands and trailing broadcast only: the
smaller operand's shape (leading singleton axes stripped) must equal the trailing
axes of the larger one. Scalars and row vectors are the usual cases; anything else
goes through :func:`expand` explicitly.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np
import structlog
from scipy import special

from apps.shared.errors import ContractError, DimensionError, DomainError, TapeError

from .tensor import VJP, Tensor, as_tensor

logger = structlog.get_logger(__name__)

LEAKY_SLOPE = 0.2


def _record(kind: str, value: np.ndarray, inputs: Sequence[Tensor], vjp: VJP) -> Tensor:
    tapes = {id(t.tape): t.tape for t in inputs if t.tape is not None}
    if not tapes:
        return Tensor(value)
    if len(tapes) > 1:
        raise TapeError(f"{kind}: operands belong to different tapes")
    tape = next(iter(tapes.values()))
    return tape.record(kind, value, inputs, vjp)


def _strip(shape: tuple[int, ...]) -> tuple[int, ...]:
    i = 0
    while i < len(shape) and shape[i] == 1:
        i += 1
    return shape[i:]


def _broadcast_shape(kind: str, a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    if a == b:
        return a
    big, small = (a, b) if len(a) >= len(b) else (b, a)
    core = _strip(small)
    if len(core) == 0 or big[len(big) - len(core) :] == core:
        return big
    raise DimensionError(f"{kind}: shapes {a} and {b} are not broadcast-compatible")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    core = _strip(shape)
    lead = grad.ndim - len(core)
    if lead > 0:
        grad = grad.sum(axis=tuple(range(lead)))
    return grad.reshape(shape)


# --------------------------------------------------------------------------- binary


def add(a: object, b: object) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _record(
        "add", a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def sub(a: object, b: object) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _record(
        "sub", a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb))
    )


def mul(a: object, b: object) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a.shape, b.shape)
    av, bv = a.value, b.value
    return _record(
        "mul",
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def div(a: object, b: object) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a.shape, b.shape)
    av, bv = a.value, b.value
    if np.any(bv == 0.0):
        raise DomainError("div: division by zero")
    out = av / bv
    return _record(
        "div",
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)),
    )


def neg(a: object) -> Tensor:
    a = as_tensor(a)
    return _record("neg", -a.value, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul supports 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return _record("matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


# ------------------------------------------------------------------------ unary


def exp(a: object) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    if not np.all(np.isfinite(out)) and np.all(np.isfinite(a.value)):
        logger.warning("exp_overflow", max_input=float(np.max(a.value)))
    return _record("exp", out, (a,), lambda g: (g * out,))


def log(a: object) -> Tensor:
    a = as_tensor(a)
    if np.any(a.value <= 0.0):
        raise DomainError("log of non-positive input")
    av = a.value
    return _record("log", np.log(av), (a,), lambda g: (g / av,))


def sqrt(a: object) -> Tensor:
    a = as_tensor(a)
    if np.any(a.value <= 0.0):
        raise DomainError("sqrt of non-positive input")
    out = np.sqrt(a.value)
    return _record("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


def square(a: object) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _record("square", av * av, (a,), lambda g: (2.0 * g * av,))


def sigmoid(a: object) -> Tensor:
    a = as_tensor(a)
    out = special.expit(a.value)
    return _record("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def log_sigmoid(a: object) -> Tensor:
    """log σ(a) = −softplus(−a), finite for any finite input."""
    a = as_tensor(a)
    av = a.value
    return _record("log_sigmoid", special.log_expit(av), (a,), lambda g: (g * special.expit(-av),))


def softplus(a: object) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _record("softplus", np.logaddexp(0.0, av), (a,), lambda g: (g * special.expit(av),))


def leaky_relu(a: object, slope: float = LEAKY_SLOPE) -> Tensor:
    a = as_tensor(a)
    av = a.value
    mask = np.where(av > 0.0, 1.0, slope)
    return _record("leaky_relu", av * mask, (a,), lambda g: (g * mask,))


def log_normal_cdf(a: object) -> Tensor:
    """log Φ(a), stable far into the lower tail."""
    a = as_tensor(a)
    av = a.value
    out = special.log_ndtr(av)
    ratio = np.exp(-0.5 * av * av - 0.5 * np.log(2.0 * np.pi) - out)
    return _record("log_normal_cdf", out, (a,), lambda g: (g * ratio,))


def clamp_min(a: object, floor: float) -> Tensor:
    a = as_tensor(a)
    keep = a.value >= floor
    return _record("clamp_min", np.where(keep, a.value, floor), (a,), lambda g: (g * keep,))


_UNARY = {
    "exp": exp,
    "log": log,
    "sigmoid": sigmoid,
    "square": square,
    "sqrt": sqrt,
}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(kind: str, a: object, b: object | None = None, slope: float = LEAKY_SLOPE) -> Tensor:
    if kind in _BINARY:
        if b is None:
            raise ContractError(f"{kind} needs two operands")
        return _BINARY[kind](a, b)
    if kind == "leaky_relu":
        return leaky_relu(a, slope)
    if kind in _UNARY:
        return _UNARY[kind](a)
    raise ContractError(f"unknown elementwise kind: {kind}")


# -------------------------------------------------------------------- reductions


def sum(a: object, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    if axis is not None and not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"axis {axis} out of range for shape {a.shape}")
    shape = a.shape

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record("sum", np.sum(a.value, axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a: object, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.value.size if axis is None else a.shape[axis]
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reduce(kind: str, a: object, axis: int | None = None) -> Tensor:
    if kind == "sum":
        return sum(a, axis)
    if kind == "mean":
        return mean(a, axis)
    raise ContractError(f"unknown reduction: {kind}")


def logsumexp(a: object, axis: int) -> Tensor:
    a = as_tensor(a)
    out = special.logsumexp(a.value, axis=axis)
    weights = np.exp(a.value - np.expand_dims(out, axis))
    return _record("logsumexp", out, (a,), lambda g: (np.expand_dims(g, axis) * weights,))


# --------------------------------------------------------------------- structure


def transpose(a: Tensor) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got shape {a.shape}")
    return _record("transpose", a.value.T.copy(), (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    original = a.shape
    return _record("reshape", a.value.reshape(shape), (a,), lambda g: (g.reshape(original),))


def expand(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Repeat singleton axes of ``a`` up to ``shape`` (same rank)."""
    a = as_tensor(a)
    if a.ndim != len(shape) or any(s != t and s != 1 for s, t in zip(a.shape, shape)):
        raise DimensionError(f"cannot expand {a.shape} to {shape}")
    axes = tuple(i for i, (s, t) in enumerate(zip(a.shape, shape)) if s == 1 and t != 1)
    return _record(
        "expand",
        np.broadcast_to(a.value, shape).copy(),
        (a,),
        lambda g: (g.sum(axis=axes, keepdims=True),),
    )


def getitem(a: Tensor, index: object) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _record("getitem", np.array(a.value[index]), (a,), vjp)


def concat(tensors: Sequence[object], axis: int = -1) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]
    try:
        value = np.concatenate([p.value for p in parts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from exc
    return _record(
        "concat", value, parts, lambda g: tuple(np.split(g, bounds, axis=axis))
    )


def diag_part(a: Tensor) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"diag_part needs a square matrix, got {a.shape}")
    return _record("diag_part", np.diag(a.value).copy(), (a,), lambda g: (np.diag(g),))
