"""
Dense float64 tensors recorded on a define-by-run gradient tape.

A :class:`Tape` is rebuilt for every training step. Leaves are created with
:meth:`Tape.variable` (or :meth:`Tape.watch` for a whole parameter dict), every
operation in :mod:`apps.numcore.ops` / :mod:`apps.numcore.linalg` appends one node,
and :meth:`Tape.backward` walks the node list once in reverse.

Tensors that never touch a tape are plain constants: the same model code runs for
training (on a tape) and for frozen evaluation (no tape, no bookkeeping).
"""

from __future__ import annotations

from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from apps.shared.errors import ContractError, TapeError

VJP = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    """A float64 array plus an optional handle into a :class:`Tape`."""

    __slots__ = ("value", "tape", "node")

    def __init__(self, value: object, tape: Tape | None = None, node: int | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def data(self) -> np.ndarray:
        """Row-major flat view of the values."""
        return self.value.reshape(-1)

    @property
    def tape_id(self) -> int | None:
        return self.node

    @property
    def tracked(self) -> bool:
        return self.tape is not None

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        if self.value.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.value.reshape(()))

    def detach(self) -> Tensor:
        return Tensor(self.value)

    def __repr__(self) -> str:
        where = f", node={self.node}" if self.tape is not None else ""
        return f"Tensor(shape={self.shape}{where})"

    # Operator sugar; the implementations live in ops to keep this module tape-only.
    def __add__(self, other: object) -> Tensor:
        from . import ops

        return ops.add(self, other)

    def __radd__(self, other: object) -> Tensor:
        from . import ops

        return ops.add(other, self)

    def __sub__(self, other: object) -> Tensor:
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other: object) -> Tensor:
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other: object) -> Tensor:
        from . import ops

        return ops.mul(self, other)

    def __rmul__(self, other: object) -> Tensor:
        from . import ops

        return ops.mul(other, self)

    def __truediv__(self, other: object) -> Tensor:
        from . import ops

        return ops.div(self, other)

    def __neg__(self) -> Tensor:
        from . import ops

        return ops.neg(self)

    def __matmul__(self, other: Tensor) -> Tensor:
        from . import ops

        return ops.matmul(self, other)

    def __getitem__(self, index: object) -> Tensor:
        from . import ops

        return ops.getitem(self, index)

    @property
    def T(self) -> Tensor:
        from . import ops

        return ops.transpose(self)


def as_tensor(x: object) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Node:
    kind: str
    inputs: tuple[int | None, ...]
    vjp: VJP | None
    shape: tuple[int, ...]
    name: str | None = None


class Gradients:
    """Leaf gradients produced by one backward sweep."""

    def __init__(self, tape: Tape, by_node: dict[int, np.ndarray]):
        self._tape = tape
        self._by_node = by_node

    def __getitem__(self, leaf: Tensor) -> np.ndarray:
        return self.of(leaf)

    def of(self, leaf: Tensor) -> np.ndarray:
        if leaf.tape is not self._tape or leaf.node is None:
            raise TapeError("tensor does not belong to this tape")
        grad = self._by_node.get(leaf.node)
        return np.zeros_like(leaf.value) if grad is None else grad

    def by_name(self, leaves: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
        return {name: self.of(t) for name, t in leaves.items()}


class Tape:
    """Append-only record of operations; node order is a topological order."""

    def __init__(self) -> None:
        self.nodes: list[_Node] = []
        self._spent = False

    def __len__(self) -> int:
        return len(self.nodes)

    def variable(self, value: object, name: str | None = None) -> Tensor:
        arr = np.array(value, dtype=np.float64)
        self._check_open()
        self.nodes.append(_Node("leaf", (), None, arr.shape, name))
        return Tensor(arr, self, len(self.nodes) - 1)

    def watch(self, params: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
        return {name: self.variable(value, name) for name, value in params.items()}

    def record(
        self, kind: str, value: np.ndarray, inputs: Sequence[Tensor], vjp: VJP
    ) -> Tensor:
        self._check_open()
        handles = tuple(t.node if t.tape is self else None for t in inputs)
        self.nodes.append(_Node(kind, handles, vjp, value.shape))
        return Tensor(value, self, len(self.nodes) - 1)

    def backward(self, loss: Tensor) -> Gradients:
        if loss.tape is not self or loss.node is None:
            raise TapeError("loss was not computed on this tape")
        if loss.value.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if self._spent:
            raise TapeError("backward already ran on this tape; record a new forward pass")
        self._spent = True

        pending: dict[int, np.ndarray] = {loss.node: np.ones_like(loss.value)}
        leaves: dict[int, np.ndarray] = {}
        for idx in range(loss.node, -1, -1):
            grad = pending.pop(idx, None)
            if grad is None:
                continue
            node = self.nodes[idx]
            if node.vjp is None:
                leaves[idx] = grad
                continue
            for handle, g in zip(node.inputs, node.vjp(grad), strict=True):
                if handle is None or g is None:
                    continue
                if handle in pending:
                    pending[handle] = pending[handle] + g
                else:
                    pending[handle] = g
        return Gradients(self, leaves)

    def _check_open(self) -> None:
        if self._spent:
            raise TapeError("tape is spent; start a new tape for the next forward pass")


def backward(loss: Tensor) -> Gradients:
    if loss.tape is None:
        raise TapeError("loss is not on an active tape")
    return loss.tape.backward(loss)


def bind(params: Mapping[str, np.ndarray], tape: Tape | None = None) -> dict[str, Tensor]:
    """Tape leaves for ``params`` when a tape is given, constants otherwise."""
    if tape is None:
        return {name: Tensor(value) for name, value in params.items()}
    return tape.watch(params)
