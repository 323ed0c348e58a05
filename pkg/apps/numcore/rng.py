"""Seeded random streams (PCG64), serializable for checkpoints."""

from __future__ import annotations

import numpy as np

from apps.shared.errors import CheckpointFormatError


class Rng:
    """Deterministic stream: the same seed and call sequence give the same draws."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, shape: tuple[int, ...] | int) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, shape: tuple[int, ...] | int) -> np.ndarray:
        return self._gen.random(shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, high: int) -> int:
        return int(self._gen.integers(high))

    def spawn(self) -> Rng:
        """Independent child stream; advances this stream by one draw."""
        return Rng(int(self._gen.integers(2**63 - 1)))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def get_state(self) -> str:
        st = self._gen.bit_generator.state
        inner = st["state"]
        return f"{self.seed},{inner['state']},{inner['inc']},{st['has_uint32']},{st['uinteger']}"

    @classmethod
    def from_state(cls, text: str) -> Rng:
        try:
            seed, state, inc, has_uint32, uinteger = (int(v) for v in text.split(","))
        except ValueError as exc:
            raise CheckpointFormatError(f"bad rng state: {text!r}") from exc
        rng = cls(seed)
        rng._gen.bit_generator.state = {
            "bit_generator": "PCG64",
            "state": {"state": state, "inc": inc},
            "has_uint32": has_uint32,
            "uinteger": uinteger,
        }
        return rng
