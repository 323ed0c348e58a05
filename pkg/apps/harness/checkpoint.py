"""
Binary checkpoint format (all integers little-endian):

    magic "IPVIDGP1" | version u32
    config: u32 length + UTF-8 canonical config text
    rng:    u32 length + UTF-8 rng state text
    blobs:  u32 count, then per blob
            u32 name length + UTF-8 name | u32 rank | rank × u64 extents | f64 values
"""

from __future__ import annotations

import struct
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import structlog

from apps.shared.errors import CheckpointFormatError, CheckpointIntegrityError
from apps.shared.files import atomic_write_bytes

from . import metrics

logger = structlog.get_logger(__name__)

MAGIC = b"IPVIDGP1"
VERSION = 1


@dataclass
class Checkpoint:
    config_text: str
    rng_state: str
    blobs: dict[str, np.ndarray] = field(default_factory=dict)
    version: int = VERSION

    def group(self, prefix: str) -> dict[str, np.ndarray]:
        """Blobs under ``prefix.`` with the prefix stripped."""
        start = len(prefix) + 1
        return {k[start:]: v for k, v in self.blobs.items() if k.startswith(prefix + ".")}

    def scalar(self, name: str) -> float:
        if name not in self.blobs:
            raise CheckpointFormatError(f"checkpoint has no {name!r} blob")
        return float(self.blobs[name].reshape(-1)[0])

    def to_bytes(self) -> bytes:
        out = bytearray(MAGIC)
        out += struct.pack("<I", self.version)
        _put_text(out, self.config_text)
        _put_text(out, self.rng_state)
        out += struct.pack("<I", len(self.blobs))
        for name in sorted(self.blobs):
            value = np.ascontiguousarray(self.blobs[name], dtype="<f8")
            _put_text(out, name)
            out += struct.pack("<I", value.ndim)
            out += struct.pack(f"<{value.ndim}Q", *value.shape)
            out += value.tobytes()
        return bytes(out)

    @classmethod
    def from_bytes(cls, payload: bytes) -> Checkpoint:
        if payload[: len(MAGIC)] != MAGIC:
            raise CheckpointFormatError("not an IPVIDGP1 checkpoint (bad magic)")
        reader = _Reader(payload, len(MAGIC))
        (version,) = reader.unpack("<I")
        if version != VERSION:
            raise CheckpointFormatError(f"unsupported checkpoint version {version}")
        config_text = reader.text()
        rng_state = reader.text()
        (count,) = reader.unpack("<I")
        blobs: dict[str, np.ndarray] = {}
        for _ in range(count):
            name = reader.text()
            (rank,) = reader.unpack("<I")
            shape = reader.unpack(f"<{rank}Q") if rank else ()
            size = int(np.prod(shape)) if rank else 1
            raw = reader.take(8 * size)
            blobs[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
        if reader.offset != len(payload):
            raise CheckpointIntegrityError(
                f"{len(payload) - reader.offset} trailing bytes after the last blob"
            )
        return cls(config_text=config_text, rng_state=rng_state, blobs=blobs, version=version)


class _Reader:
    def __init__(self, payload: bytes, offset: int):
        self.payload = payload
        self.offset = offset

    def take(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self.payload):
            raise CheckpointIntegrityError(
                f"truncated checkpoint: wanted {size} bytes at offset {self.offset}"
            )
        chunk = self.payload[self.offset : end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def text(self) -> str:
        (length,) = self.unpack("<I")
        try:
            return self.take(length).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointIntegrityError(f"corrupt text field: {exc}") from exc


def _put_text(out: bytearray, text: str) -> None:
    raw = text.encode("utf-8")
    out += struct.pack("<I", len(raw))
    out += raw


def save_checkpoint(
    path: str | Path,
    config_text: str,
    blobs: Mapping[str, np.ndarray],
    rng_state: str,
) -> Path:
    checkpoint = Checkpoint(config_text, rng_state, {k: np.asarray(v) for k, v in blobs.items()})
    target = atomic_write_bytes(path, checkpoint.to_bytes())
    metrics.record_checkpoint("save")
    logger.info("checkpoint_saved", path=str(target), blobs=len(blobs))
    return target


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        payload = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointFormatError(f"cannot read checkpoint {path}: {exc}") from exc
    checkpoint = Checkpoint.from_bytes(payload)
    metrics.record_checkpoint("load")
    logger.info("checkpoint_loaded", path=str(path), blobs=len(checkpoint.blobs))
    return checkpoint
