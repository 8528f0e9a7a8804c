"""Named parameter collections and their binary checkpoint format.

Checkpoint layout (all integers little-endian uint32):

    magic "DQFG" | version | tensor count |
    per tensor: name length, utf-8 name, rank, dims..., raw float32 LE data
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .errors import (
    CheckpointFormatError,
    CheckpointShapeError,
    CheckpointTruncatedError,
)

MAGIC = b"DQFG"
VERSION = 1


class ParamStore:
    """Ordered name -> Tensor map; iteration follows insertion order."""

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._tensors:
            raise ValueError(f"duplicate parameter name: {name!r}")
        self._tensors[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def names(self):
        return list(self._tensors.keys())

    def zero_grad(self) -> None:
        for p in self._tensors.values():
            p.zero_grad()

    def total_parameters(self) -> int:
        return sum(p.data.size for p in self._tensors.values())

    def load_values(self, source: "ParamStore") -> None:
        """Copy values from ``source`` in place, validating names and shapes."""
        ours = set(self._tensors)
        theirs = set(source._tensors)
        if ours != theirs:
            missing = sorted(ours - theirs)
            extra = sorted(theirs - ours)
            raise CheckpointShapeError(
                f"parameter names do not match: missing {missing[:3]}, unexpected {extra[:3]}"
            )
        for name, p in self._tensors.items():
            src = source._tensors[name]
            if src.data.shape != p.data.shape:
                raise CheckpointShapeError(
                    f"tensor {name!r} has shape {src.data.shape}, model expects {p.data.shape}"
                )
        for name, p in self._tensors.items():
            p.data[...] = source._tensors[name].data.astype(p.data.dtype, copy=False)


def save_checkpoint(store: ParamStore, path) -> None:
    """Write the store to ``path``; float32 values round-trip bit-exactly."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(store)))
        for name, t in store.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", t.data.ndim))
            for d in t.data.shape:
                fh.write(struct.pack("<I", d))
            fh.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointTruncatedError(
                f"{self.path}: needed {n} more bytes at offset {self.pos}, file has {len(self.blob)}"
            )
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path) -> ParamStore:
    """Read a checkpoint into a fresh ParamStore (tensors untracked)."""
    blob = Path(path).read_bytes()
    r = _Reader(blob, path)
    if r.take(4) != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic bytes, not a checkpoint")
    version = r.u32()
    if version != VERSION:
        raise CheckpointFormatError(f"{path}: unsupported checkpoint version {version}")
    count = r.u32()
    store = ParamStore()
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        if rank > 8:
            raise CheckpointFormatError(f"{path}: implausible tensor rank {rank} for {name!r}")
        dims = tuple(r.u32() for _ in range(rank))
        n_values = 1
        for d in dims:
            n_values *= d
        data = np.frombuffer(r.take(4 * n_values), dtype="<f4").reshape(dims)
        store.add(name, Tensor(data.astype(np.float32)))
    if r.pos != len(blob):
        raise CheckpointFormatError(f"{path}: {len(blob) - r.pos} trailing bytes after last tensor")
    return store
