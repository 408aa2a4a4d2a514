"""Counter-based noise streams, one per path.

Path ``i`` of a run with seed ``s`` always reads the Philox stream keyed by
(s, i): first the standard normals of its initial point, then its increments
in step order. Splitting paths across workers therefore cannot change any
trajectory.
"""
from __future__ import annotations

from typing import List, Sequence

import numpy as np

BLOCK_STEPS = 256


def path_generator(seed: int, path_index: int) -> np.random.Generator:
    key = np.array([int(seed) & 0xFFFFFFFFFFFFFFFF, int(path_index)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class NoiseStream:
    """Standard-normal draws for a contiguous set of paths, buffered in blocks."""

    def __init__(self, seed: int, indices: Sequence[int], dim: int, block: int = BLOCK_STEPS):
        self.indices = np.asarray(indices, dtype=np.int64)
        self.dim = int(dim)
        self.block = int(block)
        self._gens: List[np.random.Generator] = [path_generator(seed, i) for i in self.indices]
        self._buffer = np.empty((len(self._gens), 0, self.dim))
        self._pos = 0

    def __len__(self) -> int:
        return len(self._gens)

    def initial(self, size: int) -> np.ndarray:
        """First ``size`` normals of every stream (the initial-point draw)."""
        if self._pos or self._buffer.shape[1]:
            raise RuntimeError("initial draw must come before any increment")
        return np.stack([g.standard_normal(size) for g in self._gens]) if self._gens else np.empty((0, size))

    def normals(self) -> np.ndarray:
        if self._pos >= self._buffer.shape[1]:
            self._buffer = np.stack([g.standard_normal((self.block, self.dim)) for g in self._gens])
            self._pos = 0
        out = self._buffer[:, self._pos, :]
        self._pos += 1
        return out

    def increments(self, dt: float) -> np.ndarray:
        return np.sqrt(dt) * self.normals()
