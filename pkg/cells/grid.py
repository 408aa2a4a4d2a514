"""Uniform tensor grids over a box, with trapezoid weights and gradients."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import cached_property
from typing import List

import numpy as np

from errors import ConfigurationError

MIN_NODES = 129
DEFAULT_NODES = 257


@dataclass(frozen=True, eq=False)
class FastGrid:
    """Uniform grid over [lo, hi] with ``nodes`` points per axis (flattened C order)."""

    lo: np.ndarray
    hi: np.ndarray
    nodes: int = DEFAULT_NODES
    min_nodes: int = MIN_NODES

    def __post_init__(self):
        object.__setattr__(self, "lo", np.atleast_1d(np.asarray(self.lo, float)))
        object.__setattr__(self, "hi", np.atleast_1d(np.asarray(self.hi, float)))
        if self.nodes < self.min_nodes:
            raise ConfigurationError(f"grid needs at least {self.min_nodes} nodes per axis, got {self.nodes}")
        if np.any(self.hi <= self.lo):
            raise ConfigurationError(f"empty grid box lo={self.lo} hi={self.hi}")

    @property
    def n(self) -> int:
        return self.lo.shape[0]

    @property
    def shape(self):
        return (self.nodes,) * self.n

    @property
    def size(self) -> int:
        return self.nodes**self.n

    @cached_property
    def axes(self) -> List[np.ndarray]:
        return [np.linspace(lo, hi, self.nodes) for lo, hi in zip(self.lo, self.hi)]

    @cached_property
    def spacing(self) -> np.ndarray:
        return (self.hi - self.lo) / (self.nodes - 1)

    @cached_property
    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    @cached_property
    def weights(self) -> np.ndarray:
        per_axis = []
        for h in self.spacing:
            w = np.full(self.nodes, h)
            w[0] = w[-1] = 0.5 * h
            per_axis.append(w)
        total = per_axis[0]
        for w in per_axis[1:]:
            total = np.multiply.outer(total, w)
        return np.asarray(total).ravel()

    @cached_property
    def key(self) -> str:
        raw = f"{self.lo.tolist()}|{self.hi.tolist()}|{self.nodes}".encode()
        return hashlib.sha1(raw).hexdigest()[:16]

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Trapezoid quadrature over the leading (node) axis."""
        return np.tensordot(self.weights, np.asarray(values, float), axes=(0, 0))

    def gradient(self, values: np.ndarray) -> np.ndarray:
        """Second-order gradient (one-sided at the edges); appends an axis of length n."""
        arr = np.asarray(values, float)
        trailing = arr.shape[1:]
        grid_vals = arr.reshape(self.shape + trailing)
        parts = []
        for k in range(self.n):
            d = np.gradient(grid_vals, self.spacing[k], axis=k, edge_order=2)
            parts.append(d.reshape((self.size,) + trailing))
        return np.stack(parts, axis=-1)

    def interior(self) -> np.ndarray:
        """Boolean mask of nodes off every edge."""
        idx = np.indices(self.shape).reshape(self.n, -1)
        return np.all((idx > 0) & (idx < self.nodes - 1), axis=0)


def fast_grid(domain, nodes: int = DEFAULT_NODES) -> FastGrid:
    """Grid over the fast box of a model's truncated ``Domain``."""
    return FastGrid(domain.y_lo, domain.y_hi, nodes=nodes)
