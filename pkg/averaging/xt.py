"""Slow-variable/time grid on which averaged coefficients are tabulated."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, List, Optional, Tuple

import numpy as np

from errors import ConfigurationError

DEFAULT_X_NODES = 41
DEFAULT_T_NODES = 11
DERIVATIVE_FRACTION = 1e-2


@dataclass(frozen=True, eq=False)
class XTGrid:
    x_lo: np.ndarray
    x_hi: np.ndarray
    T: float
    x_nodes: int = DEFAULT_X_NODES
    t_nodes: int = DEFAULT_T_NODES
    time_dependent: bool = True

    def __post_init__(self):
        object.__setattr__(self, "x_lo", np.atleast_1d(np.asarray(self.x_lo, float)))
        object.__setattr__(self, "x_hi", np.atleast_1d(np.asarray(self.x_hi, float)))
        if self.x_nodes < 4:
            raise ConfigurationError(f"xt grid needs at least 4 x-nodes, got {self.x_nodes}")
        if self.time_dependent and self.t_nodes < 2:
            raise ConfigurationError("time-dependent models need at least 2 t-nodes")
        if np.any(self.x_hi <= self.x_lo):
            raise ConfigurationError(f"empty slow box lo={self.x_lo} hi={self.x_hi}")

    @classmethod
    def for_model(cls, model, x_nodes: int = DEFAULT_X_NODES, t_nodes: int = DEFAULT_T_NODES, x_lo=None, x_hi=None) -> "XTGrid":
        return cls(
            x_lo=model.domain.x_lo if x_lo is None else x_lo,
            x_hi=model.domain.x_hi if x_hi is None else x_hi,
            T=model.T,
            x_nodes=x_nodes,
            t_nodes=t_nodes,
            time_dependent=model.coeffs.time_dependent,
        )

    @property
    def m(self) -> int:
        return self.x_lo.shape[0]

    @cached_property
    def x_axes(self) -> List[np.ndarray]:
        return [np.linspace(lo, hi, self.x_nodes) for lo, hi in zip(self.x_lo, self.x_hi)]

    @cached_property
    def t_axis(self) -> np.ndarray:
        if not self.time_dependent:
            return np.array([0.0])
        return np.linspace(0.0, self.T, self.t_nodes)

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.x_nodes,) * self.m + (self.t_axis.size,)

    @cached_property
    def step(self) -> np.ndarray:
        """Offset for x-derivatives across cell solves (per slow axis)."""
        return DERIVATIVE_FRACTION * 0.5 * (self.x_hi - self.x_lo)

    @cached_property
    def t_step(self) -> float:
        return DERIVATIVE_FRACTION * self.T

    def nodes(self) -> Iterator[Tuple[Tuple[int, ...], np.ndarray, float]]:
        for idx in itertools.product(*[range(self.x_nodes)] * self.m, range(self.t_axis.size)):
            x = np.array([self.x_axes[k][i] for k, i in enumerate(idx[:-1])])
            yield idx, x, float(self.t_axis[idx[-1]])

    def x_points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.x_axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    def offsets(self, depth: int = 1) -> List[np.ndarray]:
        """Stencil offsets for central differences: 0 and ±h e_j, and with
        ``depth=2`` also ±2h e_j and the mixed ±h e_j ± h e_k."""
        m, h = self.m, self.step
        out = [np.zeros(m)]
        for j in range(m):
            e = np.zeros(m)
            e[j] = h[j]
            out += [e, -e]
            if depth > 1:
                out += [2 * e, -2 * e]
        if depth > 1:
            for j, k in itertools.combinations(range(m), 2):
                for sj, sk in itertools.product((1, -1), repeat=2):
                    e = np.zeros(m)
                    e[j], e[k] = sj * h[j], sk * h[k]
                    out.append(e)
        return out

    def cell_points(self, depth: int = 1, with_time: bool = False) -> List[Tuple[np.ndarray, float]]:
        points = []
        dts = [0.0]
        if with_time and self.time_dependent:
            dts += [self.t_step, -self.t_step]
        for _, x, t in self.nodes():
            for off in self.offsets(depth):
                points.append((x + off, t))
            for dt in dts[1:]:
                points.append((x, t + dt))
        return points

    def clip_t(self, t: float) -> float:
        return float(np.clip(t, self.t_axis[0], self.t_axis[-1]))

    def locate_t(self, t: float) -> Tuple[int, int, float]:
        """Bracketing t-node indices and blend weight for linear-in-t interpolation."""
        axis = self.t_axis
        if axis.size == 1:
            return 0, 0, 0.0
        t = self.clip_t(t)
        k = int(min(np.searchsorted(axis, t, side="right") - 1, axis.size - 2))
        theta = (t - axis[k]) / (axis[k + 1] - axis[k])
        return k, k + 1, float(theta)


def parse_box(text: Optional[str], m: int) -> Optional[np.ndarray]:
    if text is None or not str(text).strip():
        return None
    vals = [float(v) for v in str(text).split(",") if v.strip()]
    if len(vals) == 1:
        vals = vals * m
    if len(vals) != m:
        raise ConfigurationError(f"box bound {text!r} does not have {m} entries")
    return np.array(vals)
