"""Per-node arrays (fields, correctors and their derivatives) fed to the quadrature."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from cells.solver import CellSolution
from cells.table import CellTable
from model.coefficients import CoefficientSet, FieldValues


@dataclass(frozen=True, eq=False)
class NodeFrame:
    x: np.ndarray
    t: float
    cell: CellSolution
    xb: np.ndarray
    y: np.ndarray
    values: FieldValues
    phi: np.ndarray
    dphi_dx: np.ndarray
    dphi_dy: np.ndarray
    dphi_dxy: np.ndarray
    phi_tilde: Optional[np.ndarray] = None
    dphi_tilde_dx: Optional[np.ndarray] = None
    dphi_tilde_dy: Optional[np.ndarray] = None
    dphi_tilde_dxy: Optional[np.ndarray] = None

    @property
    def weights(self) -> np.ndarray:
        return self.cell.grid.weights

    @property
    def rho(self) -> np.ndarray:
        return self.cell.rho


def x_derivative(column: Callable[[np.ndarray], np.ndarray], x: np.ndarray, step: np.ndarray) -> np.ndarray:
    """Central difference of a per-offset column (N, k) across slow offsets; (N, k, m)."""
    parts = []
    for j in range(x.shape[0]):
        e = np.zeros_like(x)
        e[j] = step[j]
        parts.append((column(x + e) - column(x - e)) / (2.0 * step[j]))
    return np.stack(parts, axis=-1)


def node_frame(coeffs: CoefficientSet, cells: CellTable, x: np.ndarray, t: float, step: np.ndarray) -> NodeFrame:
    cell = cells.get(x, t)
    grid = cell.grid
    y = grid.points
    xb = np.broadcast_to(x, (grid.size, coeffs.m)).copy()
    values = coeffs.evaluate(xb, y, t)

    def phi_at(point):
        return cells.get(point, t).phi.reshape(grid.size, -1)

    phi = cell.phi.reshape(grid.size, -1)
    dphi_dx = x_derivative(phi_at, x, step)
    frame = dict(
        x=x,
        t=t,
        cell=cell,
        xb=xb,
        y=y,
        values=values,
        phi=phi,
        dphi_dx=dphi_dx,
        dphi_dy=grid.gradient(phi),
        dphi_dxy=grid.gradient(dphi_dx),
    )
    if cell.phi_tilde is not None:

        def phi_tilde_at(point):
            return cells.get(point, t).phi_tilde.reshape(grid.size, -1)

        pt = cell.phi_tilde.reshape(grid.size, -1)
        dpt_dx = x_derivative(phi_tilde_at, x, step)
        frame.update(
            phi_tilde=pt,
            dphi_tilde_dx=dpt_dx,
            dphi_tilde_dy=grid.gradient(pt),
            dphi_tilde_dxy=grid.gradient(dpt_dx),
        )
    return NodeFrame(**frame)
