"""Reduced (averaged) coefficients w, A and their comparable counterparts."""
from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, Optional

import numpy as np

from averaging.frames import node_frame
from averaging.interp import XTInterpolator
from averaging.quadrature import average_generator
from averaging.xt import XTGrid
from cells.table import CellTable
from errors import AveragingError, DependencyError, UnsupportedModelError
from model import fd
from model.coefficients import CoefficientSet, LinearSDE, as_batch
from model.comparable import BACKWARD, FORWARD, ComparableSpec
from settings import get_worker_count
from utils import fmt_row

logger = logging.getLogger(__name__)

PSD_TOL = 1e-10
LINEAR_FIT_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class AveragedModel:
    """Node tables over ``xt`` with interpolating accessors.

    ``w_comp``/``A_comp`` hold ŵ, Â = A for a forward comparable and w̃, Ã for a
    backward one.
    """

    xt: XTGrid
    w_nodes: np.ndarray
    A_nodes: np.ndarray
    kind: Optional[str] = None
    w_comp_nodes: Optional[np.ndarray] = None
    A_comp_nodes: Optional[np.ndarray] = None
    mu: Optional[object] = None
    label: str = ""
    diagnostics: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "_w", XTInterpolator(self.xt, self.w_nodes))
        object.__setattr__(self, "_A", XTInterpolator(self.xt, self.A_nodes))
        if self.w_comp_nodes is not None:
            object.__setattr__(self, "_w_comp", XTInterpolator(self.xt, self.w_comp_nodes))
            object.__setattr__(self, "_A_comp", XTInterpolator(self.xt, self.A_comp_nodes))

    @property
    def m(self) -> int:
        return self.xt.m

    def w(self, x, t: float) -> np.ndarray:
        return self._w(x, t)

    def A(self, x, t: float) -> np.ndarray:
        return self._A(x, t)

    def _comp(self, name: str):
        if self.w_comp_nodes is None:
            raise DependencyError("averaged model was built without a comparable")
        return getattr(self, name)

    def w_comp(self, x, t: float) -> np.ndarray:
        return self._comp("_w_comp")(x, t)

    def A_comp(self, x, t: float) -> np.ndarray:
        return self._comp("_A_comp")(x, t)

    w_hat = w_comp
    w_tilde = w_comp
    A_tilde = A_comp

    def div_A(self, x, t: float, step: Optional[float] = None) -> np.ndarray:
        step = float(np.min(self.xt.step)) if step is None else step
        return fd.div(lambda xx: self.A(xx, t), as_batch(x, self.m), step)

    def with_mu(self, mu) -> "AveragedModel":
        return replace(self, mu=mu)

    def adjoint_drift(self, x, t: float) -> np.ndarray:
        """−w + ∇·A + A∇log μ: drift of the reduced adjoint process."""
        if self.mu is None:
            raise DependencyError("adjoint drift needs the reduced stationary density; call solve_mu first")
        x = as_batch(x, self.m)
        return -self.w(x, t) + self.div_A(x, t) + np.einsum("nij,nj->ni", self.A(x, t), self.mu.grad_log_mu(x, t))

    def diffusion_mismatch(self) -> float:
        if self.kind != BACKWARD:
            return 0.0
        return float(np.max(np.abs(self.A_nodes - self.A_comp_nodes)))

    def reduced_linear(self) -> LinearSDE:
        """dX = (K x + k(t)) dt + A^{1/2} dB when w is affine in x and A constant."""
        pts = self.xt.x_points()
        design = np.column_stack([pts, np.ones(pts.shape[0])])
        m = self.m
        n_t = self.xt.t_axis.size
        w_flat = self.w_nodes.reshape(-1, n_t, m)
        Ks, offsets = [], []
        scale = max(1.0, float(np.max(np.abs(self.w_nodes))))
        for k in range(n_t):
            coef, *_ = np.linalg.lstsq(design, w_flat[:, k, :], rcond=None)
            misfit = float(np.max(np.abs(design @ coef - w_flat[:, k, :])))
            if misfit > LINEAR_FIT_TOL * scale:
                raise UnsupportedModelError(f"reduced drift is not affine in x (misfit {misfit:.2e})")
            Ks.append(coef[:m].T)
            offsets.append(coef[m])
        A_flat = self.A_nodes.reshape(-1, m, m)
        if float(np.max(np.abs(A_flat - A_flat[0]))) > LINEAR_FIT_TOL * max(1.0, float(np.max(np.abs(A_flat)))):
            raise UnsupportedModelError("reduced diffusion is not constant")
        if float(np.max(np.abs(np.array(Ks) - Ks[0]))) > LINEAR_FIT_TOL * scale:
            raise UnsupportedModelError("reduced drift matrix varies in time")
        offsets = np.array(offsets)
        t_axis = self.xt.t_axis

        def k_of_t(t):
            if t_axis.size == 1:
                return offsets[0]
            return np.array([np.interp(self.xt.clip_t(t), t_axis, offsets[:, i]) for i in range(m)])

        return LinearSDE(K=Ks[0], Q=0.5 * (A_flat[0] + A_flat[0].T), k=k_of_t)

    def table(self, extra: Optional[Dict[str, np.ndarray]] = None):
        """Header and rows (one per node) for CSV export."""
        m = self.m
        header = [f"x{k + 1}" for k in range(m)] + ["t"]
        header += [f"w{i + 1}" for i in range(m)]
        header += [f"A{i + 1}{j + 1}" for i in range(m) for j in range(i, m)]
        comp = self.w_comp_nodes is not None
        if comp:
            tag = "w_hat" if self.kind == FORWARD else "w_tilde"
            atag = "A_hat" if self.kind == FORWARD else "A_tilde"
            header += [f"{tag}{i + 1}" for i in range(m)]
            header += [f"{atag}{i + 1}{j + 1}" for i in range(m) for j in range(i, m)]
        extra = extra or {}
        header += sorted(extra)
        rows = []
        for idx, x, t in self.xt.nodes():
            A = self.A_nodes[idx]
            row = [*x, t, *self.w_nodes[idx]] + [A[i, j] for i in range(m) for j in range(i, m)]
            if comp:
                Ac = self.A_comp_nodes[idx]
                row += [*self.w_comp_nodes[idx]] + [Ac[i, j] for i in range(m) for j in range(i, m)]
            row += [float(extra[k][idx]) for k in sorted(extra)]
            rows.append(row)
        return header, rows

    def export_csv(self, path, extra: Optional[Dict[str, np.ndarray]] = None) -> None:
        header, rows = self.table(extra)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                writer.writerow(fmt_row(row))


def _check_psd(A: np.ndarray, x, t) -> None:
    eig_min = float(np.min(np.linalg.eigvalsh(A)))
    if eig_min < -PSD_TOL * max(1.0, float(np.max(np.abs(A)))):
        raise AveragingError(f"averaged diffusion A is not positive semidefinite (min eigenvalue {eig_min:.3e})", point=(x.tolist(), t))


def _node_values(coeffs: CoefficientSet, comparable: Optional[ComparableSpec], cells: CellTable, x, t, step):
    fr = node_frame(coeffs, cells, x, t, step)
    v = fr.values
    w, A = average_generator(fr.weights, fr.rho, v.b, v.f, v.g, v.a, v.h, fr.phi, fr.dphi_dx, fr.dphi_dy, fr.dphi_dxy)
    _check_psd(A, x, t)
    if comparable is None:
        return w, A, None, None
    b_c = np.asarray(comparable.b(fr.xb, fr.y, t), float).reshape(v.b.shape)
    g_c = np.asarray(comparable.g(fr.xb, fr.y, t), float).reshape(v.g.shape)
    if comparable.kind == FORWARD:
        w_c, _ = average_generator(fr.weights, fr.rho, b_c, v.f, g_c, v.a, v.h, fr.phi, fr.dphi_dx, fr.dphi_dy, fr.dphi_dxy)
        return w, A, w_c, A
    if fr.phi_tilde is None:
        raise DependencyError(f"cell at x={x.tolist()}, t={t} has no phi_tilde column for the backward comparable")
    f_c = np.asarray(comparable.f_tilde(fr.xb, fr.y, t), float).reshape(v.f.shape)
    w_c, A_c = average_generator(
        fr.weights, fr.rho, b_c, f_c, g_c, v.a, v.h, fr.phi_tilde, fr.dphi_tilde_dx, fr.dphi_tilde_dy, fr.dphi_tilde_dxy
    )
    _check_psd(A_c, x, t)
    return w, A, w_c, A_c


def compute_averaged_coefficients(
    coeffs: CoefficientSet,
    comparable: Optional[ComparableSpec],
    cells: CellTable,
    xt_grid: XTGrid,
    workers: Optional[int] = None,
) -> AveragedModel:
    """Quadrature of the averaged drift and diffusion at every xt node.

    Cells are solved on demand at the nodes and at the ±h offsets used for
    x-derivatives of the correctors.
    """
    start = time.perf_counter()
    cells.ensure(xt_grid.cell_points(depth=1))
    m = coeffs.m
    nodes = list(xt_grid.nodes())
    step = xt_grid.step

    def work(item):
        _, x, t = item
        return _node_values(coeffs, comparable, cells, x, t, step)

    workers = workers or get_worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, nodes))
    else:
        results = [work(item) for item in nodes]

    W = np.empty(xt_grid.shape + (m,))
    A = np.empty(xt_grid.shape + (m, m))
    Wc = np.empty_like(W) if comparable is not None else None
    Ac = np.empty_like(A) if comparable is not None else None
    for (idx, _, _), (w, a, w_c, a_c) in zip(nodes, results):
        W[idx], A[idx] = w, a
        if comparable is not None:
            Wc[idx], Ac[idx] = w_c, a_c
    avg = AveragedModel(
        xt=xt_grid,
        w_nodes=W,
        A_nodes=A,
        kind=comparable.kind if comparable is not None else None,
        w_comp_nodes=Wc,
        A_comp_nodes=Ac,
        label=comparable.label if comparable is not None else "",
    )
    if comparable is not None and comparable.kind == BACKWARD:
        avg.diagnostics["diffusion_mismatch"] = avg.diffusion_mismatch()
    logger.info("Averaged coefficients on %s nodes in %.1fs", len(nodes), time.perf_counter() - start)
    return avg
