"""Extended (slow, functional) systems whose averages drive the limit functionals.

Forward: the functional F rides along X with drift ½v'D₁⁻¹v and noise
loading v'D₁⁻¹Σ₁, v = (b − b̂, g − ĝ).

Backward: the functional H rides along X with loading σ_H = u'D₁⁻¹Σ₁,
u = (b + b̃ − ∇ₓ·a − a∇ₓlog ρ, g + g̃ − ∇ₓ·h' − h'∇ₓlog ρ), slow drift
b_H = ½|σ_H|² + ρ⁻¹∇ₓ·(Vρ) − ∂ₜlog ρ with V = b̃ − ½∇ₓ·a − ½a∇ₓlog ρ, and
fast coupling f_H = ρ⁻¹[∇y·(g̃ρ) − ∇ₓ·(fρ)]. These are the ε-free forms left
once the compatibility conditions cancel the divergent blocks.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from averaging.frames import node_frame, x_derivative
from averaging.interp import XTInterpolator
from averaging.quadrature import average_generator
from averaging.reduced import AveragedModel, compute_averaged_coefficients
from averaging.xt import XTGrid
from cells.density import FastDensity, GaussianFastDensity, TabulatedFastDensity
from cells.solver import ANALYTIC_OU, solve_poisson
from cells.table import CellTable
from errors import DivergentFunctionalError, UnsupportedModelError
from model import fd
from model.assembly import (
    assemble_batch,
    auxiliary_drift,
    div_x_a,
    div_x_ht,
    reduced_blocks,
    solve_reduced,
)
from model.coefficients import CoefficientSet, as_batch
from model.comparable import BACKWARD, FORWARD, ComparableSpec
from model.compat import COUPLING, FAST_BALANCE, CompatibilityReport, check_compatible_conditions
from settings import get_worker_count

logger = logging.getLogger(__name__)

F_M1_CENTERING_TOL = 1e-6
EPS_PAIR = (0.1, 0.01)
EPS_FREE_TOL = 1e-8
COMPAT_TOL = {ANALYTIC_OU: 1e-6}
COMPAT_TOL_NUMERIC = 5e-2


class BackwardFields:
    """Pointwise σ_H, b_H, f_H of the backward extended system."""

    def __init__(self, coeffs: CoefficientSet, comparable: ComparableSpec, density: FastDensity, step: float = fd.NESTED_STEP):
        if comparable.kind != BACKWARD:
            raise DivergentFunctionalError("backward extended fields need a backward comparable")
        self.coeffs = coeffs
        self.comparable = comparable
        self.density = density
        self.step = step

    def _batches(self, x, y):
        return as_batch(x, self.coeffs.m), as_batch(y, self.coeffs.n)

    def V(self, x, y, t: float) -> np.ndarray:
        x, y = self._batches(x, y)
        v = self.coeffs.evaluate(x, y, t)
        b_t = np.asarray(self.comparable.b(x, y, t), float).reshape(v.b.shape)
        dlx = self.density.grad_x_log_rho(x, y, t)
        return b_t - 0.5 * div_x_a(self.coeffs, x, y, t) - 0.5 * np.einsum("nij,nj->ni", v.a, dlx)

    def u(self, x, y, t: float, values=None) -> np.ndarray:
        x, y = self._batches(x, y)
        v = values if values is not None else self.coeffs.evaluate(x, y, t)
        b_t = np.asarray(self.comparable.b(x, y, t), float).reshape(v.b.shape)
        g_t = np.asarray(self.comparable.g(x, y, t), float).reshape(v.g.shape)
        dlx = self.density.grad_x_log_rho(x, y, t)
        u_x = v.b + b_t - div_x_a(self.coeffs, x, y, t) - np.einsum("nij,nj->ni", v.a, dlx)
        u_y = v.g + g_t - div_x_ht(self.coeffs, x, y, t) - np.einsum("nji,nj->ni", v.h, dlx)
        return np.concatenate([u_x, u_y], axis=1)

    def sigma_m1(self, x, y, t: float, values=None) -> np.ndarray:
        x, y = self._batches(x, y)
        v = values if values is not None else self.coeffs.evaluate(x, y, t)
        D1, Sigma1 = reduced_blocks(v)
        sol = solve_reduced(D1, self.u(x, y, t, v))
        return np.einsum("ni,nip->np", sol, Sigma1)

    def b_m1(self, x, y, t: float, values=None) -> np.ndarray:
        x, y = self._batches(x, y)
        s = self.sigma_m1(x, y, t, values)
        V = self.V(x, y, t)
        div_V = fd.div_x(self.V, x, y, t, self.step)
        dlx = self.density.grad_x_log_rho(x, y, t)
        return 0.5 * np.sum(s * s, axis=1) + div_V + np.sum(V * dlx, axis=1) - self.density.dt_log_rho(x, y, t)

    def f_m1(self, x, y, t: float) -> np.ndarray:
        x, y = self._batches(x, y)
        v = self.coeffs.evaluate(x, y, t)
        g_t = np.asarray(self.comparable.g(x, y, t), float).reshape(v.g.shape)
        div_g = fd.div_y(lambda xx, yy, tt: self.comparable.g(xx, yy, tt), x, y, t)
        div_f = fd.div_x(lambda xx, yy, tt: self.coeffs.f(xx, yy, tt), x, y, t)
        dly = self.density.grad_y_log_rho(x, y, t)
        dlx = self.density.grad_x_log_rho(x, y, t)
        return div_g + np.sum(g_t * dly, axis=1) - div_f - np.sum(v.f * dlx, axis=1)

    def sigma_m1_unreduced(self, x, y, t: float, epsilon: float) -> np.ndarray:
        """(B + B̃ − 2B̄ − D∇log ρ)'D⁻¹Σ from the full ε-scaled blocks."""
        x, y = self._batches(x, y)
        e = float(epsilon)
        v = self.coeffs.evaluate(x, y, t)
        B, D, Sigma = assemble_batch(self.coeffs, x, y, t, e, v)
        b_t = np.asarray(self.comparable.b(x, y, t), float).reshape(v.b.shape)
        g_t = np.asarray(self.comparable.g(x, y, t), float).reshape(v.g.shape)
        f_t = np.asarray(self.comparable.f_tilde(x, y, t), float).reshape(v.f.shape)
        B_t = np.concatenate([b_t + f_t / e, g_t / e + v.c / e**2], axis=1)
        B_bar = auxiliary_drift(self.coeffs, x, y, t, e)
        grad_log = np.concatenate([self.density.grad_x_log_rho(x, y, t), self.density.grad_y_log_rho(x, y, t)], axis=1)
        q = B + B_t - 2.0 * B_bar - np.einsum("nij,nj->ni", D, grad_log)
        return np.einsum("ni,nip->np", np.linalg.solve(D, q[..., None])[..., 0], Sigma)


@dataclass(frozen=True, eq=False)
class ExtendedSystem:
    """Node tables of w_F (``bar_w``) and the last row of the extended diffusion.

    ``row_nodes[..., :m]`` is the cross block with X and ``row_nodes[..., m]``
    the functional's own quadratic-variation rate.
    """

    kind: str
    xt: XTGrid
    bar_w_nodes: np.ndarray
    row_nodes: np.ndarray
    comparable: ComparableSpec
    residuals: Dict[str, float] = field(default_factory=dict)
    node_residuals: Dict[str, np.ndarray] = field(default_factory=dict)
    fields: Optional[BackwardFields] = None

    def __post_init__(self):
        object.__setattr__(self, "_bar_w", XTInterpolator(self.xt, self.bar_w_nodes))
        object.__setattr__(self, "_row", XTInterpolator(self.xt, self.row_nodes))

    @property
    def m(self) -> int:
        return self.xt.m

    def bar_w(self, x, t: float) -> np.ndarray:
        return self._bar_w(x, t)

    def row(self, x, t: float) -> np.ndarray:
        return self._row(x, t)

    def bar_A(self, x, t: float, avg: AveragedModel) -> np.ndarray:
        """Full (m+1)×(m+1) extended diffusion at a batch of slow points."""
        x = as_batch(x, self.m)
        A = avg.A(x, t)
        row = self.row(x, t)
        m = self.m
        out = np.empty((x.shape[0], m + 1, m + 1))
        out[:, :m, :m] = A
        out[:, m, :m] = row[:, :m]
        out[:, :m, m] = row[:, :m]
        out[:, m, m] = row[:, m]
        return out


def _map_nodes(work, nodes, workers):
    workers = workers or get_worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(work, nodes))
    return [work(item) for item in nodes]


def compute_extended_forward(
    coeffs: CoefficientSet,
    comparable: ComparableSpec,
    cells: CellTable,
    xt_grid: XTGrid,
    avg: Optional[AveragedModel] = None,
    workers: Optional[int] = None,
) -> ExtendedSystem:
    if comparable.kind != FORWARD:
        raise DivergentFunctionalError("forward extended system needs a forward comparable")
    start = time.perf_counter()
    if avg is None or avg.kind != FORWARD:
        avg = compute_averaged_coefficients(coeffs, comparable, cells, xt_grid, workers)
    cells.ensure(xt_grid.cell_points(depth=1))
    m = coeffs.m
    step = xt_grid.step
    nodes = list(xt_grid.nodes())

    def work(item):
        idx, x, t = item
        fr = node_frame(coeffs, cells, x, t, step)
        v = fr.values
        D1, Sigma1 = reduced_blocks(v)
        b_c = np.asarray(comparable.b(fr.xb, fr.y, t), float).reshape(v.b.shape)
        g_c = np.asarray(comparable.g(fr.xb, fr.y, t), float).reshape(v.g.shape)
        vec = np.concatenate([v.b - b_c, v.g - g_c], axis=1)
        sol = solve_reduced(D1, vec)
        s_F = np.einsum("ni,nip->np", sol, Sigma1)
        size = fr.y.shape[0]
        zeros_col = np.zeros((size, 1))
        b_ext = np.concatenate([v.b, 0.5 * np.sum(vec * sol, axis=1)[:, None]], axis=1)
        f_ext = np.concatenate([v.f, zeros_col], axis=1)
        sig_ext = np.concatenate([v.sigma, s_F[:, None, :]], axis=1)
        a_ext = np.einsum("nip,njp->nij", sig_ext, sig_ext)
        h_ext = np.einsum("nip,njp->nij", sig_ext, v.eta)
        phi_ext = np.concatenate([fr.phi, zeros_col], axis=1)
        dx_ext = np.concatenate([fr.dphi_dx, np.zeros((size, 1, m))], axis=1)
        dy_ext = np.concatenate([fr.dphi_dy, np.zeros((size, 1, coeffs.n))], axis=1)
        dxy_ext = np.concatenate([fr.dphi_dxy, np.zeros((size, 1, m, coeffs.n))], axis=1)
        w_ext, A_ext = average_generator(fr.weights, fr.rho, b_ext, f_ext, v.g, a_ext, h_ext, phi_ext, dx_ext, dy_ext, dxy_ext)
        return w_ext[m], A_ext[m, :]

    results = _map_nodes(work, nodes, workers)
    bar_w = np.empty(xt_grid.shape)
    row = np.empty(xt_grid.shape + (m + 1,))
    for (idx, _, _), (bw, r) in zip(nodes, results):
        bar_w[idx], row[idx] = bw, r
    diag_res = np.abs(row[..., m] - 2.0 * bar_w)
    row_res = np.max(np.abs(row[..., :m] - (avg.w_nodes - avg.w_comp_nodes)), axis=-1)
    ext = ExtendedSystem(
        kind=FORWARD,
        xt=xt_grid,
        bar_w_nodes=bar_w,
        row_nodes=row,
        comparable=comparable,
        residuals={"forward_diag": float(diag_res.max()), "forward_row": float(row_res.max())},
        node_residuals={"forward_diag": diag_res, "forward_row": row_res},
    )
    logger.info(
        "Forward extended system on %s nodes in %.1fs (diag %.2e, row %.2e)",
        len(nodes),
        time.perf_counter() - start,
        ext.residuals["forward_diag"],
        ext.residuals["forward_row"],
    )
    return ext


def default_fast_density(coeffs: CoefficientSet, cells: CellTable, xt_grid: XTGrid) -> FastDensity:
    if coeffs.affine is not None:
        return GaussianFastDensity(coeffs)
    if xt_grid.m != 1:
        raise UnsupportedModelError("pointwise fast density for nonlinear models supports one slow variable")
    cells.ensure([(x, t) for _, x, t in xt_grid.nodes()])
    table = [cells.get(x, t) for _, x, t in xt_grid.nodes()]
    return TabulatedFastDensity(table, xt_grid.x_axes[0], xt_grid.t_axis)


def check_backward_compatibility(
    coeffs: CoefficientSet,
    comparable: ComparableSpec,
    cells: CellTable,
    xt_grid: XTGrid,
    tol: Optional[float] = None,
) -> CompatibilityReport:
    """Fold the compatibility residuals over all node cells; raise on violation."""
    tol = tol if tol is not None else COMPAT_TOL.get(cells.backend, COMPAT_TOL_NUMERIC)
    report = None
    for _, x, t in xt_grid.nodes():
        r = check_compatible_conditions(coeffs, comparable.f_tilde, cells.get(x, t), parity=comparable.parity)
        report = r if report is None else report.merged(r)
    failing = {k: v for k, v in report.as_dict().items() if k in (COUPLING, FAST_BALANCE) and v > tol}
    if failing:
        name = ", ".join(sorted(failing))
        raise DivergentFunctionalError(
            f"compatibility residuals above {tol:g}: "
            + ", ".join(f"{k}={v:.3e}" for k, v in sorted(failing.items())),
            assumption=name,
        )
    return report


def check_epsilon_free(fields: BackwardFields, x: np.ndarray, y: np.ndarray, t: float, eps_pair: Tuple[float, float] = EPS_PAIR) -> float:
    """Relative spread of the unreduced σ_H across two ε and against the reduced form."""
    reduced = fields.sigma_m1(x, y, t)
    scale = max(1.0, float(np.max(np.abs(reduced))))
    spread = 0.0
    for e in eps_pair:
        spread = max(spread, float(np.max(np.abs(fields.sigma_m1_unreduced(x, y, t, e) - reduced))) / scale)
    return spread


def compute_extended_backward(
    coeffs: CoefficientSet,
    comparable: ComparableSpec,
    cells: CellTable,
    xt_grid: XTGrid,
    avg: Optional[AveragedModel] = None,
    density: Optional[FastDensity] = None,
    compat_tol: Optional[float] = None,
    eps_free_tol: float = EPS_FREE_TOL,
    workers: Optional[int] = None,
) -> ExtendedSystem:
    if comparable.kind != BACKWARD:
        raise DivergentFunctionalError("backward extended system needs a backward comparable")
    start = time.perf_counter()
    if avg is None or avg.kind != BACKWARD:
        avg = compute_averaged_coefficients(coeffs, comparable, cells, xt_grid, workers)
    cells.ensure(xt_grid.cell_points(depth=1))
    report = check_backward_compatibility(coeffs, comparable, cells, xt_grid, compat_tol)
    density = density or default_fast_density(coeffs, cells, xt_grid)
    fields = BackwardFields(coeffs, comparable, density)
    m = coeffs.m
    step = xt_grid.step
    nodes = list(xt_grid.nodes())

    def work(item):
        idx, x, t = item
        fr = node_frame(coeffs, cells, x, t, step)
        grid = fr.cell.grid
        size = grid.size
        v = fr.values
        diag: Dict[str, float] = {}

        def at_offset(point):
            cell = cells.get(point, t)
            xo = np.broadcast_to(point, (size, m)).copy()
            f_h = fields.f_m1(xo, fr.y, t)
            phi_h = solve_poisson(
                coeffs, point, t, cell.rho, f_h, grid, cells.backend, centering_tol=F_M1_CENTERING_TOL, diagnostics=diag
            )
            f_t = np.asarray(comparable.f_tilde(xo, fr.y, t), float).reshape(size, m)
            J = grid.integrate(cell.rho[:, None] * (fields.V(xo, fr.y, t) - phi_h[:, None] * f_t))
            return f_h, phi_h, J

        centre = at_offset(x)
        shifted = {}
        for j in range(m):
            for sign in (1.0, -1.0):
                e = np.zeros(m)
                e[j] = sign * step[j]
                shifted[(j, sign)] = at_offset(x + e)

        def phi_h_at(point):
            j = int(np.argmax(np.abs(point - x)))
            sign = 1.0 if point[j] > x[j] else -1.0
            return shifted[(j, sign)][1][:, None]

        f_h, phi_h, _ = centre
        div_J = sum((shifted[(j, 1.0)][2][j] - shifted[(j, -1.0)][2][j]) / (2.0 * step[j]) for j in range(m))
        dphi_h_dx = x_derivative(phi_h_at, x, step)
        s_H = fields.sigma_m1(fr.xb, fr.y, t, v)
        b_H = fields.b_m1(fr.xb, fr.y, t, v)

        b_ext = np.concatenate([v.b, b_H[:, None]], axis=1)
        f_ext = np.concatenate([v.f, f_h[:, None]], axis=1)
        sig_ext = np.concatenate([v.sigma, s_H[:, None, :]], axis=1)
        a_ext = np.einsum("nip,njp->nij", sig_ext, sig_ext)
        h_ext = np.einsum("nip,njp->nij", sig_ext, v.eta)
        phi_ext = np.concatenate([fr.phi, phi_h[:, None]], axis=1)
        dx_ext = np.concatenate([fr.dphi_dx, dphi_h_dx], axis=1)
        dy_h = grid.gradient(phi_h[:, None])
        dy_ext = np.concatenate([fr.dphi_dy, dy_h], axis=1)
        dxy_ext = np.concatenate([fr.dphi_dxy, grid.gradient(dphi_h_dx)], axis=1)
        w_ext, A_ext = average_generator(fr.weights, fr.rho, b_ext, f_ext, v.g, a_ext, h_ext, phi_ext, dx_ext, dy_ext, dxy_ext)
        sample = slice(None, None, max(1, size // 16))
        eps_spread = check_epsilon_free(fields, fr.xb[sample], fr.y[sample], t) if isinstance(density, GaussianFastDensity) else 0.0
        return w_ext[m], A_ext[m, :], float(div_J), diag.get("solvability_defect", 0.0), eps_spread

    results = _map_nodes(work, nodes, workers)
    bar_w = np.empty(xt_grid.shape)
    row = np.empty(xt_grid.shape + (m + 1,))
    div_J = np.empty(xt_grid.shape)
    eps_spread = 0.0
    defect = 0.0
    for (idx, _, _), (bw, r, dj, lam, spread) in zip(nodes, results):
        bar_w[idx], row[idx], div_J[idx] = bw, r, dj
        eps_spread = max(eps_spread, spread)
        defect = max(defect, lam)
    if eps_spread > eps_free_tol:
        raise DivergentFunctionalError(
            f"backward loading depends on epsilon (relative spread {eps_spread:.3e})", assumption="epsilon_free"
        )

    cross = np.empty(xt_grid.shape)
    current = np.empty(xt_grid.shape)
    exp_drift = np.empty(xt_grid.shape)
    for idx, x, t in nodes:
        xb = x[None, :]
        h = float(np.min(step))

        def drift_potential(xx):
            return avg.w_comp(xx, t) - 0.5 * avg.div_A(xx, t, h)

        div_A = avg.div_A(xb, t, h)[0]
        div_D = float(fd.div(drift_potential, xb, h)[0])
        cross[idx] = np.max(np.abs(row[idx][:m] - (avg.w_nodes[idx] + avg.w_comp_nodes[idx] - div_A)))
        current[idx] = abs(div_D - div_J[idx])
        exp_drift[idx] = abs(row[idx][m] - 2.0 * (bar_w[idx] - div_D))
    drift_current = np.abs(bar_w - 0.5 * row[..., m] - div_J)
    node_res = {
        "drift_current": drift_current,
        "cross_row": cross,
        "current_divergence": current,
        "exp_martingale_drift": exp_drift,
    }
    residuals = {k: float(v.max()) for k, v in node_res.items()}
    residuals["diffusion_match"] = avg.diffusion_mismatch()
    residuals["eps_free"] = eps_spread
    residuals["solvability_defect"] = defect
    residuals.update({f"compat:{k}": v for k, v in report.as_dict().items()})
    ext = ExtendedSystem(
        kind=BACKWARD,
        xt=xt_grid,
        bar_w_nodes=bar_w,
        row_nodes=row,
        comparable=comparable,
        residuals=residuals,
        node_residuals=node_res,
        fields=fields,
    )
    logger.info(
        "Backward extended system on %s nodes in %.1fs (cross %.2e, current %.2e)",
        len(nodes),
        time.perf_counter() - start,
        residuals["cross_row"],
        residuals["current_divergence"],
    )
    return ext
