"""Studies across ε and burn-in, and the residual tables attached to every report."""
from __future__ import annotations

import logging
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import ks_2samp

from averaging.extended import ExtendedSystem
from averaging.reduced import AveragedModel
from cells.density import FastDensity
from errors import InvalidDensityError
from functionals.densities import GaussianJointDensity, GaussianReducedDensity, density_gap
from harness.stats import CONVERGENCE, Verdict
from model.coefficients import MultiscaleModel
from paths.engine import simulate_multiscale
from paths.limit import simulate_limit_system

logger = logging.getLogger(__name__)

BURN_IN_GRID = (0.0, 0.5, 1.0)
IDENTITY_TOL = {"analytic_ou": 1e-6, "numeric_fd": 1e-3}


def ks_distance(a: np.ndarray, b: np.ndarray) -> float:
    a = a[np.isfinite(a)]
    b = b[np.isfinite(b)]
    if a.size == 0 or b.size == 0:
        return float("nan")
    return float(ks_2samp(a, b).statistic)


def _non_increasing(values: Sequence[float]) -> bool:
    return all(b <= a for a, b in zip(values[:-1], values[1:]))


def convergence_check(
    model: MultiscaleModel,
    epsilons: Sequence[float],
    n_paths: int,
    dt: float,
    avg: AveragedModel,
    seed: int = 0,
    *,
    extended: Optional[ExtendedSystem] = None,
    eps_specs: Optional[Callable[[MultiscaleModel], list]] = None,
    limit_specs: Sequence = (),
    pairs: Sequence = (),
    burn_in: Optional[float] = None,
    workers: Optional[int] = None,
    gated: bool = True,
):
    """KS distance of X^ε_T, and of functional marginals, to their limits per ε.

    ``pairs`` are (ε-level name, limit name) couples, e.g. ("F_eps", "F");
    ``eps_specs(model_at_eps)`` builds the ε-level specs for each ε.
    Returns (rows, verdicts); a verdict per marginal is PASS iff the KS
    distances do not increase as ε decreases.
    """
    epsilons = sorted(epsilons, reverse=True)
    limit = simulate_limit_system(
        extended, avg, n_paths, dt, seed + 1, model=model, functionals=limit_specs, burn_in=burn_in, workers=workers
    )
    keep = limit.kept()
    rows: List[dict] = []
    columns: Dict[str, List[float]] = {"X_T": []}
    for eps_name, _ in pairs:
        columns[eps_name] = []
    for eps in epsilons:
        model_e = model.with_epsilon(eps)
        specs = eps_specs(model_e) if eps_specs is not None else []
        batch = simulate_multiscale(
            model_e, n_paths=n_paths, dt=dt, seed=seed, functionals=specs, burn_in=burn_in, workers=workers
        )
        kept = batch.kept()
        row = {"epsilon": eps, "n_paths": int(kept.sum())}
        for j in range(model.m):
            row[f"ks_X{j}" if model.m > 1 else "ks_X_T"] = ks_distance(batch.x[kept, -1, j], limit.x[keep, -1, j])
        columns["X_T"].append(max(v for k, v in row.items() if k.startswith("ks_X")))
        for eps_name, lim_name in pairs:
            d = ks_distance(batch.final(eps_name), limit.final(lim_name))
            row[f"ks_{eps_name}_vs_{lim_name}"] = d
            columns[eps_name].append(d)
        rows.append(row)
        logger.info("Convergence eps=%g: %s", eps, ", ".join(f"{k}={v:.4f}" for k, v in row.items() if k.startswith("ks_")))
    verdicts = []
    for name, values in columns.items():
        details = {f"eps={e:g}": v for e, v in zip(epsilons, values)}
        verdicts.append(
            Verdict(CONVERGENCE, name, "fixed_time", _non_increasing(values), gated, values[-1], float("nan"), n_paths, {}, details)
        )
    return rows, verdicts


def burn_in_diagnostic(
    model: MultiscaleModel,
    avg: AveragedModel,
    fast: FastDensity,
    n_paths: int,
    dt: float,
    seed: int = 0,
    burn_ins: Sequence[float] = BURN_IN_GRID,
    workers: Optional[int] = None,
) -> List[dict]:
    """sup |log p^ε − log(p·ρ)| along simulated paths at t = 0 and t = T per burn-in (linear models)."""
    rows = []
    for burn in burn_ins:
        joint = GaussianJointDensity(model, burn)
        reduced = GaussianReducedDensity(avg, model, burn)
        batch = simulate_multiscale(model, n_paths=n_paths, dt=dt, seed=seed, burn_in=burn, workers=workers)
        kept = batch.kept()
        row = {"burn_in": burn}
        for label, k, t in (("gap_t0", 0, 0.0), ("gap_T", -1, float(batch.times[-1]))):
            try:
                row[label] = density_gap(joint, reduced, fast, batch.x[kept, k, :], batch.y[kept, k, :], t)
            except InvalidDensityError:
                # point-mass start with no burn-in has no density at t = 0
                row[label] = float("nan")
        rows.append(row)
        logger.info("Burn-in %g: density gap %.3e at t=0, %.3e at T", burn, row["gap_t0"], row["gap_T"])
    return rows


def residual_rows(source: str, residuals: Dict[str, float], tol: float) -> List[dict]:
    return [
        {"source": source, "name": name, "value": float(value), "threshold": tol, "ok": bool(abs(value) <= tol)}
        for name, value in sorted(residuals.items())
    ]


def cell_residuals(cells) -> Dict[str, float]:
    """Worst diagnostic of every solved cell."""
    out: Dict[str, float] = {}
    for sol in cells.cells():
        for key, value in sol.diagnostics.items():
            out[key] = max(out.get(key, 0.0), float(value))
    return out


def residual_table(
    backend: str,
    cells=None,
    avg: Optional[AveragedModel] = None,
    extended: Sequence[ExtendedSystem] = (),
    compatibility: Optional[Dict[str, float]] = None,
) -> List[dict]:
    tol = IDENTITY_TOL.get(backend, IDENTITY_TOL["numeric_fd"])
    rows: List[dict] = []
    if cells is not None:
        rows += residual_rows("cells", cell_residuals(cells), tol)
    if avg is not None and avg.diagnostics:
        rows += residual_rows("averaging", avg.diagnostics, tol)
    for ext in extended:
        rows += residual_rows(f"extended_{ext.kind}", ext.residuals, tol)
    if compatibility:
        rows += residual_rows("compatibility", compatibility, tol)
    return rows
