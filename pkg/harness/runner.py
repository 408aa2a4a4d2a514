"""End-to-end experiment: cells → averaging → extended systems → simulation → checks.

The pipeline stages are exposed separately so the CLI subcommands can stop
after any of them.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from averaging.extended import (
    COMPAT_TOL,
    COMPAT_TOL_NUMERIC,
    ExtendedSystem,
    check_backward_compatibility,
    compute_extended_backward,
    compute_extended_forward,
    default_fast_density,
)
from averaging.mu import MuField
from averaging.reduced import AveragedModel, compute_averaged_coefficients
from averaging.xt import XTGrid
from cells.cache import CellStore
from cells.density import FastDensity, GaussianFastDensity
from cells.grid import fast_grid
from cells.table import CellTable
from db.registry import record_run_finish, record_run_start
from db.session import get_session
from errors import DependencyError
from functionals.backward import NAMES as BACKWARD_EPS_NAMES
from functionals.backward import backward_epsilon_accumulator
from functionals.densities import (
    GaussianJointDensity,
    GaussianReducedDensity,
    JointDensity,
    ReducedDensity,
    density_gap,
    joint_density_for,
    reduced_density_for,
)
from functionals.forward import forward_epsilon_spec
from functionals.limits import BACKWARD_NAMES, FORWARD_NAMES, limit_backward_decomposition, limit_forward_decomposition
from functionals.physics import ENTROPY, HOUSEKEEPING, make_entropy_production_spec, make_housekeeping_spec, reversed_comparable
from functionals.spec import LIMIT_ANOMALOUS, FunctionalSpec
from harness import checks
from harness.config import ENTROPY_NAMES, HOUSEKEEPING_NAMES, ExperimentConfig
from harness.report import write_results
from harness.stats import (
    EnsembleStats,
    covariation_check,
    ift_check,
    martingale_check,
    second_law_check,
    summarize_functional,
    variance_check,
)
from model.catalog import build_model, default_backend
from model.comparable import BACKWARD, ComparableSpec, original_forward, shifted_forward
from model.coefficients import MultiscaleModel
from model.parity import ParityVector
from paths.engine import simulate_multiscale
from paths.limit import simulate_limit_system
from paths.records import FIXED_TIME, StoppingRule, TrajectoryRecord, dump_paths
from settings import get_cache_dir

logger = logging.getLogger(__name__)

COVARIATION_PAIRS = (("F1", "F2"), ("F1", "F1"))


@dataclass
class Stage:
    """Objects built so far by the pipeline; empty fields were not needed."""

    cfg: ExperimentConfig
    model: MultiscaleModel
    backend: str
    xt: XTGrid
    cells: CellTable
    parity: ParityVector
    forward: Optional[ComparableSpec] = None
    avg_forward: Optional[AveragedModel] = None
    ext_forward: Optional[ExtendedSystem] = None
    backward: Optional[ComparableSpec] = None
    cells_backward: Optional[CellTable] = None
    avg_backward: Optional[AveragedModel] = None
    ext_backward: Optional[ExtendedSystem] = None
    fast: Optional[FastDensity] = None
    reduced: Optional[ReducedDensity] = None
    joint: Optional[JointDensity] = None
    compat: Dict[str, float] = field(default_factory=dict)
    extra_ext: List[ExtendedSystem] = field(default_factory=list)


@dataclass
class Run:
    """One simulation and the specs it accumulated."""

    label: str
    record: TrajectoryRecord
    specs: List[FunctionalSpec]


def build_experiment_model(cfg: ExperimentConfig, epsilon: Optional[float] = None) -> MultiscaleModel:
    return build_model(cfg.model, cfg.params, epsilon=epsilon or cfg.epsilon, T=cfg.T, burn_in=cfg.burn_in)


def forward_comparable(cfg: ExperimentConfig, model: MultiscaleModel) -> ComparableSpec:
    kind, _, value = cfg.comparable.partition(":")
    if kind.strip() == "original":
        return original_forward(model.coeffs)
    return shifted_forward(model.coeffs, float(value or 1.0))


def parity_for(cfg: ExperimentConfig, model: MultiscaleModel) -> ParityVector:
    if cfg.parity:
        return ParityVector.parse(cfg.parity)
    return ParityVector.even(model.m + model.n)


def _store(cfg: ExperimentConfig) -> Optional[CellStore]:
    return CellStore(Path(get_cache_dir()) / "cells", get_session) if cfg.cache else None


def prepare(cfg: ExperimentConfig, workers: Optional[int] = None) -> Stage:
    model = build_experiment_model(cfg)
    backend = cfg.backend or default_backend(model)
    grid = fast_grid(model.domain, cfg.fast_nodes)
    xt = XTGrid.for_model(model, cfg.x_nodes, cfg.t_nodes, cfg.x_lo, cfg.x_hi)
    cells = CellTable(model, grid, backend, store=_store(cfg), workers=workers)
    return Stage(cfg=cfg, model=model, backend=backend, xt=xt, cells=cells, parity=parity_for(cfg, model))


def solve_cells(stage: Stage) -> int:
    return stage.cells.ensure(stage.xt.cell_points(depth=1))


def average(stage: Stage, workers: Optional[int] = None) -> AveragedModel:
    if stage.avg_forward is None:
        stage.forward = stage.forward or forward_comparable(stage.cfg, stage.model)
        stage.avg_forward = compute_averaged_coefficients(stage.model.coeffs, stage.forward, stage.cells, stage.xt, workers)
    return stage.avg_forward


def _wants(cfg: ExperimentConfig, names) -> bool:
    return bool(set(cfg.functionals) & set(names))


def _compat_tol(backend: str) -> float:
    return COMPAT_TOL.get(backend, COMPAT_TOL_NUMERIC)


def prepare_backward(stage: Stage, workers: Optional[int] = None) -> None:
    """Reversed-protocol comparable, its cells, averaged model, densities and extended system."""
    if stage.ext_backward is not None:
        return
    model = stage.model
    comparable = reversed_comparable(model.coeffs, stage.parity)
    stage.backward = comparable
    cells = CellTable(
        model, stage.cells.grid, stage.backend, f_tilde=comparable.f_tilde, variant=comparable.label, store=stage.cells.store, workers=workers
    )
    stage.cells_backward = cells
    avg = compute_averaged_coefficients(model.coeffs, comparable, cells, stage.xt, workers)
    stage.avg_backward = avg
    stage.fast = default_fast_density(model.coeffs, cells, stage.xt)
    report = check_backward_compatibility(model.coeffs, comparable, cells, stage.xt, _compat_tol(stage.backend))
    stage.compat = report.as_dict()
    stage.ext_backward = compute_extended_backward(
        model.coeffs, comparable, cells, stage.xt, avg, density=stage.fast, compat_tol=_compat_tol(stage.backend), workers=workers
    )
    try:
        stage.reduced = reduced_density_for(avg, model)
    except DependencyError:
        logger.info("Simulating plain limit paths for a kernel estimate of the reduced density")
        plain = simulate_limit_system(None, avg, stage.cfg.n_paths, stage.cfg.limit_step, stage.cfg.seed, model=model)
        stage.reduced = reduced_density_for(avg, model, record=plain)
    stage.joint = joint_density_for(model, stage.reduced, stage.fast)


def _forward_eps_specs(stage: Stage, model: MultiscaleModel) -> List[FunctionalSpec]:
    return [forward_epsilon_spec(model, forward_comparable(stage.cfg, model))]


def _backward_eps_specs(stage: Stage, model: MultiscaleModel) -> List[FunctionalSpec]:
    joint = joint_density_for(model, stage.reduced, stage.fast) if model is not stage.model else stage.joint
    return backward_epsilon_accumulator(
        model, stage.backward, joint, stage.fast, report=None, compat_tol=_compat_tol(stage.backend)
    )


def build_runs(stage: Stage, workers: Optional[int] = None) -> List[Tuple[str, Optional[ExtendedSystem], Optional[AveragedModel], List[FunctionalSpec], list]]:
    """(label, extended system or None for the multiscale run, averaged model, specs, covariation pairs)."""
    cfg, model = stage.cfg, stage.model
    eps_specs: List[FunctionalSpec] = []
    runs = []
    if "F_eps" in cfg.functionals:
        eps_specs += _forward_eps_specs(stage, model)
    if _wants(cfg, FORWARD_NAMES):
        avg = average(stage, workers)
        stage.ext_forward = compute_extended_forward(model.coeffs, stage.forward, stage.cells, stage.xt, avg, workers)
        specs = limit_forward_decomposition(stage.ext_forward, avg)
        pairs = [p for p in COVARIATION_PAIRS if "covariation" in cfg.checks]
        runs.append(("limit_forward", stage.ext_forward, avg, specs, pairs))
    backward_needed = _wants(cfg, BACKWARD_EPS_NAMES + BACKWARD_NAMES + ENTROPY_NAMES)
    if backward_needed:
        prepare_backward(stage, workers)
    if _wants(cfg, BACKWARD_EPS_NAMES):
        eps_specs += _backward_eps_specs(stage, model)
    limit_backward: List[FunctionalSpec] = []
    if _wants(cfg, BACKWARD_NAMES):
        limit_backward += limit_backward_decomposition(stage.ext_backward, stage.avg_backward, stage.reduced)
    if _wants(cfg, ENTROPY_NAMES):
        nodes = [(x, t) for _, x, t in stage.xt.nodes()]
        _, spec = make_entropy_production_spec(
            model, stage.parity, stage.joint, stage.fast, stage.cells_backward, nodes, tol=_compat_tol(stage.backend)
        )
        eps_specs.append(spec)
        names = (f"{ENTROPY}_limit", f"{ENTROPY}1", f"{ENTROPY}2", f"{ENTROPY}_H")
        limit_backward += limit_backward_decomposition(stage.ext_backward, stage.avg_backward, stage.reduced, names=names)
    if limit_backward:
        runs.append(("limit_backward", stage.ext_backward, stage.avg_backward, limit_backward, []))
    if _wants(cfg, HOUSEKEEPING_NAMES):
        avg = average(stage, workers)
        fast = stage.fast or default_fast_density(model.coeffs, stage.cells, stage.xt)
        comparable, spec = make_housekeeping_spec(model, stage.parity, MuField(avg), fast, tol=_compat_tol(stage.backend))
        eps_specs.append(spec)
        avg_hk = compute_averaged_coefficients(model.coeffs, comparable, stage.cells, stage.xt, workers)
        ext_hk = compute_extended_forward(model.coeffs, comparable, stage.cells, stage.xt, avg_hk, workers)
        stage.extra_ext.append(ext_hk)
        names = (f"{HOUSEKEEPING}_limit", f"{HOUSEKEEPING}1", f"{HOUSEKEEPING}2")
        runs.append(("limit_housekeeping", ext_hk, avg_hk, limit_forward_decomposition(ext_hk, avg_hk, names=names), []))
    if eps_specs:
        runs.insert(0, ("multiscale", None, None, eps_specs, []))
    return runs


def simulate(stage: Stage, workers: Optional[int] = None) -> List[Run]:
    cfg, model = stage.cfg, stage.model
    rule = StoppingRule.parse(cfg.rules[0], model.m)
    out = []
    for label, ext, avg, specs, pairs in build_runs(stage, workers):
        if ext is None:
            record = simulate_multiscale(
                model, n_paths=cfg.n_paths, dt=cfg.dt, seed=cfg.seed, rule=rule, functionals=specs, covariations=pairs, n_records=cfg.n_records, workers=workers
            )
        else:
            record = simulate_limit_system(
                ext, avg, cfg.n_paths, cfg.limit_step, cfg.seed, rule, model=model, functionals=specs, covariations=pairs, n_records=cfg.n_records, workers=workers
            )
        out.append(Run(label, record, specs))
    return out


def _gated_under(spec: FunctionalSpec, rule: StoppingRule) -> bool:
    """Backward ε-level and regular limit parts are tested at fixed times only."""
    if not spec.gated:
        return False
    if rule.kind == FIXED_TIME:
        return True
    return not (spec.side == BACKWARD and spec.role != LIMIT_ANOMALOUS)


def _martingale_gated(spec: FunctionalSpec, rule: StoppingRule) -> bool:
    """e^{−G^ε} and e^{−G1} meet the fixed-time IFT without being martingales; only G2 is tested."""
    if not _gated_under(spec, rule):
        return False
    return spec.side != BACKWARD or spec.role == LIMIT_ANOMALOUS


def _fast_domain_rows(stage: Stage) -> List[dict]:
    """Truncated fast box and grid spacing, one row per fast axis."""
    dom, grid = stage.model.domain, stage.cells.grid
    return [
        {"axis": k + 1, "y_lo": float(lo), "y_hi": float(hi), "nodes": int(grid.nodes), "spacing": float((hi - lo) / (grid.nodes - 1))}
        for k, (lo, hi) in enumerate(zip(dom.y_lo, dom.y_hi))
    ]


def evaluate(stage: Stage, runs: List[Run]) -> EnsembleStats:
    cfg = stage.cfg
    thr = cfg.thresholds
    wanted = set(cfg.functionals)
    rules = [StoppingRule.parse(r, stage.model.m) for r in cfg.rules]
    stats = EnsembleStats()
    stats.tables["fast_domain"] = _fast_domain_rows(stage)
    for run in runs:
        eps = stage.model.epsilon if run.label == "multiscale" else 0.0
        for spec in run.specs:
            if spec.name not in wanted:
                continue
            for rule in rules:
                stats.estimates.append(summarize_functional(run.record, spec.name, rule, eps, spec.flags))
                gated = _gated_under(spec, rule)
                if "ift" in cfg.checks:
                    stats.verdicts.append(ift_check(run.record, spec.name, rule, thr, gated))
                if "martingale" in cfg.checks:
                    stats.verdicts.append(martingale_check(run.record, spec.name, rule=rule, thresholds=thr, gated=_martingale_gated(spec, rule)))
            if "second_law" in cfg.checks and spec.name in (ENTROPY, HOUSEKEEPING):
                stats.verdicts.append(second_law_check(run.record, spec.name, rules[0], thr))
            if "anomalous_variance" in cfg.checks and spec.role == LIMIT_ANOMALOUS:
                stats.verdicts.append(variance_check(run.record, spec.name, thr, gated=True))
        if "covariation" in cfg.checks:
            for a, b in COVARIATION_PAIRS:
                key = f"{a}:{b}"
                if key in run.record.covariation:
                    # [M, M] is positive by construction; only the cross pair is a test
                    stats.verdicts.append(covariation_check(run.record, (a, b), thresholds=thr, gated=a != b))
    if "convergence" in cfg.checks:
        _convergence(stage, stats)
    if "burn_in" in cfg.checks and stage.model.coeffs.affine is not None:
        avg = stage.avg_forward or stage.avg_backward or average(stage)
        stats.tables["burn_in"] = checks.burn_in_diagnostic(
            stage.model, avg, GaussianFastDensity(stage.model.coeffs), cfg.n_paths, cfg.dt, cfg.seed
        )
    stats.residuals = checks.residual_table(
        stage.backend,
        stage.cells,
        stage.avg_backward or stage.avg_forward,
        [e for e in (stage.ext_forward, stage.ext_backward, *stage.extra_ext) if e is not None],
        stage.compat,
    )
    gap = _density_gap_rows(stage, runs)
    if gap:
        stats.tables["density_gap"] = gap
    return stats


def _convergence(stage: Stage, stats: EnsembleStats) -> None:
    cfg = stage.cfg
    if stage.ext_forward is not None and "F_eps" in cfg.functionals:
        rows, verdicts = checks.convergence_check(
            stage.model, cfg.epsilons, cfg.n_paths, cfg.dt, stage.avg_forward, cfg.seed,
            extended=stage.ext_forward,
            eps_specs=lambda m: _forward_eps_specs(stage, m),
            limit_specs=limit_forward_decomposition(stage.ext_forward, stage.avg_forward),
            pairs=[("F_eps", "F")],
        )
    elif stage.ext_backward is not None and "G_eps" in cfg.functionals:
        rows, verdicts = checks.convergence_check(
            stage.model, cfg.epsilons, cfg.n_paths, cfg.dt, stage.avg_backward, cfg.seed,
            extended=stage.ext_backward,
            eps_specs=lambda m: _backward_eps_specs(stage, m),
            limit_specs=limit_backward_decomposition(stage.ext_backward, stage.avg_backward, stage.reduced),
            pairs=[("G_eps", "G")],
        )
    else:
        rows, verdicts = checks.convergence_check(stage.model, cfg.epsilons, cfg.n_paths, cfg.dt, average(stage), cfg.seed)
    stats.tables["convergence"] = rows
    stats.verdicts.extend(verdicts)


def _density_gap_rows(stage: Stage, runs: List[Run]) -> List[dict]:
    """log[p^ε/(pρ)] along the multiscale paths at t=0 and t=T, linear models only."""
    model = stage.model
    if model.coeffs.affine is None:
        return []
    multiscale = next((r.record for r in runs if r.label == "multiscale"), None)
    avg = stage.avg_backward or stage.avg_forward
    if multiscale is None or avg is None:
        return []
    joint = GaussianJointDensity(model)
    reduced = GaussianReducedDensity(avg, model)
    fast = GaussianFastDensity(model.coeffs)
    kept = multiscale.kept()
    rows = []
    for k in (0, -1):
        t = float(multiscale.times[k])
        rows.append({"t": t, "sup_abs_log_ratio": density_gap(joint, reduced, fast, multiscale.x[kept, k, :], multiscale.y[kept, k, :], t)})
    return rows


def _start_run(cfg: ExperimentConfig, out_dir: Path) -> int:
    session = get_session()
    try:
        run = record_run_start(session, cfg.config_hash(), cfg.name, cfg.seed, cfg.n_paths, str(out_dir))
        session.commit()
        return run.id
    finally:
        session.close()


def _finish_run(run_id: int, exit_code: int) -> None:
    session = get_session()
    try:
        record_run_finish(session, run_id, exit_code)
        session.commit()
    finally:
        session.close()


def run_experiment(cfg: ExperimentConfig, workers: Optional[int] = None, record_run: bool = True) -> Tuple[EnsembleStats, Dict[str, Path]]:
    """Run the whole pipeline, write the artifacts and return the stats.

    ``stats.exit_code`` is 0 iff every gated verdict passed.
    """
    start = time.perf_counter()
    out_dir = Path(cfg.out_dir)
    run_id = None
    if record_run:
        run_id = _start_run(cfg, out_dir)
    exit_code = 2
    try:
        stage = prepare(cfg, workers)
        solve_cells(stage)
        runs = simulate(stage, workers)
        stats = evaluate(stage, runs)
        if cfg.dump_paths:
            out_dir.mkdir(parents=True, exist_ok=True)
            for run in runs:
                dump_paths(run.record, out_dir / f"paths_{run.label}.npz")
        written = write_results(out_dir, cfg, stats, xlsx=cfg.xlsx, averaged=stage.avg_forward or stage.avg_backward)
        exit_code = stats.exit_code
    finally:
        if run_id is not None:
            _finish_run(run_id, exit_code)
    failures = stats.gated_failures()
    logger.info(
        "Experiment %s finished in %.1fs: %s verdicts, %s gated failures", cfg.name, time.perf_counter() - start, len(stats.verdicts), len(failures)
    )
    for v in failures:
        logger.warning("FAIL %s %s [%s]: statistic=%.6g se=%.3g %s", v.check, v.functional, v.rule, v.statistic, v.se, v.note)
    return stats, written


def estimates_only(cfg: ExperimentConfig) -> ExperimentConfig:
    """Same experiment without any verdict battery (``simulate`` subcommand)."""
    return replace(cfg, checks=())
