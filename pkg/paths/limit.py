"""Euler–Maruyama on the averaged slow process and its extended (X, functional) system."""
from __future__ import annotations

import logging
import time
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from averaging.extended import ExtendedSystem
from averaging.reduced import AveragedModel
from errors import ConfigurationError, NumericalError
from model.coefficients import MultiscaleModel
from paths.engine import log_exits, run_chunks, step_count
from paths.ledger import Ledger
from paths.records import DEFAULT_RECORDS, StoppingRule, TrajectoryRecord, record_steps
from paths.rng import NoiseStream
from paths.state import StepState

logger = logging.getLogger(__name__)

NEGATIVE_EIG_TOL = 1e-8


def psd_sqrt(matrix: np.ndarray, x: np.ndarray, t: float, tol: float = NEGATIVE_EIG_TOL) -> np.ndarray:
    """Symmetric square roots of a stack of PSD matrices; eigenvalues floored at 0."""
    sym = 0.5 * (matrix + np.swapaxes(matrix, 1, 2))
    vals, vecs = np.linalg.eigh(sym)
    scale = np.maximum(1.0, np.abs(vals).max(axis=1))
    bad = vals[:, 0] < -tol * scale
    if bad.any():
        i = int(np.argmax(bad))
        raise NumericalError(
            f"extended diffusion is indefinite (min eigenvalue {vals[i, 0]:.3e})",
            point=(x[i].tolist(), t),
        )
    root_vals = np.sqrt(np.clip(vals, 0.0, None))
    return np.einsum("nij,nj,nkj->nik", vecs, root_vals, vecs)


def _limit_chunk(avg, extended, model, specs, covariations, indices, seed, dt, n_steps, burn_steps, burn_in, rule, rec_steps):
    m = avg.m
    noise_dim = m + 1 if extended is not None else m
    stream = NoiseStream(seed, indices, noise_dim)
    init = model.init
    xy = init.transform(stream.initial(init.dim))
    x = xy[:, :m].copy()
    size = x.shape[0]
    domain = model.domain
    active = domain.contains(x)
    exit_flag = ~active
    exit_time = np.where(exit_flag, -burn_in, np.nan)

    def coefficients(t):
        w = avg.w(x, t)
        big = extended.bar_A(x, t, avg) if extended is not None else avg.A(x, t)
        return w, big, psd_sqrt(big, x, t)

    def advance(t, dB):
        nonlocal x, active
        w, big, root = coefficients(t)
        x_new = x + w * dt + np.einsum("nij,nj->ni", root[:, :m, :], dB)
        with np.errstate(invalid="ignore"):
            inside = domain.contains(x_new) & np.isfinite(x_new).all(axis=1)
        left = active & ~inside
        if left.any():
            exit_flag[left] = True
            exit_time[left] = t + dt
        active = active & inside
        x = np.where(active[:, None], x_new, x)
        return w, big, root

    for k in range(burn_steps):
        advance(-burn_in + k * dt, stream.increments(dt))

    ledger = Ledger(specs, covariations, size, rec_steps, rule, x)
    ledger.begin(x, None, 0.0)
    noise_sq = np.zeros((size, noise_dim))
    for k in range(n_steps):
        t = k * dt
        dB = stream.increments(dt)
        x_left = x
        w, big, root = advance(t, dB)
        state = StepState(x=x_left, t=t, w=w, A=big[:, :m, :m], root=root)
        ledger.accumulate(state, dB, dt, active)
        noise_sq += np.where(active[:, None], dB * dB, 0.0)
        ledger.after_step(k + 1, x, None, (k + 1) * dt, active)
    ledger.finish(x, None, n_steps * dt)

    return TrajectoryRecord(
        path_index=np.asarray(indices),
        times=ledger.times,
        x=ledger.x_rec,
        values=ledger.values,
        rule=rule,
        tau=ledger.tau,
        stopped=ledger.at_tau,
        x_at_tau=ledger.x_at_tau,
        exit_flag=exit_flag,
        exit_time=exit_time,
        dt=dt,
        n_steps=n_steps,
        noise_sq=noise_sq,
        covariation=ledger.cov,
        kind="limit",
    )


def simulate_limit_system(
    extended: Optional[ExtendedSystem],
    avg: AveragedModel,
    n_paths: int,
    dt: float,
    seed: int,
    rule: Optional[StoppingRule] = None,
    *,
    model: MultiscaleModel,
    functionals: Sequence = (),
    covariations: Iterable[Tuple[str, str]] = (),
    n_records: int = DEFAULT_RECORDS,
    burn_in: Optional[float] = None,
    workers: Optional[int] = None,
) -> TrajectoryRecord:
    """Simulate X (and the functional row of ``extended``) on ΔB of width m+1.

    ``model`` supplies the initial law, horizon, truncated domain and burn-in.
    During burn-in the coefficients are read at the first tabulated time.
    Without an extended system only X is simulated, on m-dimensional noise.
    """
    if not dt > 0:
        raise ConfigurationError(f"dt must be > 0, got {dt}")
    if n_paths < 1:
        raise ConfigurationError(f"n_paths must be >= 1, got {n_paths}")
    rule = rule or StoppingRule()
    burn_in = model.burn_in if burn_in is None else float(burn_in)
    n_steps = step_count(model.T, dt)
    burn_steps = step_count(burn_in, dt)
    rec_steps = record_steps(n_steps, n_records)
    specs = list(functionals)
    covariations = list(covariations)
    start = time.perf_counter()

    def work(indices):
        return _limit_chunk(
            avg, extended, model, specs, covariations, indices, seed, dt, n_steps, burn_steps, burn_steps * dt, rule, rec_steps
        )

    record = run_chunks(work, n_paths, workers)
    log_exits(record, f"limit {model.name}")
    logger.info("Simulated %s limit paths (%s steps) in %.1fs", n_paths, n_steps, time.perf_counter() - start)
    return record
