"""Euler–Maruyama integration of the slow/fast system with functional accumulators."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigurationError
from model.coefficients import MultiscaleModel
from model.comparable import ComparableSpec
from paths.ledger import Ledger
from paths.records import DEFAULT_RECORDS, StoppingRule, TrajectoryRecord, merge, record_steps
from paths.rng import NoiseStream
from paths.state import StepState
from settings import get_worker_count

logger = logging.getLogger(__name__)

STABILITY_FACTOR = 0.1
MAX_EXIT_FRACTION = 0.01


def step_count(span: float, dt: float) -> int:
    return max(0, int(round(span / dt)))


def check_time_step(epsilon: float, dt: float) -> None:
    if not dt > 0:
        raise ConfigurationError(f"dt must be > 0, got {dt}")
    limit = STABILITY_FACTOR * epsilon**2
    if dt > limit * (1 + 1e-12):
        raise ConfigurationError(f"dt={dt:g} exceeds {STABILITY_FACTOR:g}*eps^2={limit:g} for eps={epsilon:g}")


def chunk_indices(n_paths: int, workers: int) -> List[np.ndarray]:
    workers = max(1, min(int(workers), n_paths))
    return [c for c in np.array_split(np.arange(n_paths), workers) if c.size]


def em_step(model: MultiscaleModel, x: np.ndarray, y: np.ndarray, t: float, dt: float, dW: np.ndarray):
    """Left-point field values and the Euler–Maruyama update of (x, y)."""
    e = model.epsilon
    v = model.coeffs.evaluate(x, y, t)
    x_new = x + (v.b + v.f / e) * dt + np.einsum("nip,np->ni", v.sigma, dW)
    y_new = y + (v.g / e + v.c / e**2) * dt + np.einsum("nip,np->ni", v.eta, dW) / e
    return v, x_new, y_new


def _run_chunk(model, specs, covariations, indices, seed, dt, n_steps, burn_steps, burn_in, rule, rec_steps):
    m, n, p = model.m, model.n, model.coeffs.p
    stream = NoiseStream(seed, indices, p)
    xy = model.init.transform(stream.initial(m + n))
    x, y = xy[:, :m].copy(), xy[:, m:].copy()
    size = x.shape[0]
    active = model.domain.contains(x, y)
    exit_flag = ~active
    exit_time = np.where(exit_flag, -burn_in, np.nan)

    def advance(t, dW):
        nonlocal x, y, active
        v, x_new, y_new = em_step(model, x, y, t, dt, dW)
        with np.errstate(invalid="ignore"):
            inside = model.domain.contains(x_new, y_new) & np.isfinite(x_new).all(axis=1) & np.isfinite(y_new).all(axis=1)
        left = active & ~inside
        if left.any():
            exit_flag[left] = True
            exit_time[left] = t + dt
        active = active & inside
        x = np.where(active[:, None], x_new, x)
        y = np.where(active[:, None], y_new, y)
        return v

    for k in range(burn_steps):
        t = -burn_in + k * dt
        advance(t, stream.increments(dt))

    ledger = Ledger(specs, covariations, size, rec_steps, rule, x, y)
    ledger.begin(x, y, 0.0)
    noise_sq = np.zeros((size, p))
    for k in range(n_steps):
        t = k * dt
        dW = stream.increments(dt)
        x_left, y_left = x, y
        v = advance(t, dW)
        state = StepState(x=x_left, t=t, y=y_left, epsilon=model.epsilon, values=v)
        ledger.accumulate(state, dW, dt, active)
        noise_sq += np.where(active[:, None], dW * dW, 0.0)
        ledger.after_step(k + 1, x, y, (k + 1) * dt, active)
    ledger.finish(x, y, n_steps * dt)

    return TrajectoryRecord(
        path_index=np.asarray(indices),
        times=ledger.times,
        x=ledger.x_rec,
        y=ledger.y_rec,
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
        kind="multiscale",
    )


def run_chunks(work, n_paths: int, workers: Optional[int]) -> TrajectoryRecord:
    chunks = chunk_indices(n_paths, workers or get_worker_count())
    if len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    return merge(parts)


def log_exits(record: TrajectoryRecord, label: str, max_fraction: float = MAX_EXIT_FRACTION) -> None:
    frac = record.exit_fraction
    if frac > max_fraction:
        record.flags["exit_fraction"] = f"{frac:.4f}"
        logger.warning(
            "%s run invalid: %.2f%% of paths left the truncated domain (limit %.2f%%)",
            label,
            100 * frac,
            100 * max_fraction,
        )
    elif frac > 0:
        logger.info("%s run: %s of %s paths left the truncated domain", label, int(record.exit_flag.sum()), record.n_paths)


def simulate_multiscale(
    model: MultiscaleModel,
    comparable: Optional[ComparableSpec] = None,
    n_paths: int = 1000,
    dt: float = 1e-4,
    seed: int = 0,
    rule: Optional[StoppingRule] = None,
    *,
    functionals: Sequence = (),
    covariations: Iterable[Tuple[str, str]] = (),
    n_records: int = DEFAULT_RECORDS,
    burn_in: Optional[float] = None,
    workers: Optional[int] = None,
) -> TrajectoryRecord:
    """Simulate ``n_paths`` of the full system and accumulate ``functionals``.

    With a comparable and no explicit functionals, the forward functional
    against that comparable is accumulated under the name ``F_eps``.
    """
    check_time_step(model.epsilon, dt)
    if n_paths < 1:
        raise ConfigurationError(f"n_paths must be >= 1, got {n_paths}")
    rule = rule or StoppingRule()
    specs = list(functionals)
    if comparable is not None and not specs:
        from functionals.forward import forward_epsilon_spec

        specs = [forward_epsilon_spec(model, comparable)]
    burn_in = model.burn_in if burn_in is None else float(burn_in)
    n_steps = step_count(model.T, dt)
    burn_steps = step_count(burn_in, dt)
    rec_steps = record_steps(n_steps, n_records)
    covariations = list(covariations)
    start = time.perf_counter()

    def work(indices):
        return _run_chunk(model, specs, covariations, indices, seed, dt, n_steps, burn_steps, burn_steps * dt, rule, rec_steps)

    record = run_chunks(work, n_paths, workers)
    log_exits(record, f"multiscale {model.name} eps={model.epsilon:g}")
    logger.info(
        "Simulated %s multiscale paths (%s steps, %s burn-in) in %.1fs",
        n_paths,
        n_steps,
        burn_steps,
        time.perf_counter() - start,
    )
    return record
