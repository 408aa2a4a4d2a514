"""Cell-cache index and experiment-run registry."""
from __future__ import annotations

import json
from datetime import datetime
from typing import Optional, Sequence

from sqlalchemy import select
from sqlalchemy.orm import Session

from db.models import CellCacheEntry, ExperimentRun


def x_key(x: Sequence[float]) -> str:
    """Stable JSON text for a slow point (12 significant digits)."""
    return json.dumps([float(f"{float(v):.12g}") for v in x])


def t_key(t: float) -> float:
    return float(f"{float(t):.12g}")


def lookup_cell(
    session: Session,
    model_key: str,
    x: Sequence[float],
    t: float,
    grid_hash: str,
    backend: str,
    variant: str = "",
) -> Optional[CellCacheEntry]:
    return session.scalars(
        select(CellCacheEntry).where(
            CellCacheEntry.model_key == model_key,
            CellCacheEntry.variant == variant,
            CellCacheEntry.x_json == x_key(x),
            CellCacheEntry.t == t_key(t),
            CellCacheEntry.grid_hash == grid_hash,
            CellCacheEntry.backend == backend,
        )
    ).first()


def record_cell(
    session: Session,
    model_key: str,
    x: Sequence[float],
    t: float,
    grid_hash: str,
    backend: str,
    file_stem: str,
    variant: str = "",
) -> CellCacheEntry:
    """Insert or repoint the index row for one cell solve."""
    entry = lookup_cell(session, model_key, x, t, grid_hash, backend, variant)
    if entry is None:
        entry = CellCacheEntry(
            model_key=model_key,
            variant=variant,
            x_json=x_key(x),
            t=t_key(t),
            grid_hash=grid_hash,
            backend=backend,
            file_stem=file_stem,
        )
        session.add(entry)
    else:
        entry.file_stem = file_stem
    session.flush()
    return entry


def record_run_start(session: Session, config_hash: str, name: str, seed: int, n_paths: int, out_dir: str) -> ExperimentRun:
    run = ExperimentRun(config_hash=config_hash, name=name, seed=int(seed), n_paths=int(n_paths), out_dir=str(out_dir))
    session.add(run)
    session.flush()
    return run


def record_run_finish(session: Session, run_id: int, exit_code: int) -> Optional[ExperimentRun]:
    run = session.get(ExperimentRun, run_id)
    if run is None:
        return None
    run.exit_code = int(exit_code)
    run.finished_at = datetime.utcnow()
    session.flush()
    return run


def list_runs(session: Session, config_hash: Optional[str] = None) -> list:
    stmt = select(ExperimentRun).order_by(ExperimentRun.id)
    if config_hash:
        stmt = stmt.where(ExperimentRun.config_hash == config_hash)
    return list(session.scalars(stmt).all())
