"""On-disk cache of cell solutions between CLI runs.

Each solve is an ``.npz`` (arrays) plus a ``.csv`` (y, ρ, φ columns for
inspection); the SQL index maps (model, variant, x, t, grid hash, backend) to
the file stem.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from sqlalchemy.orm import Session

from cells.grid import FastGrid
from cells.solver import CellSolution
from db.registry import lookup_cell, record_cell, x_key
from utils import fmt_row

logger = logging.getLogger(__name__)


def model_cache_key(model) -> str:
    """Name plus a digest of the builder parameters (ε excluded: cells do not depend on it)."""
    params = json.dumps(sorted((k, float(v)) for k, v in (model.params or {}).items()))
    return f"{model.name}:{hashlib.sha1(params.encode()).hexdigest()[:10]}"


class CellStore:
    def __init__(self, root, session_factory: Callable[[], Session]):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._session_factory = session_factory

    def _stem(self, model_key: str, variant: str, sol: CellSolution) -> str:
        raw = f"{model_key}|{variant}|{x_key(sol.x)}|{sol.t!r}|{sol.grid.key}|{sol.backend}"
        return "cell-" + hashlib.sha1(raw.encode()).hexdigest()[:20]

    def save(self, model_key: str, sol: CellSolution, variant: str = "") -> str:
        stem = self._stem(model_key, variant, sol)
        arrays = {
            "x": sol.x,
            "t": np.array(sol.t),
            "lo": sol.grid.lo,
            "hi": sol.grid.hi,
            "nodes": np.array(sol.grid.nodes),
            "rho": sol.rho,
            "phi": sol.phi,
            "diag_keys": np.array(sorted(sol.diagnostics), dtype=str),
            "diag_values": np.array([sol.diagnostics[k] for k in sorted(sol.diagnostics)], float),
        }
        if sol.phi_tilde is not None:
            arrays["phi_tilde"] = sol.phi_tilde
        if sol.phi_m1 is not None:
            arrays["phi_m1"] = sol.phi_m1
        np.savez(self.root / f"{stem}.npz", backend=np.array(sol.backend), **arrays)
        self._write_csv(self.root / f"{stem}.csv", sol)
        with self._session_factory() as session:
            record_cell(session, model_key, sol.x, sol.t, sol.grid.key, sol.backend, stem, variant)
            session.commit()
        return stem

    @staticmethod
    def _write_csv(path: Path, sol: CellSolution) -> None:
        n = sol.grid.n
        phi = sol.phi.reshape(sol.grid.size, -1)
        header = [f"y{k + 1}" for k in range(n)] + ["rho"] + [f"phi{j + 1}" for j in range(phi.shape[1])]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(sol.grid.size):
                writer.writerow(fmt_row([*sol.grid.points[i], sol.rho[i], *phi[i]]))

    def load(self, model_key: str, x, t: float, grid: FastGrid, backend: str, variant: str = "") -> Optional[CellSolution]:
        with self._session_factory() as session:
            entry = lookup_cell(session, model_key, np.ravel(x), t, grid.key, backend, variant)
            stem = entry.file_stem if entry is not None else None
        if stem is None:
            return None
        path = self.root / f"{stem}.npz"
        if not path.exists():
            logger.warning("Cell cache index points at missing file %s; solving again", path.name)
            return None
        with np.load(path) as data:
            diag = dict(zip(data["diag_keys"].tolist(), data["diag_values"].tolist()))
            return CellSolution(
                x=np.array(data["x"]),
                t=float(data["t"]),
                grid=grid,
                rho=np.array(data["rho"]),
                phi=np.array(data["phi"]),
                backend=str(data["backend"]),
                phi_tilde=np.array(data["phi_tilde"]) if "phi_tilde" in data.files else None,
                phi_m1=np.array(data["phi_m1"]) if "phi_m1" in data.files else None,
                diagnostics=diag,
            )
