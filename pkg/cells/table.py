"""Table of cell solutions keyed by the frozen slow point and time."""
from __future__ import annotations

import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from cells.cache import CellStore, model_cache_key
from cells.grid import FastGrid
from cells.solver import CellSolution, solve_cell
from errors import DependencyError
from model.coefficients import MultiscaleModel
from settings import get_worker_count

logger = logging.getLogger(__name__)

Key = Tuple[Tuple[float, ...], float]


def cell_key(x, t: float) -> Key:
    return tuple(round(float(v), 12) for v in np.ravel(x)), round(float(t), 12)


class CellTable:
    """Solves, caches and serves cells for one model, grid and backend.

    ``f_tilde`` adds the φ̃ column; ``variant`` names it in the file cache.
    """

    def __init__(
        self,
        model: MultiscaleModel,
        grid: FastGrid,
        backend: str,
        f_tilde=None,
        variant: str = "",
        store: Optional[CellStore] = None,
        workers: Optional[int] = None,
    ):
        self.model = model
        self.grid = grid
        self.backend = backend
        self.f_tilde = f_tilde
        self.variant = variant if f_tilde is not None else ""
        self.store = store
        self.workers = workers or get_worker_count()
        self._cells: Dict[Key, CellSolution] = {}
        self._lock = threading.Lock()
        self._model_key = model_cache_key(model)

    def __len__(self) -> int:
        return len(self._cells)

    def __contains__(self, item) -> bool:
        x, t = item
        return cell_key(x, t) in self._cells

    def get(self, x, t: float) -> CellSolution:
        key = cell_key(x, t)
        with self._lock:
            sol = self._cells.get(key)
        if sol is None:
            raise DependencyError(f"no cell solution at x={list(key[0])}, t={key[1]}")
        return sol

    def put(self, sol: CellSolution) -> None:
        with self._lock:
            self._cells[cell_key(sol.x, sol.t)] = sol

    def solve(self, x, t: float) -> CellSolution:
        key = cell_key(x, t)
        with self._lock:
            existing = self._cells.get(key)
        if existing is not None:
            return existing
        x_arr = np.asarray(key[0], float)
        sol = None
        if self.store is not None:
            sol = self.store.load(self._model_key, x_arr, key[1], self.grid, self.backend, self.variant)
            if sol is None:
                logger.debug("Cell cache miss at x=%s t=%s", list(key[0]), key[1])
        if sol is None:
            sol = solve_cell(self.model.coeffs, x_arr, key[1], self.grid, self.backend, self.f_tilde)
            if self.store is not None:
                self.store.save(self._model_key, sol, self.variant)
        self.put(sol)
        return sol

    def ensure(self, points: Iterable[Tuple[np.ndarray, float]]) -> int:
        """Solve every missing (x, t); returns how many were new."""
        todo = {}
        for x, t in points:
            key = cell_key(x, t)
            if key not in self._cells:
                todo[key] = (np.asarray(key[0], float), key[1])
        if not todo:
            return 0
        start = time.perf_counter()
        if self.workers > 1 and len(todo) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                list(pool.map(lambda item: self.solve(*item), todo.values()))
        else:
            for x, t in todo.values():
                self.solve(x, t)
        logger.info(
            "Cell table %s/%s: %s solves in %.1fs", self.model.name, self.backend, len(todo), time.perf_counter() - start
        )
        return len(todo)

    def cells(self):
        with self._lock:
            return list(self._cells.values())
