"""Functional accumulators shared by the multiscale and limit engines.

Integrals are accumulated at left endpoints on the run's own increments;
boundary terms and combinations (e.g. F2 = F − F1) are added when values are
read, so per-path additivity holds exactly.
"""
from __future__ import annotations

from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from paths.records import StoppingRule
from paths.state import StepState


def pair_key(a: str, b: str) -> str:
    return f"{a}:{b}"


class Ledger:
    def __init__(
        self,
        specs: Sequence,
        covariations: Iterable[Tuple[str, str]],
        size: int,
        record_steps: np.ndarray,
        rule: StoppingRule,
        x0: np.ndarray,
        y0: Optional[np.ndarray] = None,
    ):
        self.specs = list(specs)
        self.primary = [s for s in self.specs if s.bundle is not None]
        self.combos = [s for s in self.specs if s.bundle is None]
        self.names = [s.name for s in self.specs]
        self.pairs = [tuple(p) for p in covariations]
        known = set(self.names)
        for a, b in self.pairs:
            if a not in known or b not in known:
                raise KeyError(f"covariation pair ({a}, {b}) names an unknown functional")
        self.size = size
        self.rule = rule
        self.x0 = x0.copy()
        self.y0 = None if y0 is None else y0.copy()
        self.acc = {s.name: np.zeros(size) for s in self.primary}
        self.record_steps = np.asarray(record_steps)
        self._slot = {int(k): i for i, k in enumerate(self.record_steps)}
        n_rec = self.record_steps.size
        self.times = np.zeros(n_rec)
        self.x_rec = np.zeros((size, n_rec, x0.shape[1]))
        self.y_rec = None if y0 is None else np.zeros((size, n_rec, y0.shape[1]))
        self.values = {name: np.zeros((size, n_rec)) for name in self.names}
        self.cov = {pair_key(a, b): np.zeros((size, n_rec)) for a, b in self.pairs}
        self._cov_running = {pair_key(a, b): np.zeros(size) for a, b in self.pairs}
        self._tracked = sorted({n for p in self.pairs for n in p})
        self._prev_exp: Dict[str, np.ndarray] = {}
        self.stopped = np.zeros(size, dtype=bool)
        self.tau = np.zeros(size)
        self.at_tau = {name: np.zeros(size) for name in self.names}
        self.x_at_tau = x0.copy()

    # -- reading -------------------------------------------------------------
    def read(self, x, y, t: float, rows=None, names: Optional[List[str]] = None) -> Dict[str, np.ndarray]:
        rows = slice(None) if rows is None else rows
        want = set(names) if names is not None else None
        out: Dict[str, np.ndarray] = {}
        for spec in self.primary:
            val = self.acc[spec.name][rows]
            boundary = spec.bundle.boundary
            if boundary is not None and (want is None or spec.name in want or self._needed_by(spec.name, want)):
                y0 = None if self.y0 is None else self.y0[rows]
                yy = None if y is None else y[rows]
                val = val + boundary(self.x0[rows], y0, x[rows], yy, t)
            out[spec.name] = val
        for spec in self.combos:
            total = 0.0
            for name, coef in spec.combination:
                total = total + coef * out[name]
            out[spec.name] = total
        if want is not None:
            return {k: out[k] for k in want}
        return out

    def _needed_by(self, name: str, want) -> bool:
        for spec in self.combos:
            if spec.name in want and any(n == name for n, _ in spec.combination):
                return True
        return False

    # -- stepping ------------------------------------------------------------
    def begin(self, x, y, t: float) -> None:
        if self._tracked:
            vals = self.read(x, y, t, names=self._tracked)
            self._prev_exp = {k: np.exp(-v) for k, v in vals.items()}
        hit = self.rule.exited(x)
        if hit.any():
            self._snapshot(hit, x, y, t)
        self.record(0, x, y, t)

    def accumulate(self, state: StepState, dW: np.ndarray, dt: float, mask: np.ndarray) -> None:
        for spec in self.primary:
            bundle = spec.bundle
            inc = np.zeros(self.size)
            if bundle.dw is not None:
                inc += np.einsum("np,np->n", bundle.dw(state), dW)
            if bundle.dt is not None:
                inc += bundle.dt(state) * dt
            if bundle.quad is not None:
                K = bundle.quad(state)
                inc += np.einsum("npq,np,nq->n", K, dW, dW) - np.trace(K, axis1=1, axis2=2) * dt
            self.acc[spec.name] = np.where(mask, self.acc[spec.name] + inc, self.acc[spec.name])

    def after_step(self, step: int, x, y, t: float, active: np.ndarray) -> None:
        if self._tracked:
            vals = self.read(x, y, t, names=self._tracked)
            now = {k: np.exp(-v) for k, v in vals.items()}
            for a, b in self.pairs:
                key = pair_key(a, b)
                d = (now[a] - self._prev_exp[a]) * (now[b] - self._prev_exp[b])
                self._cov_running[key] += np.where(active, d, 0.0)
            self._prev_exp = now
        hit = ~self.stopped & active & self.rule.exited(x)
        if hit.any():
            self._snapshot(hit, x, y, t)
        if step in self._slot:
            self.record(step, x, y, t)

    def _snapshot(self, rows: np.ndarray, x, y, t: float) -> None:
        vals = self.read(x, y, t, rows=rows)
        for name, v in vals.items():
            self.at_tau[name][rows] = v
        self.tau[rows] = t
        self.x_at_tau[rows] = x[rows]
        self.stopped |= rows

    def record(self, step: int, x, y, t: float) -> None:
        k = self._slot[step]
        self.times[k] = t
        self.x_rec[:, k, :] = x
        if self.y_rec is not None:
            self.y_rec[:, k, :] = y
        for name, v in self.read(x, y, t).items():
            self.values[name][:, k] = v
        for key, running in self._cov_running.items():
            self.cov[key][:, k] = running

    def finish(self, x, y, t: float) -> None:
        rest = ~self.stopped
        if rest.any():
            self._snapshot(rest, x, y, t)
