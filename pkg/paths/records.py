"""Trajectory batches, stopping rules and their merge."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigurationError

logger = logging.getLogger(__name__)

FIXED_TIME = "fixed_time"
FIRST_EXIT = "first_exit"
RULE_KINDS = (FIXED_TIME, FIRST_EXIT)
DEFAULT_RECORDS = 200


@dataclass(frozen=True)
class StoppingRule:
    """τ = T, or τ = min(first time some x_i ≤ lo_i or x_i ≥ hi_i, T)."""

    kind: str = FIXED_TIME
    lo: Optional[Tuple[float, ...]] = None
    hi: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.kind not in RULE_KINDS:
            raise ConfigurationError(f"unknown stopping rule {self.kind!r}; known: {list(RULE_KINDS)}")
        if self.kind == FIRST_EXIT and (self.lo is None or self.hi is None):
            raise ConfigurationError("first_exit rule needs lo and hi bounds")

    @classmethod
    def parse(cls, text: str, m: int = 1) -> "StoppingRule":
        """``fixed_time`` or ``first_exit:lo,hi`` (scalar bounds apply to every slow axis)."""
        text = (text or FIXED_TIME).strip()
        if text == FIXED_TIME:
            return cls()
        kind, _, bounds = text.partition(":")
        if kind.strip() != FIRST_EXIT:
            raise ConfigurationError(f"unknown stopping rule {text!r}")
        parts = [float(v) for v in bounds.split(",") if v.strip()]
        if len(parts) == 1:
            parts = [-abs(parts[0]), abs(parts[0])]
        if len(parts) != 2:
            raise ConfigurationError(f"first_exit bounds must be 'lo,hi' or a radius, got {bounds!r}")
        return cls(FIRST_EXIT, lo=(parts[0],) * m, hi=(parts[1],) * m)

    @property
    def name(self) -> str:
        if self.kind == FIXED_TIME:
            return FIXED_TIME
        return f"{FIRST_EXIT}[{self.lo[0]:g},{self.hi[0]:g}]"

    def exited(self, x: np.ndarray) -> np.ndarray:
        if self.kind == FIXED_TIME:
            return np.zeros(x.shape[0], dtype=bool)
        lo = np.asarray(self.lo, float)[: x.shape[1]]
        hi = np.asarray(self.hi, float)[: x.shape[1]]
        return np.any((x <= lo) | (x >= hi), axis=1)


@dataclass
class TrajectoryRecord:
    """A batch of paths. Arrays lead with the path axis.

    ``values[name]`` are functional values (integral plus boundary) at the
    record times; ``stopped[name]`` at τ of ``rule``. Exited paths (left the
    truncated domain) are frozen and flagged.
    """

    path_index: np.ndarray
    times: np.ndarray
    x: np.ndarray
    values: Dict[str, np.ndarray]
    rule: StoppingRule
    tau: np.ndarray
    stopped: Dict[str, np.ndarray]
    x_at_tau: np.ndarray
    exit_flag: np.ndarray
    exit_time: np.ndarray
    dt: float
    n_steps: int
    noise_sq: np.ndarray
    y: Optional[np.ndarray] = None
    covariation: Dict[str, np.ndarray] = field(default_factory=dict)
    flags: Dict[str, str] = field(default_factory=dict)
    kind: str = "multiscale"

    @property
    def n_paths(self) -> int:
        return int(self.path_index.shape[0])

    @property
    def exit_fraction(self) -> float:
        return float(self.exit_flag.mean()) if self.n_paths else 0.0

    def valid(self, max_exit_fraction: float = 0.01) -> bool:
        return self.exit_fraction <= max_exit_fraction

    def kept(self) -> np.ndarray:
        return ~self.exit_flag

    def final(self, name: str) -> np.ndarray:
        return self.values[name][self.kept(), -1]

    def at_tau(self, name: str) -> np.ndarray:
        return self.stopped[name][self.kept()]

    def noise_variance(self) -> np.ndarray:
        """Per-component empirical variance of one increment divided by dt."""
        if not self.n_steps:
            return np.zeros(self.noise_sq.shape[1])
        return self.noise_sq.sum(axis=0) / (self.n_paths * self.n_steps * self.dt)

    def index_at(self, t: float) -> int:
        return int(np.argmin(np.abs(self.times - t)))


def merge(records: Sequence[TrajectoryRecord]) -> TrajectoryRecord:
    """Concatenate batches along the path axis (order of ``records`` kept)."""
    records = [r for r in records if r is not None]
    if not records:
        raise ValueError("nothing to merge")
    if len(records) == 1:
        return records[0]
    head = records[0]

    def cat(name):
        return np.concatenate([getattr(r, name) for r in records], axis=0)

    def cat_dict(name):
        keys = getattr(head, name).keys()
        return {k: np.concatenate([getattr(r, name)[k] for r in records], axis=0) for k in keys}

    flags: Dict[str, str] = {}
    for r in records:
        flags.update(r.flags)
    return TrajectoryRecord(
        path_index=cat("path_index"),
        times=head.times,
        x=cat("x"),
        values=cat_dict("values"),
        rule=head.rule,
        tau=cat("tau"),
        stopped=cat_dict("stopped"),
        x_at_tau=cat("x_at_tau"),
        exit_flag=cat("exit_flag"),
        exit_time=cat("exit_time"),
        dt=head.dt,
        n_steps=head.n_steps,
        noise_sq=cat("noise_sq"),
        y=cat("y") if head.y is not None else None,
        covariation=cat_dict("covariation"),
        flags=flags,
        kind=head.kind,
    )


def record_steps(n_steps: int, n_records: int = DEFAULT_RECORDS, quarters: bool = True) -> np.ndarray:
    """Step indices at which paths are recorded: about ``n_records`` evenly spaced
    plus the quarter points used by the martingale checks."""
    steps = np.round(np.linspace(0, n_steps, min(n_records, max(n_steps, 1)) + 1)).astype(int)
    if quarters:
        steps = np.concatenate([steps, np.round(np.array([0.25, 0.5, 0.75, 1.0]) * n_steps).astype(int)])
    return np.unique(steps)


def apply_stopping(batch: TrajectoryRecord, rule: StoppingRule) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """τ and functional values at τ for every path.

    The batch's own rule was tracked at step resolution while simulating; any
    other rule is applied on the record grid.
    """
    if rule == batch.rule:
        return batch.tau, dict(batch.stopped)
    n = batch.n_paths
    last = batch.times.size - 1
    idx = np.full(n, last)
    if rule.kind != FIXED_TIME:
        hit = np.stack([rule.exited(batch.x[:, k, :]) for k in range(batch.times.size)], axis=1)
        first = np.argmax(hit, axis=1)
        idx = np.where(hit.any(axis=1), first, last)
    rows = np.arange(n)
    return batch.times[idx], {name: vals[rows, idx] for name, vals in batch.values.items()}


def checkpoint_indices(batch: TrajectoryRecord, fractions: List[float]) -> List[int]:
    T = batch.times[-1]
    return [batch.index_at(q * T) for q in fractions]


DUMP_WARN_BYTES = 100 * 1024 * 1024


def dump_paths(batch: TrajectoryRecord, path) -> int:
    """Write every per-path array of ``batch`` to one ``.npz``; returns bytes written."""
    arrays = {
        "path_index": batch.path_index,
        "times": batch.times,
        "x": batch.x,
        "tau": batch.tau,
        "exit_flag": batch.exit_flag,
        "exit_time": batch.exit_time,
    }
    if batch.y is not None:
        arrays["y"] = batch.y
    arrays.update({f"value_{k}": v for k, v in batch.values.items()})
    arrays.update({f"tau_{k}": v for k, v in batch.stopped.items()})
    arrays.update({f"cov_{k.replace(':', '_')}": v for k, v in batch.covariation.items()})
    size = sum(a.nbytes for a in arrays.values())
    if size > DUMP_WARN_BYTES:
        logger.warning("Path dump %s is large: %.0f MB", path, size / 2**20)
    np.savez_compressed(path, **arrays)
    return size
