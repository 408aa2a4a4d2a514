"""Ensemble statistics and the verdicts of the fluctuation-theorem battery.

Checks return ``Verdict`` objects and never raise; only a sample with no
finite values at all is an estimation error.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import statsmodels.api as sm
from scipy.stats import trim_mean

from errors import EstimationError
from paths.ledger import pair_key
from paths.records import FIXED_TIME, StoppingRule, TrajectoryRecord, apply_stopping, checkpoint_indices

logger = logging.getLogger(__name__)

Z95 = 1.96
CHECKPOINTS = (0.25, 0.5, 0.75, 1.0)
BASIS = ("1", "x", "x2")

IFT = "ift"
MARTINGALE = "martingale"
COVARIATION = "covariation"
CONVERGENCE = "convergence"
SECOND_LAW = "second_law"
ANOMALOUS = "anomalous_variance"


@dataclass(frozen=True)
class Thresholds:
    se_multiplier: float = 3.0
    max_se: float = 0.05
    exit_fraction_max: float = 0.01
    trim_fraction: float = 0.001
    anomalous_multiplier: float = 10.0

    def as_dict(self) -> Dict[str, float]:
        return {
            "se_multiplier": self.se_multiplier,
            "max_se": self.max_se,
            "exit_fraction_max": self.exit_fraction_max,
            "trim_fraction": self.trim_fraction,
            "anomalous_multiplier": self.anomalous_multiplier,
        }


@dataclass
class Verdict:
    check: str
    functional: str
    rule: str
    passed: bool
    gated: bool = True
    statistic: float = float("nan")
    se: float = float("nan")
    n_paths: int = 0
    thresholds: Dict[str, float] = field(default_factory=dict)
    details: Dict[str, float] = field(default_factory=dict)
    note: str = ""

    @property
    def status(self) -> str:
        if not self.gated:
            return "DIAG"
        return "PASS" if self.passed else "FAIL"

    def as_dict(self) -> dict:
        return {
            "check": self.check,
            "functional": self.functional,
            "rule": self.rule,
            "status": self.status,
            "passed": self.passed,
            "gated": self.gated,
            "statistic": self.statistic,
            "se": self.se,
            "n_paths": self.n_paths,
            "thresholds": dict(self.thresholds),
            "details": dict(self.details),
            "note": self.note,
        }


@dataclass
class FunctionalEstimate:
    functional: str
    rule: str
    estimate: float
    se: float
    n_paths: int
    exit_count: int
    dt: float
    epsilon: float
    flags: Tuple[str, ...] = ()


@dataclass
class EnsembleStats:
    estimates: List[FunctionalEstimate] = field(default_factory=list)
    verdicts: List[Verdict] = field(default_factory=list)
    residuals: List[dict] = field(default_factory=list)
    tables: Dict[str, List[dict]] = field(default_factory=dict)

    def gated_failures(self) -> List[Verdict]:
        return [v for v in self.verdicts if v.gated and not v.passed]

    @property
    def exit_code(self) -> int:
        return 1 if self.gated_failures() else 0


def estimate_mean_ci(samples) -> Tuple[float, float, Tuple[float, float]]:
    """Sample mean, SE = s/√n and the normal 95% interval. Non-finite samples are dropped."""
    arr = np.asarray(samples, float).ravel()
    finite = arr[np.isfinite(arr)]
    if finite.size == 0:
        raise EstimationError(f"no finite samples among {arr.size}")
    if finite.size < 2:
        raise EstimationError(f"need at least 2 finite samples, got {finite.size}")
    if finite.size < arr.size:
        logger.warning("Dropped %s non-finite samples of %s", arr.size - finite.size, arr.size)
    mean = float(finite.mean())
    se = float(finite.std(ddof=1) / np.sqrt(finite.size))
    return mean, se, (mean - Z95 * se, mean + Z95 * se)


def stopped_values(batch: TrajectoryRecord, functional: str, rule: Optional[StoppingRule] = None) -> np.ndarray:
    """Functional values at τ of ``rule`` on the non-exited paths."""
    rule = rule or batch.rule
    _, at_tau = apply_stopping(batch, rule)
    return at_tau[functional][batch.kept()]


def summarize_functional(batch: TrajectoryRecord, functional: str, rule: Optional[StoppingRule] = None, epsilon: float = float("nan"), flags=()) -> FunctionalEstimate:
    rule = rule or batch.rule
    vals = stopped_values(batch, functional, rule)
    try:
        mean, se, _ = estimate_mean_ci(vals)
    except EstimationError as exc:
        logger.warning("No estimate for %s under %s: %s", functional, rule.name, exc)
        mean, se = float("nan"), float("nan")
    return FunctionalEstimate(
        functional=functional,
        rule=rule.name,
        estimate=mean,
        se=se,
        n_paths=int(vals.size),
        exit_count=int(batch.exit_flag.sum()),
        dt=batch.dt,
        epsilon=epsilon,
        flags=tuple(sorted(set(flags) | set(batch.flags))),
    )


def ift_check(
    batch: TrajectoryRecord,
    functional: str,
    rule: Optional[StoppingRule] = None,
    thresholds: Thresholds = Thresholds(),
    gated: bool = True,
) -> Verdict:
    """PASS iff |mean(e^{−A_τ}) − 1| ≤ k·SE and SE ≤ max_se on a valid run."""
    rule = rule or batch.rule
    weights = np.exp(-stopped_values(batch, functional, rule))
    limits = {"se_multiplier": thresholds.se_multiplier, "max_se": thresholds.max_se, "exit_fraction_max": thresholds.exit_fraction_max}
    try:
        mean, se, (lo, hi) = estimate_mean_ci(weights)
    except EstimationError as exc:
        return Verdict(IFT, functional, rule.name, False, gated, n_paths=int(weights.size), thresholds=limits, note=str(exc))
    finite = weights[np.isfinite(weights)]
    total = float(finite.sum())
    details = {
        "ci_lo": lo,
        "ci_hi": hi,
        "trimmed_mean": float(trim_mean(finite, thresholds.trim_fraction)),
        "max_weight_share": float(finite.max() / total) if total > 0 else float("nan"),
        "exit_fraction": batch.exit_fraction,
    }
    valid = batch.exit_fraction <= thresholds.exit_fraction_max
    passed = valid and abs(mean - 1.0) <= thresholds.se_multiplier * se and se <= thresholds.max_se
    note = "" if valid else "run invalid: exit fraction above limit"
    return Verdict(IFT, functional, rule.name, bool(passed), gated, mean, se, int(finite.size), limits, details, note)


def _stopped_path(batch: TrajectoryRecord, functional: str, k: int, rule: StoppingRule):
    """(x, value) of the process stopped at τ, read at record index ``k``."""
    rows = batch.kept()
    x = batch.x[rows, k, :]
    val = batch.values[functional][rows, k]
    if rule.kind == FIXED_TIME:
        return x, val
    tau, at_tau = apply_stopping(batch, rule)
    if rule == batch.rule:
        x_tau = batch.x_at_tau[rows]
    else:
        idx = np.array([batch.index_at(t) for t in tau[rows]])
        x_tau = batch.x[rows][np.arange(idx.size), idx, :]
    done = tau[rows] <= batch.times[k]
    return np.where(done[:, None], x_tau, x), np.where(done, at_tau[functional][rows], val)


def _design(x: np.ndarray, basis: Sequence[str]) -> np.ndarray:
    cols = []
    for name in basis:
        if name == "1":
            cols.append(np.ones((x.shape[0], 1)))
        elif name == "x":
            cols.append(x)
        elif name == "x2":
            cols.append(x * x)
        else:
            raise ValueError(f"unknown basis function {name!r}")
    return np.concatenate(cols, axis=1)


def martingale_check(
    batch: TrajectoryRecord,
    functional: str,
    checkpoints: Sequence[float] = CHECKPOINTS,
    basis: Sequence[str] = BASIS,
    rule: Optional[StoppingRule] = None,
    thresholds: Thresholds = Thresholds(),
    gated: bool = True,
) -> Verdict:
    """Regress increments of e^{−A} between checkpoints on functions of the current state.

    OLS with HC0 standard errors; PASS iff every coefficient of every
    checkpoint pair lies within k·SE of 0.
    """
    rule = rule or StoppingRule()
    limits = {"se_multiplier": thresholds.se_multiplier}
    idx = checkpoint_indices(batch, list(checkpoints))
    worst = 0.0
    details: Dict[str, float] = {}
    for a, b in zip(idx[:-1], idx[1:]):
        x_a, v_a = _stopped_path(batch, functional, a, rule)
        _, v_b = _stopped_path(batch, functional, b, rule)
        inc = np.exp(-v_b) - np.exp(-v_a)
        ok = np.isfinite(inc) & np.all(np.isfinite(x_a), axis=1)
        inc, X = inc[ok], _design(x_a[ok], basis)
        label = f"{batch.times[a]:.4g}->{batch.times[b]:.4g}"
        if inc.size <= X.shape[1] or np.max(np.abs(inc)) == 0.0:
            details[label] = 0.0
            continue
        fit = sm.OLS(inc, X).fit(cov_type="HC0")
        params, bse = np.asarray(fit.params), np.asarray(fit.bse)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(bse > 0, np.abs(params) / bse, np.where(params == 0, 0.0, np.inf))
        details[label] = float(np.max(z))
        worst = max(worst, details[label])
    passed = worst <= thresholds.se_multiplier
    return Verdict(MARTINGALE, functional, rule.name, bool(passed), gated, worst, float("nan"), int(batch.kept().sum()), limits, details)


def covariation_check(
    batch: TrajectoryRecord,
    pair: Tuple[str, str],
    checkpoints: Sequence[float] = CHECKPOINTS,
    thresholds: Thresholds = Thresholds(),
    gated: bool = True,
) -> Verdict:
    """Realized covariation Σ ΔM ΔN of e^{−A}, e^{−B}: ensemble mean within k·SE of 0."""
    key = pair_key(*pair)
    limits = {"se_multiplier": thresholds.se_multiplier}
    rows = batch.kept()
    details: Dict[str, float] = {}
    passed = True
    last_mean, last_se = 0.0, 0.0
    for k in checkpoint_indices(batch, list(checkpoints)):
        sample = batch.covariation[key][rows, k]
        label = f"{batch.times[k]:.4g}"
        if np.all(sample == 0.0):
            mean, se = 0.0, 0.0
        else:
            mean, se, _ = estimate_mean_ci(sample)
        details[f"mean@{label}"] = mean
        details[f"se@{label}"] = se
        passed = passed and abs(mean) <= thresholds.se_multiplier * se
        last_mean, last_se = mean, se
    return Verdict(COVARIATION, key, batch.rule.name, bool(passed), gated, last_mean, last_se, int(rows.sum()), limits, details)


def second_law_check(batch: TrajectoryRecord, functional: str, rule: Optional[StoppingRule] = None, thresholds: Thresholds = Thresholds(), gated: bool = True) -> Verdict:
    """Mean of an entropy-type functional ≥ −k·SE."""
    rule = rule or batch.rule
    limits = {"se_multiplier": thresholds.se_multiplier}
    try:
        mean, se, _ = estimate_mean_ci(stopped_values(batch, functional, rule))
    except EstimationError as exc:
        return Verdict(SECOND_LAW, functional, rule.name, False, gated, thresholds=limits, note=str(exc))
    passed = mean >= -thresholds.se_multiplier * se
    return Verdict(SECOND_LAW, functional, rule.name, bool(passed), gated, mean, se, int(batch.kept().sum()), limits)


def variance_check(batch: TrajectoryRecord, functional: str, thresholds: Thresholds = Thresholds(), gated: bool = False) -> Verdict:
    """Sample variance of A_T against the SE of that variance estimate.

    Used to show an anomalous part is genuinely present; SE from the
    fourth central moment.
    """
    vals = batch.final(functional)
    vals = vals[np.isfinite(vals)]
    n = vals.size
    limits = {"anomalous_multiplier": thresholds.anomalous_multiplier}
    if n < 2:
        return Verdict(ANOMALOUS, functional, FIXED_TIME, False, gated, n_paths=n, thresholds=limits, note="too few paths")
    var = float(vals.var(ddof=1))
    m4 = float(np.mean((vals - vals.mean()) ** 4))
    se = float(np.sqrt(max(m4 - var**2, 0.0) / n))
    passed = var > thresholds.anomalous_multiplier * se
    return Verdict(ANOMALOUS, functional, FIXED_TIME, bool(passed), gated, var, se, n, limits)
