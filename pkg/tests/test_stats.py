"""Estimators and verdicts on hand-built trajectory records."""
import numpy as np
import pytest

from errors import EstimationError
from harness.stats import (
    EnsembleStats,
    Thresholds,
    Verdict,
    covariation_check,
    estimate_mean_ci,
    ift_check,
    martingale_check,
    second_law_check,
    summarize_functional,
    variance_check,
)
from paths.records import StoppingRule, TrajectoryRecord

TIMES = np.array([0.0, 0.25, 0.5, 0.75, 1.0])


def _record(values, x=None, exit_flag=None, covariation=None, rule=None):
    n = next(iter(values.values())).shape[0]
    if x is None:
        x = np.zeros((n, TIMES.size, 1))
    return TrajectoryRecord(
        path_index=np.arange(n),
        times=TIMES,
        x=x,
        values=values,
        rule=rule or StoppingRule(),
        tau=np.full(n, 1.0),
        stopped={name: v[:, -1] for name, v in values.items()},
        x_at_tau=x[:, -1, :],
        exit_flag=np.zeros(n, dtype=bool) if exit_flag is None else exit_flag,
        exit_time=np.full(n, np.nan),
        dt=0.25,
        n_steps=4,
        noise_sq=np.full((n, 1), 1.0),
        covariation=covariation or {},
    )


def _gaussian_exact(n, seed=0):
    """Values A with e^{-A} a martingale: A_t = -W_t + t/2 on the checkpoint grid."""
    rng = np.random.default_rng(seed)
    dW = rng.standard_normal((n, TIMES.size - 1)) * np.sqrt(np.diff(TIMES))
    W = np.concatenate([np.zeros((n, 1)), np.cumsum(dW, axis=1)], axis=1)
    return -W + 0.5 * TIMES, W


def test_estimate_mean_ci():
    assert estimate_mean_ci([1.0, 1.0, 1.0, 1.0]) == (1.0, 0.0, (1.0, 1.0))
    mean, se, (lo, hi) = estimate_mean_ci([0.0, 2.0])
    assert mean == 1.0
    assert se == pytest.approx(1.0)
    assert lo == pytest.approx(-0.96)
    assert hi == pytest.approx(2.96)


def test_estimate_drops_non_finite():
    mean, _, _ = estimate_mean_ci([1.0, np.nan, 3.0, np.inf])
    assert mean == 2.0
    with pytest.raises(EstimationError):
        estimate_mean_ci([np.nan, np.inf])
    with pytest.raises(EstimationError):
        estimate_mean_ci([1.0])


def test_ift_passes_on_exact_weights():
    values, _ = _gaussian_exact(20000)
    verdict = ift_check(_record({"A": values}), "A")
    assert verdict.passed
    assert verdict.status == "PASS"
    assert verdict.statistic == pytest.approx(1.0, abs=0.05)
    assert verdict.details["exit_fraction"] == 0.0


def test_ift_fails_on_biased_weights():
    values, _ = _gaussian_exact(20000)
    verdict = ift_check(_record({"A": values - 0.3}), "A")
    assert not verdict.passed
    assert verdict.statistic == pytest.approx(np.exp(0.3), rel=0.05)


def test_ift_invalid_when_too_many_paths_exit():
    values, _ = _gaussian_exact(1000)
    exits = np.zeros(1000, dtype=bool)
    exits[:50] = True
    verdict = ift_check(_record({"A": values}, exit_flag=exits), "A")
    assert not verdict.passed
    assert "exit fraction" in verdict.note


def test_ift_with_no_finite_weights():
    values = np.full((10, TIMES.size), -np.inf)
    verdict = ift_check(_record({"A": values}), "A")
    assert not verdict.passed
    assert "finite" in verdict.note


def test_martingale_zero_increments_pass():
    verdict = martingale_check(_record({"A": np.zeros((50, TIMES.size))}), "A")
    assert verdict.passed
    assert verdict.statistic == 0.0


def test_martingale_detects_state_dependent_drift():
    n = 4000
    rng = np.random.default_rng(3)
    x = np.repeat(rng.standard_normal((n, 1, 1)), TIMES.size, axis=1)
    # e^{-A} drifts by x/2 per unit time: the slope on x is not zero
    weights = 3.0 + 0.5 * x[:, :, 0] * TIMES + 0.01 * rng.standard_normal((n, TIMES.size))
    values = -np.log(np.abs(weights) + 1e-3)
    verdict = martingale_check(_record({"A": values}, x=x), "A")
    assert not verdict.passed
    assert verdict.statistic > 10.0


def test_martingale_passes_on_exact_weights():
    values, W = _gaussian_exact(5000, seed=8)
    verdict = martingale_check(_record({"A": values}, x=W[:, :, None]), "A", thresholds=Thresholds(se_multiplier=4.0))
    assert verdict.passed, verdict.details


def test_covariation_check():
    n = 2000
    rng = np.random.default_rng(4)
    centred = np.cumsum(rng.standard_normal((n, TIMES.size)), axis=1)
    shifted = centred + 1.0
    values = {"A": np.zeros((n, TIMES.size))}
    ok = covariation_check(_record(values, covariation={"A:B": centred}), ("A", "B"))
    bad = covariation_check(_record(values, covariation={"A:B": shifted}), ("A", "B"))
    zero = covariation_check(_record(values, covariation={"A:B": np.zeros((n, TIMES.size))}), ("A", "B"))
    assert ok.functional == "A:B"
    assert not bad.passed
    assert zero.passed


def test_second_law():
    up = np.tile(np.linspace(0.0, 1.0, TIMES.size), (100, 1))
    assert second_law_check(_record({"S": up}), "S").passed
    assert not second_law_check(_record({"S": -up}), "S").passed
    nan = second_law_check(_record({"S": np.full((5, TIMES.size), np.nan)}), "S")
    assert not nan.passed
    assert nan.note


def test_variance_check():
    rng = np.random.default_rng(5)
    spread = np.repeat(rng.standard_normal((500, 1)), TIMES.size, axis=1)
    assert variance_check(_record({"A": spread}), "A").passed
    assert not variance_check(_record({"A": 1e-9 * spread}), "A", Thresholds(anomalous_multiplier=1e12)).passed
    assert not variance_check(_record({"A": spread[:1]}), "A").passed


def test_summary_skips_exited_paths():
    values = np.tile(np.arange(4.0)[:, None], (1, TIMES.size))
    exits = np.array([False, False, False, True])
    est = summarize_functional(_record({"A": values}, exit_flag=exits), "A", epsilon=0.1)
    assert est.estimate == 1.0
    assert est.n_paths == 3
    assert est.exit_count == 1


def test_exit_code_counts_gated_failures_only():
    stats = EnsembleStats()
    assert stats.exit_code == 0
    stats.verdicts.append(Verdict("ift", "A", "fixed_time", passed=False, gated=False))
    assert stats.exit_code == 0
    assert stats.verdicts[0].status == "DIAG"
    stats.verdicts.append(Verdict("ift", "B", "fixed_time", passed=False))
    assert stats.exit_code == 1
    assert [v.functional for v in stats.gated_failures()] == ["B"]
