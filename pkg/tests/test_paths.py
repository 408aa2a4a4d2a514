"""Euler-Maruyama paths: reproducible noise, moments, stopping and the record grid."""
import numpy as np
import pytest

from errors import ConfigurationError
from model.catalog import build_model
from model.coefficients import LinearSDE
from model.comparable import shifted_forward
from paths.engine import check_time_step, chunk_indices, simulate_multiscale
from paths.gaussian import GaussianState, evolve_gaussian_moments, stationary_state
from paths.records import FIRST_EXIT, StoppingRule, apply_stopping, record_steps
from paths.rng import NoiseStream


def _ou_run(workers, seed=11):
    model = build_model("ou", epsilon=0.5, burn_in=0.1)
    comparable = shifted_forward(model.coeffs, 1.0)
    return simulate_multiscale(model, comparable, n_paths=40, dt=0.01, seed=seed, workers=workers)


def test_paths_do_not_depend_on_worker_count():
    one = _ou_run(workers=1)
    three = _ou_run(workers=3)
    assert np.array_equal(one.path_index, np.arange(40))
    assert np.array_equal(one.path_index, three.path_index)
    assert np.array_equal(one.x, three.x)
    assert np.array_equal(one.values["F_eps"], three.values["F_eps"])


def test_seed_changes_paths():
    assert not np.array_equal(_ou_run(workers=1, seed=1).x, _ou_run(workers=1, seed=2).x)


def test_noise_stream_initial_draw_first():
    stream = NoiseStream(3, [0, 1], dim=2)
    stream.increments(0.1)
    with pytest.raises(RuntimeError):
        stream.initial(2)


def test_noise_variance_is_dt():
    run = _ou_run(workers=2)
    assert run.noise_variance() == pytest.approx(np.ones(2), rel=0.1)


def test_brownian_slow_moments():
    model = build_model("brownian", epsilon=1.0, T=1.0)
    run = simulate_multiscale(model, n_paths=10000, dt=0.01, seed=5, burn_in=0.0, workers=2)
    final = run.x[run.kept(), -1, 0]
    assert run.times[-1] == pytest.approx(1.0)
    assert abs(final.mean()) < 4 * final.std(ddof=1) / np.sqrt(final.size)
    assert final.var(ddof=1) == pytest.approx(1.0, rel=0.06)


def test_first_exit_stops_on_bounds():
    model = build_model("brownian", epsilon=1.0, T=2.0)
    rule = StoppingRule.parse("first_exit:-1,1")
    run = simulate_multiscale(model, n_paths=500, dt=0.01, seed=3, rule=rule, burn_in=0.0, workers=1)
    assert rule.kind == FIRST_EXIT
    hit = run.tau < 2.0 - 1e-9
    assert hit.mean() > 0.5
    assert np.all(np.abs(run.x_at_tau[hit, 0]) >= 1.0)
    assert np.all(run.tau <= 2.0 + 1e-9)

    fixed_tau, _ = apply_stopping(run, StoppingRule())
    assert np.allclose(fixed_tau, 2.0)


def test_stopping_rule_parse():
    assert StoppingRule.parse("fixed_time") == StoppingRule()
    radius = StoppingRule.parse("first_exit:2", m=2)
    assert radius.lo == (-2.0, -2.0)
    assert radius.name == "first_exit[-2,2]"
    with pytest.raises(ConfigurationError):
        StoppingRule.parse("first_hit:1")
    with pytest.raises(ConfigurationError):
        StoppingRule.parse("first_exit:1,2,3")


def test_record_grid_has_quarters():
    steps = record_steps(1000, n_records=7)
    for q in (250, 500, 750, 1000):
        assert q in steps
    assert steps[0] == 0


def test_time_step_bound():
    check_time_step(0.1, 1e-3)
    with pytest.raises(ConfigurationError):
        check_time_step(0.1, 2e-3)
    with pytest.raises(ConfigurationError):
        check_time_step(0.1, 0.0)


def test_chunks_cover_all_paths():
    chunks = chunk_indices(10, 4)
    assert len(chunks) == 4
    assert np.array_equal(np.concatenate(chunks), np.arange(10))


def test_gaussian_moments_of_brownian_motion():
    sde = LinearSDE(K=np.zeros((1, 1)), Q=np.eye(1), k=lambda t: np.array([0.5]))
    start = GaussianState(0.0, np.zeros(1), np.zeros((1, 1)))
    end = evolve_gaussian_moments(sde, 0.0, 2.0, start)
    assert end.t == 2.0
    assert end.mean == pytest.approx([1.0])
    assert end.cov[0, 0] == pytest.approx(2.0)
    with pytest.raises(ValueError):
        evolve_gaussian_moments(sde, 1.0, 0.5, start)


def test_stationary_law_is_preserved():
    model = build_model("ou", {"shift": 0.5}, epsilon=0.5)
    still = stationary_state(model)
    later = evolve_gaussian_moments(model, 0.0, 1.0, still)
    assert later.mean == pytest.approx(still.mean, abs=1e-8)
    assert later.cov == pytest.approx(still.cov, abs=1e-8)
    assert still.marginal(slice(0, 1)).mean[0] == pytest.approx(0.5)
