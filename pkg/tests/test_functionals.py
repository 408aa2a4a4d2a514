"""Forward and backward functionals: integrands, eligibility and small fluctuation checks."""
import numpy as np
import pytest
from scipy.integrate import trapezoid

from averaging.extended import BackwardFields, check_epsilon_free, compute_extended_backward, compute_extended_forward
from averaging.mu import GAUSSIAN, MuField
from averaging.reduced import compute_averaged_coefficients
from averaging.xt import XTGrid
from cells.density import FastDensity, GaussianFastDensity
from cells.grid import fast_grid
from cells.solver import ANALYTIC_OU
from cells.table import CellTable
from errors import ConfigurationError, DivergentFunctionalError, IneligibleModelError
from functionals.backward import backward_epsilon_accumulator, direct_q, log_rho_quadratic, pointwise_compatibility
from functionals.densities import GaussianJointDensity, joint_density_for, reduced_density_for
from functionals.forward import FLIP_DT, forward_epsilon_integrands, forward_epsilon_spec
from functionals.limits import limit_backward_decomposition, limit_forward_decomposition
from functionals.physics import make_entropy_production_spec, make_housekeeping_spec, reversed_comparable
from harness.stats import Thresholds, ift_check, variance_check
from model.catalog import build_model
from model.compat import check_compatible_conditions
from model.comparable import backward_from, original_forward, shifted_forward
from model.parity import ParityVector
from paths.engine import simulate_multiscale
from paths.limit import simulate_limit_system
from paths.records import StoppingRule
from paths.state import StepState

ODD_VELOCITY = ParityVector.parse("1, -1")


def _state(model, x, y, t=0.0):
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    return StepState(x=x, t=t, y=y, epsilon=model.epsilon, values=model.coeffs.evaluate(x, y, t))


def test_forward_integrands_for_shifted_ou():
    model = build_model("ou", epsilon=0.1)
    comparable = shifted_forward(model.coeffs, 1.0)
    state = _state(model, [[0.0], [1.5], [-2.0]], [[0.3], [-1.0], [2.0]])
    bundle = forward_epsilon_integrands(model, comparable)
    assert bundle.dt(state) == pytest.approx(np.full(3, 0.5))
    assert bundle.dw(state) == pytest.approx(np.tile([-1.0, 0.0], (3, 1)))

    unreduced = forward_epsilon_integrands(model, comparable, unreduced=True)
    assert unreduced.dt(_state(model, [[0.5]], [[0.5]])) == pytest.approx([0.5])

    flipped = forward_epsilon_integrands(model, comparable, mutation=FLIP_DT)
    assert flipped.dt(state) == pytest.approx(np.full(3, -0.5))


def test_forward_needs_forward_comparable_and_known_mutation():
    model = build_model("underdamped")
    with pytest.raises(DivergentFunctionalError):
        forward_epsilon_integrands(model, reversed_comparable(model.coeffs, ODD_VELOCITY))
    with pytest.raises(ConfigurationError):
        forward_epsilon_integrands(model, original_forward(model.coeffs), mutation="flip_dw")


def test_original_comparable_gives_zero():
    model = build_model("ou", epsilon=0.5, burn_in=0.1)
    run = simulate_multiscale(model, original_forward(model.coeffs), n_paths=50, dt=0.01, seed=1, workers=1)
    assert np.all(run.values["F_eps"] == 0.0)


def test_ift_passes_and_flip_dt_fails():
    model = build_model("ou", {"shift": 0.0}, epsilon=0.5, burn_in=0.2)
    comparable = shifted_forward(model.coeffs, 0.5)
    specs = [
        forward_epsilon_spec(model, comparable),
        forward_epsilon_spec(model, comparable, name="F_eps_flipped", mutation=FLIP_DT),
    ]
    run = simulate_multiscale(model, n_paths=4000, dt=0.005, seed=21, functionals=specs, workers=2)
    good = ift_check(run, "F_eps")
    bad = ift_check(run, "F_eps_flipped")
    assert good.passed, good.as_dict()
    assert not bad.passed
    assert bad.statistic == pytest.approx(np.exp(0.25), rel=0.05)


def test_limit_forward_parts_add_up():
    model = build_model("ou", epsilon=0.1, burn_in=0.2)
    comparable = shifted_forward(model.coeffs, 1.0)
    xt = XTGrid(x_lo=[-4.0], x_hi=[4.0], T=model.T, x_nodes=9, time_dependent=False)
    cells = CellTable(model, fast_grid(model.domain, 129), ANALYTIC_OU, workers=1)
    avg = compute_averaged_coefficients(model.coeffs, comparable, cells, xt, workers=1)
    ext = compute_extended_forward(model.coeffs, comparable, cells, xt, avg, workers=1)
    assert ext.residuals["forward_row"] < 1e-6
    assert ext.residuals["forward_diag"] < 1e-6

    specs = limit_forward_decomposition(ext, avg)
    run = simulate_limit_system(ext, avg, 200, 1e-2, 4, model=model, functionals=specs, workers=1)
    total, regular, anomalous = (run.values[name] for name in ("F", "F1", "F2"))
    assert np.allclose(total, regular + anomalous, atol=1e-12)
    assert np.all(run.values["F"][:, 0] == 0.0)


def test_even_parity_ou_is_ineligible():
    model = build_model("ou")
    with pytest.raises(IneligibleModelError) as exc:
        make_entropy_production_spec(
            model, ParityVector.even(2), joint_density_for(model), GaussianFastDensity(model.coeffs)
        )
    assert exc.value.residuals["coupling"] > 1.0


def test_underdamped_reversal_is_compatible():
    model = build_model("underdamped", {"k": 2.0})
    comparable = reversed_comparable(model.coeffs, ODD_VELOCITY)
    x = np.array([[0.5], [-1.0], [2.0]])
    y = np.array([[1.5], [0.25], [-3.0]])
    report = pointwise_compatibility(model.coeffs, comparable, GaussianFastDensity(model.coeffs), x, y, 0.0)
    assert report.coupling_residual < 1e-10
    assert report.fast_balance_residual < 1e-10

    _, spec = make_entropy_production_spec(
        model, ODD_VELOCITY, GaussianJointDensity(model), GaussianFastDensity(model.coeffs)
    )
    assert spec.name == "S_tot"
    assert spec.bundle.boundary is not None


def test_direct_q_underdamped():
    # b + b~ = 0, f + f~ = 0, g + g~ = 0; only 2c/eps survives
    model = build_model("underdamped", {"k": 2.0, "gamma": 1.5}, epsilon=0.2)
    comparable = reversed_comparable(model.coeffs, ODD_VELOCITY)
    x = np.array([[0.5], [-1.0]])
    y = np.array([[1.0], [-2.0]])
    q = direct_q(model.coeffs, comparable, x, y, 0.0, 0.2)
    assert q[:, 0] == pytest.approx([0.0, 0.0])
    assert q[:, 1] == pytest.approx(2.0 * -1.5 * y[:, 0] / 0.2)


def test_backward_accumulator_specs():
    model = build_model("underdamped", epsilon=0.2)
    comparable = reversed_comparable(model.coeffs, ODD_VELOCITY)
    specs = backward_epsilon_accumulator(model, comparable, GaussianJointDensity(model), GaussianFastDensity(model.coeffs))
    assert [s.name for s in specs] == ["H_eps", "I_eps", "G_eps", "G_eps_direct"]
    assert specs[2].gated and not specs[3].gated
    assert specs[2].combination == (("H_eps", 1.0), ("I_eps", 1.0))
    assert specs[0].bundle.quad is None and specs[3].bundle.quad is not None

    with pytest.raises(DivergentFunctionalError):
        backward_epsilon_accumulator(model, original_forward(model.coeffs), GaussianJointDensity(model), GaussianFastDensity(model.coeffs))


def test_housekeeping_against_adjoint_is_positive():
    model = build_model("ou", {"shift": 0.5}, epsilon=0.1)
    xt = XTGrid(x_lo=[-4.0], x_hi=[4.0], T=model.T, x_nodes=9, time_dependent=False)
    cells = CellTable(model, fast_grid(model.domain, 129), ANALYTIC_OU, workers=1)
    avg = compute_averaged_coefficients(model.coeffs, None, cells, xt, workers=1)
    mu = MuField(avg, backend=GAUSSIAN)
    comparable, spec = make_housekeeping_spec(model, ODD_VELOCITY, mu, GaussianFastDensity(model.coeffs))
    assert spec.name == "S_hk"
    assert comparable.label == "adjoint"

    # mu = N(1/2, 3/2): at x = 0, b = 1/2 and b_hat = -1/2 + 1/3
    state = _state(model, [[0.0], [0.5], [2.0]], [[0.0], [1.0], [-1.0]])
    rate = spec.bundle.dt(state)
    assert rate[0] == pytest.approx(2.0 / 9.0, rel=1e-6)
    assert rate[1] == pytest.approx(0.0, abs=1e-10)
    assert np.all(rate >= 0.0)


def test_rotating_fast_drift_is_ineligible_for_housekeeping():
    model = build_model("rotational", {"spin": 1.0})
    with pytest.raises(IneligibleModelError) as exc:
        make_housekeeping_spec(model, ParityVector.even(3), None, GaussianFastDensity(model.coeffs))
    assert exc.value.residuals["fast_balance"] > 1e-3


def test_backward_extended_system_identities():
    model = build_model("underdamped", {"k": 2.0})
    comparable = reversed_comparable(model.coeffs, ODD_VELOCITY)
    xt = XTGrid(x_lo=[-3.0], x_hi=[3.0], T=model.T, x_nodes=7, time_dependent=False)
    cells = CellTable(
        model, fast_grid(model.domain, 129), ANALYTIC_OU, f_tilde=comparable.f_tilde, variant=comparable.label, workers=1
    )
    avg = compute_averaged_coefficients(model.coeffs, comparable, cells, xt, workers=1)
    ext = compute_extended_backward(model.coeffs, comparable, cells, xt, avg, density=GaussianFastDensity(model.coeffs), workers=1)
    for name in ("cross_row", "current_divergence", "drift_current", "exp_martingale_drift"):
        assert ext.residuals[name] < 1e-4, name
    assert ext.residuals["diffusion_match"] < 1e-6

    report = check_compatible_conditions(model.coeffs, comparable.f_tilde, cells.get([1.0], 0.0), parity=ODD_VELOCITY)
    assert report.max_residual() < 1e-6

    specs = limit_backward_decomposition(ext, avg, reduced_density_for(avg, model))
    assert [s.name for s in specs] == ["G", "G1", "G2", "H"]
    assert not specs[0].gated


def test_backward_extended_needs_backward_comparable():
    model = build_model("ou")
    cells = CellTable(model, fast_grid(model.domain, 129), ANALYTIC_OU, workers=1)
    with pytest.raises(DivergentFunctionalError):
        compute_extended_backward(model.coeffs, shifted_forward(model.coeffs, 1.0), cells, XTGrid([-1.0], [1.0], 1.0, 5, time_dependent=False))


def _forward_limit(model, comparable, half_width=4.0):
    xt = XTGrid(x_lo=[-half_width], x_hi=[half_width], T=model.T, x_nodes=9, time_dependent=False)
    cells = CellTable(model, fast_grid(model.domain, 129), ANALYTIC_OU, workers=1)
    avg = compute_averaged_coefficients(model.coeffs, comparable, cells, xt, workers=1)
    return compute_extended_forward(model.coeffs, comparable, cells, xt, avg, workers=1), avg


def _backward_limit(model, comparable, half_width=4.0):
    xt = XTGrid(x_lo=[-half_width], x_hi=[half_width], T=model.T, x_nodes=9, time_dependent=False)
    cells = CellTable(
        model, fast_grid(model.domain, 129), ANALYTIC_OU, f_tilde=comparable.f_tilde, variant=comparable.label, workers=1
    )
    avg = compute_averaged_coefficients(model.coeffs, comparable, cells, xt, workers=1)
    ext = compute_extended_backward(model.coeffs, comparable, cells, xt, avg, density=GaussianFastDensity(model.coeffs), workers=1)
    return ext, avg, reduced_density_for(avg, model)


def _backward_eps_run(dt, n_paths, seed):
    model = build_model("ou", epsilon=0.5, T=0.5, burn_in=0.5)
    comparable = reversed_comparable(model.coeffs, ODD_VELOCITY)
    specs = backward_epsilon_accumulator(model, comparable, GaussianJointDensity(model), GaussianFastDensity(model.coeffs))
    return simulate_multiscale(model, n_paths=n_paths, dt=dt, seed=seed, functionals=specs, workers=2)


def test_split_and_direct_backward_forms_agree_per_path():
    # the gap must shrink like dt, not like sqrt(dt)
    gaps = []
    for dt in (2.5e-3, 6.25e-4):
        run = _backward_eps_run(dt, 400, seed=17)
        gaps.append(float(np.mean(np.abs(run.final("G_eps") - run.final("G_eps_direct")))))
    coarse, fine = gaps
    assert coarse < 0.06
    assert fine < coarse / 2.5


def test_backward_ift_at_finite_epsilon():
    run = _backward_eps_run(5e-3, 4000, seed=23)
    verdict = ift_check(run, "G_eps", thresholds=Thresholds(max_se=0.1))
    assert verdict.passed, verdict.as_dict()


def test_limit_backward_ift_fixed_time_and_first_exit():
    model = build_model("ou", epsilon=0.1, burn_in=0.2)
    ext, avg, reduced = _backward_limit(model, reversed_comparable(model.coeffs, ODD_VELOCITY), half_width=5.0)
    specs = limit_backward_decomposition(ext, avg, reduced)
    exit_rule = StoppingRule.parse("first_exit:-1,1")
    run = simulate_limit_system(ext, avg, 4000, 2.5e-3, 31, exit_rule, model=model, functionals=specs, workers=2)
    thresholds = Thresholds(max_se=0.1)
    regular = ift_check(run, "G1", rule=StoppingRule(), thresholds=thresholds)
    anomalous = ift_check(run, "G2", rule=exit_rule, thresholds=thresholds)
    assert regular.passed, regular.as_dict()
    assert anomalous.passed, anomalous.as_dict()


def test_limit_forward_ift_for_every_part():
    model = build_model("ou", epsilon=0.1, burn_in=0.2)
    ext, avg = _forward_limit(model, shifted_forward(model.coeffs, 1.0))
    specs = limit_forward_decomposition(ext, avg)
    run = simulate_limit_system(ext, avg, 4000, 1e-2, 37, model=model, functionals=specs, workers=2)
    for name in ("F", "F1", "F2"):
        verdict = ift_check(run, name)
        assert verdict.passed, verdict.as_dict()


def test_equilibrium_entropy_production_concentrates_at_zero():
    model = build_model("equilibrium", epsilon=0.5, T=0.5, burn_in=0.0)
    _, spec = make_entropy_production_spec(
        model, ParityVector.even(2), joint_density_for(model), GaussianFastDensity(model.coeffs)
    )
    spreads = []
    for dt in (2.5e-3, 6.25e-4):
        values = simulate_multiscale(model, n_paths=1000, dt=dt, seed=41, functionals=[spec], workers=2).final("S_tot")
        assert abs(float(values.mean())) < 0.05
        assert float(np.mean(np.abs(values))) < 0.15
        spreads.append(float(values.var()))
    assert spreads[1] < spreads[0] / 2.5


def test_underdamped_anomalous_parts_have_variance():
    model = build_model("underdamped", epsilon=0.1, burn_in=0.2)
    ext, avg = _forward_limit(model, shifted_forward(model.coeffs, 1.0))
    forward = simulate_limit_system(
        ext, avg, 1000, 1e-2, 43, model=model, functionals=limit_forward_decomposition(ext, avg), workers=2
    )
    ext_b, avg_b, reduced = _backward_limit(model, reversed_comparable(model.coeffs, ODD_VELOCITY))
    backward = simulate_limit_system(
        ext_b, avg_b, 1000, 1e-2, 47, model=model, functionals=limit_backward_decomposition(ext_b, avg_b, reduced), workers=2
    )
    for run, name in ((forward, "F2"), (backward, "G2")):
        verdict = variance_check(run, name, gated=True)
        assert verdict.passed, verdict.as_dict()
        assert verdict.statistic > 10.0 * verdict.se


def test_backward_loading_does_not_depend_on_epsilon():
    model = build_model("underdamped", {"k": 2.0})
    x = np.array([[0.5], [-1.0], [2.0]])
    y = np.array([[1.5], [0.25], [-3.0]])
    fast = GaussianFastDensity(model.coeffs)
    fields = BackwardFields(model.coeffs, reversed_comparable(model.coeffs, ODD_VELOCITY), fast)
    assert check_epsilon_free(fields, x, y, 0.0, eps_pair=(0.1, 0.01)) < 1e-6
    assert fields.sigma_m1_unreduced(x, y, 0.0, 0.1) == pytest.approx(fields.sigma_m1_unreduced(x, y, 0.0, 0.01), abs=1e-6)

    # without the velocity flip the coupling term 2f/eps survives
    naive = BackwardFields(model.coeffs, backward_from(model.coeffs, ParityVector.even(2)), fast)
    assert check_epsilon_free(naive, x, y, 0.0, eps_pair=(0.1, 0.01)) > 1e-2


def test_self_covariation_matches_quadrature():
    # e^{-F} = exp(W1 - t/2), so [M, M]_T = int_0^T e^{-2F} ds with mean e^T - 1
    model = build_model("ou", epsilon=0.5, T=0.5, burn_in=0.2)
    spec = forward_epsilon_spec(model, shifted_forward(model.coeffs, 1.0))
    run = simulate_multiscale(
        model, n_paths=2000, dt=1e-3, seed=53, functionals=[spec], covariations=[("F_eps", "F_eps")], workers=2
    )
    realized = run.covariation["F_eps:F_eps"][:, -1]
    oracle = trapezoid(np.exp(-2.0 * run.values["F_eps"]), run.times, axis=1)
    se = realized.std(ddof=1) / np.sqrt(realized.size)
    assert float(realized.mean()) == pytest.approx(np.expm1(model.T), abs=4.0 * se)
    assert float(np.mean(np.abs(realized - oracle))) < 0.2 * float(oracle.mean())


def test_log_rho_hessian_and_quadratic_loading():
    model = build_model("underdamped", {"k": 2.0, "trap_speed": 1.0}, epsilon=0.5)
    fast = GaussianFastDensity(model.coeffs)
    x = np.array([[0.5], [-1.0]])
    y = np.array([[1.5], [0.25]])
    exact = fast.hessian_log_rho(x, y, 0.3)
    assert FastDensity.hessian_log_rho(fast, x, y, 0.3) == pytest.approx(exact, abs=1e-5)

    # OU: log rho = -y^2 / 2 and eta / eps = 2 sqrt(2), so only the fast-fast entry is loaded
    ou = build_model("ou", epsilon=0.5)
    K = log_rho_quadratic(GaussianFastDensity(ou.coeffs), _state(ou, [[0.2]], [[-0.4]]))
    assert K[0] == pytest.approx(np.array([[0.0, 0.0], [0.0, 4.0]]))
