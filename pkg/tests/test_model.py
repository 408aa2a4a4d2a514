"""Model catalog, drift/diffusion assembly and parity transforms."""
import numpy as np
import pytest

from errors import ConfigurationError, ModelEvaluationError, SingularDiffusionError
from model import fd
from model.assembly import assemble_batch, assemble_drift_diffusion, auxiliary_drift, reduced_blocks
from model.catalog import MODEL_NAMES, build_model, default_backend
from model.parity import ParityVector, apply_parity


def test_catalog_names():
    assert {"ou", "underdamped", "double_well", "brownian", "decoupled", "rotational", "equilibrium"} <= MODEL_NAMES


def test_ou_assembly_by_hand():
    model = build_model("ou", epsilon=0.1)
    B, D, Sigma = assemble_drift_diffusion(model, ([1.0], [2.0], 0.0))
    # b + f/eps = -1 + 20, c/eps^2 = -200
    assert B == pytest.approx([19.0, -200.0])
    assert D == pytest.approx(np.array([[1.0, 0.0], [0.0, 200.0]]))
    assert Sigma == pytest.approx(np.array([[1.0, 0.0], [0.0, np.sqrt(2.0) / 0.1]]))


def test_scaled_blocks_factor_through_unit_blocks():
    eps = 0.2
    model = build_model("underdamped", {"trap_speed": 1.0}, epsilon=eps)
    x = np.array([[0.3], [-1.0], [2.5]])
    y = np.array([[0.5], [2.0], [-0.7]])
    v = model.coeffs.evaluate(x, y, 0.4)
    _, D, Sigma = assemble_batch(model.coeffs, x, y, 0.4, eps, v)
    D1, Sigma1 = reduced_blocks(v)
    S = np.diag([1.0, 1.0 / eps])
    assert np.allclose(D, S @ D1 @ S)
    assert np.allclose(Sigma, S @ Sigma1)


def test_degenerate_slow_noise_is_singular():
    model = build_model("underdamped", {"sigma_x": 0.0})
    with pytest.raises(SingularDiffusionError) as exc:
        assemble_drift_diffusion(model, ([0.0], [0.0], 0.0))
    assert exc.value.rcond == pytest.approx(0.0)
    assert "model_core" in str(exc.value)


def test_unknown_model_and_parameter():
    with pytest.raises(ConfigurationError):
        build_model("langevin")
    with pytest.raises(ConfigurationError):
        build_model("ou", {"kapa": 2.0})


def test_nonpositive_epsilon_rejected():
    with pytest.raises(ModelEvaluationError):
        build_model("ou", epsilon=0.0)


def test_default_backend():
    assert default_backend(build_model("ou")) == "analytic_ou"
    assert default_backend(build_model("double_well")) == "numeric_fd"


def test_odd_velocity_parity():
    coeffs = build_model("underdamped", {"k": 2.0}).coeffs
    reflected = apply_parity(coeffs, ParityVector.parse("1, -1"))
    x = np.array([[0.5], [-1.0]])
    y = np.array([[1.5], [0.25]])
    v0 = coeffs.evaluate(x, y, 0.0)
    v1 = reflected.evaluate(x, y, 0.0)
    assert v1.f[:, 0] == pytest.approx(-y[:, 0])
    assert v1.g[:, 0] == pytest.approx(2.0 * x[:, 0])
    assert np.allclose(v1.c, v0.c)
    assert np.allclose(v1.a, v0.a)
    assert np.allclose(v1.alpha, v0.alpha)


def test_parity_length_must_match():
    coeffs = build_model("ou").coeffs
    with pytest.raises(ModelEvaluationError):
        apply_parity(coeffs, ParityVector.parse("1,1,1"))


def test_equilibrium_starts_stationary():
    model = build_model("equilibrium", {"kappa": 2.0})
    assert model.init.cov[0, 0] == pytest.approx(0.25)
    assert model.init.cov[1, 1] == pytest.approx(1.0)


def test_finite_difference_helpers():
    x = np.array([[0.5], [-1.0]])
    y = np.array([[2.0], [3.0]])

    def field(xx, yy, t):
        return xx**2 * yy

    assert fd.div_x(field, x, y, 0.0) == pytest.approx(2.0 * x[:, 0] * y[:, 0], rel=1e-6)
    assert fd.div_y(field, x, y, 0.0) == pytest.approx(x[:, 0] ** 2, rel=1e-6)
    assert fd.grad_x(field, x, y, 0.0).shape == (2, 1, 1)


def test_auxiliary_drift_vanishes_for_constant_noise():
    model = build_model("ou", epsilon=0.1)
    x = np.array([[0.5], [1.0]])
    y = np.array([[0.0], [-1.0]])
    assert auxiliary_drift(model.coeffs, x, y, 0.0, 0.1) == pytest.approx(np.zeros((2, 2)), abs=1e-8)


@pytest.mark.parametrize("name, parity", [("underdamped", "1, -1"), ("double_well", "-1, -1"), ("rotational", "1, -1, 1")])
def test_parity_is_an_involution(name, parity):
    coeffs = build_model(name, {"trap_speed": 1.0} if name == "underdamped" else None).coeffs
    delta = ParityVector.parse(parity)
    twice = apply_parity(apply_parity(coeffs, delta), delta)
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, coeffs.m))
    y = rng.normal(size=(4, coeffs.n))
    v0 = coeffs.evaluate(x, y, 0.3)
    v2 = twice.evaluate(x, y, 0.3)
    for field in ("b", "f", "g", "c", "sigma", "eta"):
        assert np.allclose(getattr(v2, field), getattr(v0, field)), field
