"""Built-in benchmark models, addressable by name from experiment configs.

Arbitrary user models are built in Python from ``CoefficientSet``; the catalog
only covers the benchmarks the harness knows how to configure.
"""
from __future__ import annotations

import logging
from dataclasses import replace
from typing import Callable, Dict, Mapping, Optional, Tuple

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from errors import ConfigurationError
from model.coefficients import AffineForm, CoefficientSet, Domain, GaussianInit, MultiscaleModel

logger = logging.getLogger(__name__)

FAST_BOX_SDS = 8.0

OU_DEFAULTS = {
    "kappa": 1.0,
    "shift": 0.0,
    "gamma": 1.0,
    "sigma_x": 1.0,
    "eta": float(np.sqrt(2.0)),
    "x_box": 10.0,
    "x0": 0.0,
    "x0_var": 0.0,
    "y0": 0.0,
    "y0_var": 0.0,
}

UNDERDAMPED_DEFAULTS = {
    "k": 1.0,
    "gamma": 1.0,
    "eta": float(np.sqrt(2.0)),
    "sigma_x": 0.5,
    "trap0": 0.0,
    "trap_speed": 0.0,
    "x_box": 10.0,
    "x0": 0.0,
    "x0_var": 0.0,
    "y0": 0.0,
    "y0_var": 0.0,
}

DOUBLE_WELL_DEFAULTS = {"kappa": 1.0, "x_box": 10.0, "y_box": 4.0, "x0": 0.0, "x0_var": 0.0, "y0": 0.0, "y0_var": 0.0}

BROWNIAN_DEFAULTS = {"x_box": 50.0, "x0": 0.0, "x0_var": 0.0, "y0": 0.0, "y0_var": 0.0}

DECOUPLED_DEFAULTS = {
    "kappa": 1.0,
    "gamma": 1.0,
    "sigma_x": 1.0,
    "eta": float(np.sqrt(2.0)),
    "x_box": 10.0,
    "x0": 0.0,
    "x0_var": 0.0,
    "y0": 0.0,
    "y0_var": 0.0,
}

ROTATIONAL_DEFAULTS = {"kappa": 1.0, "spin": 1.0, "x_box": 10.0, "x0": 0.0, "x0_var": 0.0, "y0": 0.0, "y0_var": 0.0}

EQUILIBRIUM_DEFAULTS = {"kappa": 1.0, "gamma": 1.0, "sigma_x": 1.0, "eta": float(np.sqrt(2.0)), "x_box": 10.0}


def _merge(defaults: Mapping[str, float], params: Optional[Mapping[str, float]]) -> Dict[str, float]:
    merged = dict(defaults)
    for key, value in (params or {}).items():
        if key not in defaults:
            raise ConfigurationError(f"unknown model parameter {key!r}; known: {sorted(defaults)}")
        merged[key] = float(value)
    return merged


def _init(p: Mapping[str, float], m: int, n: int) -> GaussianInit:
    mean = np.concatenate([np.full(m, p["x0"]), np.full(n, p["y0"])])
    cov = np.diag(np.concatenate([np.full(m, p["x0_var"]), np.full(n, p["y0_var"])]))
    return GaussianInit(mean=mean, cov=cov)


def fast_proxy_box(form: AffineForm, x_lo: np.ndarray, x_hi: np.ndarray, t: float = 0.0, sds: float = FAST_BOX_SDS):
    """Mean ± ``sds`` stationary standard deviations of the frozen fast OU law,
    widened to cover every corner of the slow box."""
    C = form.cy
    alpha = form.eta @ form.eta.T
    cov = solve_continuous_lyapunov(C, -alpha)
    sd = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    c0 = form.offsets(t)[3]
    corners = np.array(np.meshgrid(*[[lo, hi] for lo, hi in zip(x_lo, x_hi)], indexing="ij")).reshape(len(x_lo), -1).T
    means = np.array([-np.linalg.solve(C, form.cx @ corner + c0) for corner in corners])
    return means.min(axis=0) - sds * sd, means.max(axis=0) + sds * sd


def _affine_model(name, form, p, epsilon, T, burn_in, time_dependent=False) -> MultiscaleModel:
    m, n = form.m, form.n
    x_lo, x_hi = np.full(m, -p["x_box"]), np.full(m, p["x_box"])
    y_lo, y_hi = fast_proxy_box(form, x_lo, x_hi)
    return MultiscaleModel(
        name=name,
        coeffs=CoefficientSet.from_affine(form, time_dependent=time_dependent),
        epsilon=epsilon,
        T=T,
        init=_init(p, m, n),
        domain=Domain(x_lo, x_hi, y_lo, y_hi),
        burn_in=burn_in,
        params=p,
    )


def _ou(params, epsilon, T, burn_in) -> MultiscaleModel:
    """dX = (−κx + s + y/ε)dt + σx dW₁, dY = −γy/ε² dt + (η/ε) dW₂."""
    p = _merge(OU_DEFAULTS, params)
    shift = p["shift"]
    form = AffineForm(
        bx=np.array([[-p["kappa"]]]),
        by=np.zeros((1, 1)),
        fx=np.zeros((1, 1)),
        fy=np.ones((1, 1)),
        gx=np.zeros((1, 1)),
        gy=np.zeros((1, 1)),
        cx=np.zeros((1, 1)),
        cy=np.array([[-p["gamma"]]]),
        sigma=np.array([[p["sigma_x"], 0.0]]),
        eta=np.array([[0.0, p["eta"]]]),
        b0=(lambda t: np.array([shift])) if shift else None,
    )
    return _affine_model("ou", form, p, epsilon, T, burn_in)


def _underdamped(params, epsilon, T, burn_in) -> MultiscaleModel:
    """Position x, scaled velocity y: f = y, g = −k(x − λ(t)), c = −γy.

    λ(t) = λ₀ + v·clip(t, 0, T) is a trap dragged at speed v. The averaged
    diffusion is A = σx² + η²/γ², so the defaults give 2.25. The textbook
    value η²/γ² is the σx → 0 limit, but σx > 0 keeps D invertible for the
    Girsanov functionals.
    """
    p = _merge(UNDERDAMPED_DEFAULTS, params)
    k, speed, trap0 = p["k"], p["trap_speed"], p["trap0"]

    def trap(t):
        return trap0 + speed * float(np.clip(t, 0.0, T))

    form = AffineForm(
        bx=np.zeros((1, 1)),
        by=np.zeros((1, 1)),
        fx=np.zeros((1, 1)),
        fy=np.ones((1, 1)),
        gx=np.array([[-k]]),
        gy=np.zeros((1, 1)),
        cx=np.zeros((1, 1)),
        cy=np.array([[-p["gamma"]]]),
        sigma=np.array([[p["sigma_x"], 0.0]]),
        eta=np.array([[0.0, p["eta"]]]),
        g0=(lambda t: np.array([k * trap(t)])) if (trap0 or speed) else None,
    )
    return _affine_model("underdamped", form, p, epsilon, T, burn_in, time_dependent=bool(speed))


def _double_well(params, epsilon, T, burn_in) -> MultiscaleModel:
    p = _merge(DOUBLE_WELL_DEFAULTS, params)
    kappa = p["kappa"]
    sigma = np.array([[1.0, 0.0]])
    eta = np.array([[0.0, np.sqrt(2.0)]])

    coeffs = CoefficientSet(
        m=1,
        n=1,
        p=2,
        b=lambda x, y, t: -kappa * x,
        f=lambda x, y, t: y.copy(),
        g=lambda x, y, t: np.zeros_like(y),
        c=lambda x, y, t: -(y**3 - y),
        sigma=lambda x, y, t: np.broadcast_to(sigma, (x.shape[0], 1, 2)),
        eta=lambda x, y, t: np.broadcast_to(eta, (x.shape[0], 1, 2)),
    )
    return MultiscaleModel(
        name="double_well",
        coeffs=coeffs,
        epsilon=epsilon,
        T=T,
        init=_init(p, 1, 1),
        domain=Domain(
            np.array([-p["x_box"]]), np.array([p["x_box"]]), np.array([-p["y_box"]]), np.array([p["y_box"]])
        ),
        burn_in=burn_in,
        params=p,
    )


def _brownian(params, epsilon, T, burn_in) -> MultiscaleModel:
    p = _merge(BROWNIAN_DEFAULTS, params)
    form = AffineForm(
        bx=np.zeros((1, 1)),
        by=np.zeros((1, 1)),
        fx=np.zeros((1, 1)),
        fy=np.zeros((1, 1)),
        gx=np.zeros((1, 1)),
        gy=np.zeros((1, 1)),
        cx=np.zeros((1, 1)),
        cy=np.array([[-1.0]]),
        sigma=np.array([[1.0, 0.0]]),
        eta=np.array([[0.0, np.sqrt(2.0)]]),
    )
    return _affine_model("brownian", form, p, epsilon, T, burn_in)


def _decoupled(params, epsilon, T, burn_in) -> MultiscaleModel:
    """f = g = 0: the slow law does not depend on ε. With x0_var = σx²/(2κ)
    and y0_var = η²/(2γ) the start is stationary and the model is reversible."""
    p = _merge(DECOUPLED_DEFAULTS, params)
    form = AffineForm(
        bx=np.array([[-p["kappa"]]]),
        by=np.zeros((1, 1)),
        fx=np.zeros((1, 1)),
        fy=np.zeros((1, 1)),
        gx=np.zeros((1, 1)),
        gy=np.zeros((1, 1)),
        cx=np.zeros((1, 1)),
        cy=np.array([[-p["gamma"]]]),
        sigma=np.array([[p["sigma_x"], 0.0]]),
        eta=np.array([[0.0, p["eta"]]]),
    )
    return _affine_model("decoupled", form, p, epsilon, T, burn_in)


def _equilibrium(params, epsilon, T, burn_in) -> MultiscaleModel:
    """Gradient slow drift, f = g = 0, started from its stationary law (reversible)."""
    p = _merge(EQUILIBRIUM_DEFAULTS, params)
    p.update(
        x0=0.0,
        x0_var=p["sigma_x"] ** 2 / (2.0 * p["kappa"]),
        y0=0.0,
        y0_var=p["eta"] ** 2 / (2.0 * p["gamma"]),
    )
    model = _decoupled({k: p[k] for k in DECOUPLED_DEFAULTS}, epsilon, T, burn_in)
    return replace(model, name="equilibrium", params=p)


def _rotational(params, epsilon, T, burn_in) -> MultiscaleModel:
    """Two fast variables with drift −y + κJy; κ ≠ 0 breaks fast reversibility."""
    p = _merge(ROTATIONAL_DEFAULTS, params)
    J = np.array([[0.0, -1.0], [1.0, 0.0]])
    root2 = np.sqrt(2.0)
    form = AffineForm(
        bx=np.array([[-p["kappa"]]]),
        by=np.zeros((1, 2)),
        fx=np.zeros((1, 1)),
        fy=np.array([[1.0, 0.0]]),
        gx=np.zeros((2, 1)),
        gy=np.zeros((2, 2)),
        cx=np.zeros((2, 1)),
        cy=-np.eye(2) + p["spin"] * J,
        sigma=np.array([[1.0, 0.0, 0.0]]),
        eta=np.array([[0.0, root2, 0.0], [0.0, 0.0, root2]]),
    )
    return _affine_model("rotational", form, p, epsilon, T, burn_in)


CATALOG: Dict[str, Callable[..., MultiscaleModel]] = {
    "ou": _ou,
    "underdamped": _underdamped,
    "double_well": _double_well,
    "brownian": _brownian,
    "decoupled": _decoupled,
    "rotational": _rotational,
    "equilibrium": _equilibrium,
}

MODEL_NAMES: frozenset = frozenset(CATALOG)


def build_model(
    name: str,
    params: Optional[Mapping[str, float]] = None,
    *,
    epsilon: float = 0.1,
    T: float = 1.0,
    burn_in: float = 1.0,
) -> MultiscaleModel:
    builder = CATALOG.get(name)
    if builder is None:
        raise ConfigurationError(f"unknown model {name!r}; known: {sorted(MODEL_NAMES)}")
    model = builder(params, float(epsilon), float(T), float(burn_in))
    logger.debug("Built model %s (eps=%s, T=%s)", name, epsilon, T)
    return model


def default_backend(model: MultiscaleModel) -> str:
    return "analytic_ou" if model.coeffs.affine is not None else "numeric_fd"
