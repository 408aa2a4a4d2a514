"""Coefficient fields of a slow/fast diffusion.

Fields are vectorized callables ``field(x, y, t)`` with ``x`` of shape (N, m),
``y`` of shape (N, n) and scalar ``t``. Vector fields return (N, k) and the
noise loadings return (N, k, p). Derived a = σσ', h = ση', α = ηη'.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Dict, NamedTuple, Optional

import numpy as np

from errors import ModelEvaluationError

Field = Callable[[np.ndarray, np.ndarray, float], np.ndarray]
Offset = Callable[[float], np.ndarray]


def as_batch(value, dim: int) -> np.ndarray:
    """Coerce a point or stack of points to shape (N, dim)."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim == 1:
        arr = arr.reshape(-1, dim)
    return arr


def _zero_offset(size: int) -> Offset:
    zeros = np.zeros(size)
    return lambda t: zeros


class FieldValues(NamedTuple):
    b: np.ndarray
    f: np.ndarray
    g: np.ndarray
    c: np.ndarray
    sigma: np.ndarray
    eta: np.ndarray
    a: np.ndarray
    h: np.ndarray
    alpha: np.ndarray


@dataclass(frozen=True, eq=False)
class AffineForm:
    """b = bx·x + by·y + b0(t) and likewise f, g, c; σ and η constant."""

    bx: np.ndarray
    by: np.ndarray
    fx: np.ndarray
    fy: np.ndarray
    gx: np.ndarray
    gy: np.ndarray
    cx: np.ndarray
    cy: np.ndarray
    sigma: np.ndarray
    eta: np.ndarray
    b0: Optional[Offset] = None
    f0: Optional[Offset] = None
    g0: Optional[Offset] = None
    c0: Optional[Offset] = None

    @property
    def m(self) -> int:
        return self.bx.shape[0]

    @property
    def n(self) -> int:
        return self.cy.shape[0]

    def offsets(self, t: float):
        m, n = self.m, self.n
        b0 = self.b0(t) if self.b0 else np.zeros(m)
        f0 = self.f0(t) if self.f0 else np.zeros(m)
        g0 = self.g0(t) if self.g0 else np.zeros(n)
        c0 = self.c0(t) if self.c0 else np.zeros(n)
        return (np.asarray(b0, float), np.asarray(f0, float), np.asarray(g0, float), np.asarray(c0, float))


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    m: int
    n: int
    p: int
    b: Field
    f: Field
    g: Field
    c: Field
    sigma: Field
    eta: Field
    affine: Optional[AffineForm] = None
    time_dependent: bool = False

    def __post_init__(self):
        if min(self.m, self.n, self.p) < 1:
            raise ModelEvaluationError(
                f"dimensions must be positive, got m={self.m} n={self.n} p={self.p}"
            )

    @classmethod
    def from_affine(cls, form: AffineForm, time_dependent: bool = False) -> "CoefficientSet":
        m, n = form.m, form.n
        p = form.sigma.shape[1]
        sigma = np.asarray(form.sigma, float).reshape(m, p)
        eta = np.asarray(form.eta, float).reshape(n, p)

        def _affine(mx, my, slot):
            def fieldfn(x, y, t):
                offset = form.offsets(t)[slot]
                return x @ mx.T + y @ my.T + offset
            return fieldfn

        def _const(mat):
            return lambda x, y, t: np.broadcast_to(mat, (x.shape[0],) + mat.shape)

        return cls(
            m=m,
            n=n,
            p=p,
            b=_affine(form.bx, form.by, 0),
            f=_affine(form.fx, form.fy, 1),
            g=_affine(form.gx, form.gy, 2),
            c=_affine(form.cx, form.cy, 3),
            sigma=_const(sigma),
            eta=_const(eta),
            affine=form,
            time_dependent=time_dependent,
        )

    def evaluate(self, x, y, t: float) -> FieldValues:
        x = as_batch(x, self.m)
        y = as_batch(y, self.n)
        n_pts = x.shape[0]
        m, n, p = self.m, self.n, self.p
        b = _shaped(self.b(x, y, t), (n_pts, m))
        f = _shaped(self.f(x, y, t), (n_pts, m))
        g = _shaped(self.g(x, y, t), (n_pts, n))
        c = _shaped(self.c(x, y, t), (n_pts, n))
        sigma = _shaped(self.sigma(x, y, t), (n_pts, m, p))
        eta = _shaped(self.eta(x, y, t), (n_pts, n, p))
        for name, arr in (("b", b), ("f", f), ("g", g), ("c", c), ("sigma", sigma), ("eta", eta)):
            bad = ~np.isfinite(arr.reshape(n_pts, -1)).all(axis=1)
            if bad.any():
                i = int(np.argmax(bad))
                raise ModelEvaluationError(
                    f"non-finite value of field {name}", point=(x[i].tolist(), y[i].tolist(), t)
                )
        a = np.einsum("nip,njp->nij", sigma, sigma)
        h = np.einsum("nip,njp->nij", sigma, eta)
        alpha = np.einsum("nip,njp->nij", eta, eta)
        return FieldValues(b, f, g, c, sigma, eta, a, h, alpha)

    def a(self, x, y, t):
        return self.evaluate(x, y, t).a

    def h(self, x, y, t):
        return self.evaluate(x, y, t).h

    def alpha(self, x, y, t):
        return self.evaluate(x, y, t).alpha


def _shaped(value, shape) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape != shape:
        try:
            arr = np.broadcast_to(arr, shape)
        except ValueError:
            raise ModelEvaluationError(f"field returned shape {arr.shape}, expected {shape}") from None
    return arr


@dataclass(frozen=True, eq=False)
class Domain:
    """Truncated box [x_lo, x_hi] × [y_lo, y_hi]."""

    x_lo: np.ndarray
    x_hi: np.ndarray
    y_lo: np.ndarray
    y_hi: np.ndarray

    def contains(self, x: np.ndarray, y: Optional[np.ndarray] = None) -> np.ndarray:
        inside = np.all((x > self.x_lo) & (x < self.x_hi), axis=-1)
        if y is not None:
            inside &= np.all((y > self.y_lo) & (y < self.y_hi), axis=-1)
        return inside


@dataclass(frozen=True, eq=False)
class GaussianInit:
    """Initial law N(mean, cov) of the joint (x, y); zero covariance is a point mass."""

    mean: np.ndarray
    cov: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def root(self) -> np.ndarray:
        vals, vecs = np.linalg.eigh(0.5 * (self.cov + self.cov.T))
        return vecs * np.sqrt(np.clip(vals, 0.0, None))

    def transform(self, z: np.ndarray) -> np.ndarray:
        """Map standard normals (N, dim) to draws from this law."""
        return self.mean + z @ self.root().T

    def marginal(self, index: slice) -> "GaussianInit":
        return GaussianInit(self.mean[index].copy(), self.cov[index, index].copy())

    def is_degenerate(self, tol: float = 1e-14) -> bool:
        return bool(np.linalg.eigvalsh(self.cov).min() <= tol)


@dataclass(frozen=True, eq=False)
class LinearSDE:
    """dz = (K z + k(t)) dt + noise with diffusion matrix Q (constant)."""

    K: np.ndarray
    Q: np.ndarray
    k: Offset

    @property
    def dim(self) -> int:
        return self.K.shape[0]


@dataclass(frozen=True, eq=False)
class MultiscaleModel:
    name: str
    coeffs: CoefficientSet
    epsilon: float
    T: float
    init: GaussianInit
    domain: Domain
    burn_in: float = 1.0
    params: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ModelEvaluationError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.T > 0:
            raise ModelEvaluationError(f"T must be > 0, got {self.T}")
        if self.burn_in < 0:
            raise ModelEvaluationError(f"burn_in must be >= 0, got {self.burn_in}")
        m = self.coeffs.m
        if self.init.dim != m + self.coeffs.n:
            raise ModelEvaluationError("initial law dimension does not match m + n")
        x0 = self.init.mean[None, :m]
        y0 = self.init.mean[None, m:]
        if not self.domain.contains(x0, y0)[0]:
            raise ModelEvaluationError("initial mean lies outside the truncated domain", point=self.init.mean.tolist())

    @property
    def m(self) -> int:
        return self.coeffs.m

    @property
    def n(self) -> int:
        return self.coeffs.n

    def with_epsilon(self, epsilon: float) -> "MultiscaleModel":
        return replace(self, epsilon=float(epsilon))

    def with_coeffs(self, coeffs: CoefficientSet) -> "MultiscaleModel":
        return replace(self, coeffs=coeffs)

    def linear_sde(self) -> LinearSDE:
        """Joint linear SDE of (x, y) at this epsilon; affine models only."""
        from errors import UnsupportedModelError

        form = self.coeffs.affine
        if form is None:
            raise UnsupportedModelError(f"model {self.name!r} has no affine form")
        e = self.epsilon
        K = np.block(
            [
                [form.bx + form.fx / e, form.by + form.fy / e],
                [form.gx / e + form.cx / e**2, form.gy / e + form.cy / e**2],
            ]
        )
        sig = np.vstack([form.sigma, form.eta / e])
        Q = sig @ sig.T

        def offset(t):
            b0, f0, g0, c0 = form.offsets(t)
            return np.concatenate([b0 + f0 / e, g0 / e + c0 / e**2])

        return LinearSDE(K=K, Q=Q, k=offset)
