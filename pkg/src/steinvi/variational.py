"""Gaussian variational family ``N(mu, Sigma)`` under two Cholesky parametrizations.

``COVARIANCE`` stores ``C`` with ``Sigma = C C'``; ``PRECISION`` stores ``T``
with ``Sigma^{-1} = T T'``. A draw maps ``z ~ N(0, I)`` to ``theta = mu + C z``
or ``theta = mu + T^{-T} z``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, SingularFactorError
from .models import LOG_2PI, LogJoint, ModelDerivatives
from .trimat import cholesky, is_lower_triangular, tri_solve


class Parametrization(enum.Enum):
    COVARIANCE = "covariance"
    PRECISION = "precision"


@dataclass(frozen=True, eq=False)
class GaussianVariational:
    mu: np.ndarray
    factor: np.ndarray
    parametrization: Parametrization = Parametrization.COVARIANCE

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).reshape(-1)
        factor = np.array(self.factor, dtype=float)
        if factor.shape != (mu.size, mu.size):
            raise DimensionError(f"factor {factor.shape} does not match mean of length {mu.size}")
        if not is_lower_triangular(factor):
            raise ValueError("factor must be lower triangular")
        if np.any(np.diag(factor) <= 0):
            raise SingularFactorError("factor diagonal must be strictly positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "factor", factor)
        object.__setattr__(self, "parametrization", Parametrization(self.parametrization))

    @classmethod
    def _trusted(cls, mu, factor, parametrization) -> "GaussianVariational":
        # hot-path constructor for optimizer updates that already checked the diagonal
        obj = object.__new__(cls)
        object.__setattr__(obj, "mu", mu)
        object.__setattr__(obj, "factor", factor)
        object.__setattr__(obj, "parametrization", parametrization)
        return obj

    @property
    def dim(self) -> int:
        return self.mu.size

    @property
    def is_covariance(self) -> bool:
        return self.parametrization is Parametrization.COVARIANCE

    def covariance(self) -> np.ndarray:
        L = self.factor
        if self.is_covariance:
            return L @ L.T
        Linv = tri_solve(L, np.eye(self.dim))
        return Linv.T @ Linv

    def precision(self) -> np.ndarray:
        L = self.factor
        if not self.is_covariance:
            return L @ L.T
        Linv = tri_solve(L, np.eye(self.dim))
        return Linv.T @ Linv

    def log_det_cov(self) -> float:
        s = 2.0 * np.sum(np.log(np.diag(self.factor)))
        return float(s if self.is_covariance else -s)

    def to(self, parametrization: Parametrization) -> "GaussianVariational":
        """Same distribution expressed in the other parametrization."""
        parametrization = Parametrization(parametrization)
        if parametrization is self.parametrization:
            return self
        if parametrization is Parametrization.COVARIANCE:
            return GaussianVariational(self.mu, cholesky(_sym(self.covariance())), parametrization)
        return GaussianVariational(self.mu, cholesky(_sym(self.precision())), parametrization)


def _sym(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.T)


def initial_state(d: int, parametrization=Parametrization.COVARIANCE) -> GaussianVariational:
    """Standard starting point: zero mean, identity factor."""
    return GaussianVariational(np.zeros(d), np.eye(d), Parametrization(parametrization))


def from_moments(mu, cov, parametrization=Parametrization.COVARIANCE) -> GaussianVariational:
    cov = np.asarray(cov, dtype=float)
    parametrization = Parametrization(parametrization)
    if parametrization is Parametrization.COVARIANCE:
        return GaussianVariational(mu, cholesky(cov), parametrization)
    return GaussianVariational(mu, cholesky(_sym(np.linalg.inv(cov))), parametrization)


@dataclass(frozen=True)
class DrawContext:
    """A standard-normal draw ``z`` and its image ``theta`` under the state.

    Either a single draw (shape ``(d,)``) or a batch (shape ``(k, d)``).
    """

    z: np.ndarray
    theta: np.ndarray


def transform(state: GaussianVariational, z) -> np.ndarray:
    """Map standard-normal ``z`` (``(d,)`` or ``(k, d)``) to theta."""
    z = np.asarray(z, dtype=float)
    if state.is_covariance:
        return state.mu + z @ state.factor.T
    if z.ndim == 1:
        return state.mu + tri_solve(state.factor, z, transposed=True)
    return state.mu + tri_solve(state.factor, z.T, transposed=True).T


def inverse_transform(state: GaussianVariational, theta) -> np.ndarray:
    """Recover ``z`` from theta."""
    r = np.asarray(theta, dtype=float) - state.mu
    if not state.is_covariance:
        return r @ state.factor
    if r.ndim == 1:
        return tri_solve(state.factor, r)
    return tri_solve(state.factor, r.T).T


def draw(state: GaussianVariational, rng: np.random.Generator, size: int | None = None) -> DrawContext:
    shape = (state.dim,) if size is None else (size, state.dim)
    z = rng.standard_normal(shape)
    return DrawContext(z, transform(state, z))


def _log_q_from_z(state: GaussianVariational, z: np.ndarray):
    d = state.dim
    return -0.5 * d * LOG_2PI - 0.5 * state.log_det_cov() - 0.5 * np.sum(z * z, axis=-1)


def log_q(state: GaussianVariational, theta) -> np.ndarray | float:
    """Log density of ``N(mu, Sigma)`` at theta."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != state.dim:
        raise DimensionError(f"theta has shape {theta.shape}, state dimension is {state.dim}")
    return _log_q_from_z(state, inverse_transform(state, theta))


def score_precision_term(state: GaussianVariational, z) -> np.ndarray:
    """``Sigma^{-1} (theta - mu)`` written in terms of z: ``C^{-T} z`` or ``T z``."""
    z = np.asarray(z, dtype=float)
    if not state.is_covariance:
        return z @ state.factor.T
    if z.ndim == 1:
        return tri_solve(state.factor, z, transposed=True)
    return tri_solve(state.factor, z.T, transposed=True).T


def h_derivs(
    state: GaussianVariational,
    model: LogJoint,
    ctx: DrawContext,
    want_hessian: bool = False,
) -> ModelDerivatives:
    """Derivatives of ``h(theta) = log p(y, theta) - log q(theta)`` at the drawn theta."""
    md = model.evaluate(ctx.theta, want_hessian)
    value = md.value - _log_q_from_z(state, ctx.z)
    grad = md.grad + score_precision_term(state, ctx.z)
    hess = None
    if want_hessian:
        hess = md.hess + state.precision()
    return ModelDerivatives(value, grad, hess)
