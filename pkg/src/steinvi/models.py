"""Log joint densities with exact gradients and Hessians.

Every model exposes ``dim`` and ``evaluate(theta, want_hessian=False)``. The
``theta`` argument may be a single point of shape ``(d,)`` or a batch of shape
``(k, d)``; the returned :class:`ModelDerivatives` carries matching leading
axes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np
from scipy.special import expit

from .errors import DimensionError
from .trimat import cholesky

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class ModelDerivatives:
    """Value, gradient and (optionally) Hessian of a scalar function of theta."""

    value: np.ndarray | float
    grad: np.ndarray
    hess: Optional[np.ndarray] = None


class LogJoint(Protocol):
    dim: int

    def evaluate(self, theta: np.ndarray, want_hessian: bool = False) -> ModelDerivatives: ...


def _as_theta(theta, d: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.ndim not in (1, 2) or theta.shape[-1] != d:
        raise DimensionError(f"theta has shape {theta.shape}, model dimension is {d}")
    return theta


@dataclass(frozen=True, eq=False)
class LogisticModel:
    """Bayesian logistic regression with an isotropic ``N(0, sigma0_sq I)`` prior."""

    X: np.ndarray
    y: np.ndarray
    sigma0_sq: float = 100.0

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        y = np.array(self.y, dtype=float)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DimensionError(f"design matrix must be n x d with n, d >= 1, got {X.shape}")
        if y.shape != (X.shape[0],):
            raise DimensionError(f"y has shape {y.shape}, expected ({X.shape[0]},)")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("responses must be 0 or 1")
        if not self.sigma0_sq > 0:
            raise ValueError("prior variance must be positive")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "_Xty", X.T @ y)
        object.__setattr__(
            self, "_log_prior_const", -0.5 * X.shape[1] * (LOG_2PI + np.log(self.sigma0_sq))
        )

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def evaluate(self, theta, want_hessian: bool = False) -> ModelDerivatives:
        theta = _as_theta(theta, self.dim)
        X, s2 = self.X, self.sigma0_sq
        u = theta @ X.T  # (..., n)
        # logaddexp(0, u) = log(1 + exp(u)) without overflow for large |u|
        value = (
            theta @ self._Xty
            - np.logaddexp(0.0, u).sum(axis=-1)
            + self._log_prior_const
            - 0.5 * np.sum(theta * theta, axis=-1) / s2
        )
        pi = expit(u)
        grad = (self.y - pi) @ X - theta / s2
        hess = None
        if want_hessian:
            w = pi * (1.0 - pi)
            if theta.ndim == 1:
                hess = -(X.T * w) @ X
            else:
                hess = -np.einsum("kn,ni,nj->kij", w, X, X, optimize=True)
            hess -= np.eye(self.dim) / s2
        return ModelDerivatives(value, grad, hess)


@dataclass(frozen=True, eq=False)
class QuadraticModel:
    """``ell0 - (theta - theta_hat)' P (theta - theta_hat) / 2``.

    As an unnormalized density its exact posterior is ``N(theta_hat, P^{-1})``.
    """

    theta_hat: np.ndarray
    P: np.ndarray
    ell0: float = 0.0

    def __post_init__(self):
        theta_hat = np.array(self.theta_hat, dtype=float).reshape(-1)
        P = np.array(self.P, dtype=float)
        if P.shape != (theta_hat.size, theta_hat.size):
            raise DimensionError(f"P has shape {P.shape}, expected {(theta_hat.size,) * 2}")
        cholesky(P)  # raises unless symmetric positive definite
        theta_hat.setflags(write=False)
        P.setflags(write=False)
        object.__setattr__(self, "theta_hat", theta_hat)
        object.__setattr__(self, "P", P)

    @property
    def dim(self) -> int:
        return self.theta_hat.size

    @property
    def posterior_cov(self) -> np.ndarray:
        return np.linalg.inv(self.P)

    def optimal_elbo(self) -> float:
        """ELBO attained by ``q = N(theta_hat, P^{-1})``, i.e. the log normalizer."""
        _, logdet = np.linalg.slogdet(self.P)
        return float(self.ell0 + 0.5 * self.dim * LOG_2PI - 0.5 * logdet)

    def evaluate(self, theta, want_hessian: bool = False) -> ModelDerivatives:
        theta = _as_theta(theta, self.dim)
        r = theta - self.theta_hat
        Pr = r @ self.P
        value = self.ell0 - 0.5 * np.sum(r * Pr, axis=-1)
        hess = None
        if want_hessian:
            hess = np.broadcast_to(-self.P, theta.shape[:-1] + self.P.shape).copy()
        return ModelDerivatives(value, -Pr, hess)
