"""Monte Carlo checks of the Gaussian expectation identities behind the estimators.

Each check draws iid theta from a variational state, evaluates both sides of an
identity on every draw, and compares the sample means. Gaps are reported in
units of the standard error of the per-draw difference (both sides share
draws, so the paired error is the right yardstick).

Identities, with ``s = Sigma^{-1} (theta - mu)``:

``BONNET_STEIN``  E[s f]                       = E[grad f]
``PRICE``         E[s grad_f'] / 2             = E[hess f] / 2
``LEMMA1``        E[(s (theta - mu)' - I) h]   = E[grad_h (theta - mu)']
``THM1A``         E[g1]                        = E[f1]          (covariance factor)
``THM1B``         E[g2]                        = E[f2]          (precision factor)
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import estimators as est
from .models import LOG_2PI, LogisticModel, LogJoint, QuadraticModel
from .variational import (
    DrawContext,
    GaussianVariational,
    Parametrization,
    h_derivs,
    score_precision_term,
    transform,
)

DEFAULT_BATCH = 20_000


class Identity(enum.Enum):
    BONNET_STEIN = "BONNET_STEIN"
    PRICE = "PRICE"
    LEMMA1 = "LEMMA1"
    THM1A = "THM1A"
    THM1B = "THM1B"


class RunningMoments:
    """Streaming mean and sum of squared deviations, merged batch-wise (Chan et al.)."""

    def __init__(self, shape=()):
        self.count = 0
        self.mean = np.zeros(shape)
        self.m2 = np.zeros(shape)

    def update(self, batch: np.ndarray) -> None:
        batch = np.asarray(batch, dtype=float)
        k = batch.shape[0]
        if k == 0:
            return
        b_mean = batch.mean(axis=0)
        b_m2 = np.sum((batch - b_mean) ** 2, axis=0)
        self._combine(k, b_mean, b_m2)

    def merge(self, other: "RunningMoments") -> None:
        if other.count:
            self._combine(other.count, other.mean, other.m2)

    def _combine(self, k, b_mean, b_m2):
        n = self.count
        total = n + k
        delta = b_mean - self.mean
        self.mean = self.mean + delta * (k / total)
        self.m2 = self.m2 + b_m2 + delta**2 * (n * k / total)
        self.count = total

    @property
    def variance(self) -> np.ndarray:
        if self.count < 2:
            return np.full_like(self.mean, np.nan)
        return self.m2 / (self.count - 1)

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(self.variance / self.count)


def _to_list(x):
    return np.asarray(x).tolist()


@dataclass(frozen=True)
class IdentityReport:
    identity: Identity
    n_samples: int
    lhs_mean: np.ndarray
    rhs_mean: np.ndarray
    gap_se: np.ndarray
    max_abs_gap: float
    max_gap_in_se: float

    def passed(self, threshold: float = 5.0) -> bool:
        return self.max_gap_in_se <= threshold

    def to_dict(self) -> dict:
        return {
            "identity": self.identity.value,
            "n_samples": self.n_samples,
            "lhs_mean": _to_list(self.lhs_mean),
            "rhs_mean": _to_list(self.rhs_mean),
            "gap_se": _to_list(self.gap_se),
            "max_abs_gap": self.max_abs_gap,
            "max_gap_in_se": self.max_gap_in_se,
        }


@dataclass(frozen=True)
class VarianceReport:
    estimator: str
    n_samples: int
    entry_variances: np.ndarray
    max_entry_variance: float

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "n_samples": self.n_samples,
            "entry_variances": _to_list(self.entry_variances),
            "max_entry_variance": self.max_entry_variance,
        }


def _gap_in_se(gap: np.ndarray, se: np.ndarray) -> np.ndarray:
    out = np.zeros_like(gap)
    pos = se > 0
    out[pos] = np.abs(gap[pos]) / se[pos]
    out[~pos & (gap != 0)] = np.inf
    return out


def _batches(n: int, size: int):
    while n > 0:
        k = min(n, size)
        yield k
        n -= k


def _identity_sides(which: Identity, state, model, ctx: DrawContext, func):
    if which is Identity.THM1A:
        hd = h_derivs(state, model, ctx, want_hessian=True)
        return est.g1(hd.grad, ctx.z), est.f1(hd.hess, state.factor)
    if which is Identity.THM1B:
        hd = h_derivs(state, model, ctx, want_hessian=True)
        return est.g2(hd.grad, ctx.z, state.factor), est.f2(hd.hess, state.factor)

    want_hessian = which is Identity.PRICE
    if func is None or which is Identity.LEMMA1:
        fd = h_derivs(state, model, ctx, want_hessian)
    else:
        fd = func.evaluate(ctx.theta, want_hessian)
    s = score_precision_term(state, ctx.z)
    if which is Identity.BONNET_STEIN:
        return s * np.asarray(fd.value)[:, None], fd.grad
    if which is Identity.PRICE:
        return 0.5 * s[:, :, None] * fd.grad[:, None, :], 0.5 * fd.hess
    r = ctx.theta - state.mu
    outer_sr = s[:, :, None] * r[:, None, :] - np.eye(state.dim)
    return outer_sr * np.asarray(fd.value)[:, None, None], fd.grad[:, :, None] * r[:, None, :]


def check_identity(
    which: Identity,
    state: GaussianVariational,
    model: LogJoint,
    n_samples: int,
    seed: int,
    func: Optional[LogJoint] = None,
    batch_size: int = DEFAULT_BATCH,
) -> IdentityReport:
    """Monte Carlo comparison of both sides of one identity.

    ``func`` replaces ``h`` as the test function for ``BONNET_STEIN`` and
    ``PRICE``; it must expose ``evaluate(theta, want_hessian)``. The THM1A/THM1B
    checks convert the state to the parametrization they are stated in.
    """
    which = Identity(which)
    if n_samples < 2:
        raise ValueError("need at least two samples")
    if which is Identity.THM1A:
        state = state.to(Parametrization.COVARIANCE)
    elif which is Identity.THM1B:
        state = state.to(Parametrization.PRECISION)

    rng = np.random.default_rng(seed)
    lhs_m = rhs_m = diff_m = None
    for k in _batches(n_samples, batch_size):
        z = rng.standard_normal((k, state.dim))
        lhs, rhs = _identity_sides(which, state, model, DrawContext(z, transform(state, z)), func)
        if lhs_m is None:
            shape = lhs.shape[1:]
            lhs_m, rhs_m, diff_m = RunningMoments(shape), RunningMoments(shape), RunningMoments(shape)
        lhs_m.update(lhs)
        rhs_m.update(rhs)
        diff_m.update(lhs - rhs)

    gap = diff_m.mean
    se = diff_m.stderr
    return IdentityReport(
        identity=which,
        n_samples=n_samples,
        lhs_mean=lhs_m.mean,
        rhs_mean=rhs_m.mean,
        gap_se=se,
        max_abs_gap=float(np.max(np.abs(gap))),
        max_gap_in_se=float(np.max(_gap_in_se(gap, se))),
    )


def compare_variance(
    state: GaussianVariational,
    model: LogJoint,
    n_samples: int,
    seed: int,
    batch_size: int = DEFAULT_BATCH,
) -> list[VarianceReport]:
    """Entrywise sample variances of the first- vs second-order factor estimators.

    Uses ``g1``/``f1`` for a covariance state and ``g2``/``f2`` for a precision
    state, evaluated on the same draws.
    """
    if n_samples < 2:
        raise ValueError("need at least two samples")
    rng = np.random.default_rng(seed)
    L = state.factor
    first = RunningMoments((state.dim, state.dim))
    second = RunningMoments((state.dim, state.dim))
    for k in _batches(n_samples, batch_size):
        z = rng.standard_normal((k, state.dim))
        hd = h_derivs(state, model, DrawContext(z, transform(state, z)), want_hessian=True)
        if state.is_covariance:
            first.update(est.g1(hd.grad, z))
            second.update(est.f1(hd.hess, L))
        else:
            first.update(est.g2(hd.grad, z, L))
            second.update(est.f2(hd.hess, L))
    names = ("G1", "F1") if state.is_covariance else ("G2", "F2")
    return [
        VarianceReport(name, n_samples, m.variance, float(np.max(m.variance)))
        for name, m in zip(names, (first, second))
    ]


def elbo_estimate(
    state: GaussianVariational,
    model: LogJoint,
    n_samples: int,
    seed: int,
    batch_size: int = DEFAULT_BATCH,
) -> tuple[float, float]:
    """Mean of ``h(theta)`` over iid draws and its standard error (nan for one draw)."""
    if n_samples < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    m = RunningMoments()
    for k in _batches(n_samples, batch_size):
        z = rng.standard_normal((k, state.dim))
        m.update(h_derivs(state, model, DrawContext(z, transform(state, z))).value)
    return float(m.mean), float(m.stderr)


def quadratic_elbo(state: GaussianVariational, model: QuadraticModel) -> float:
    """Exact ELBO of a Gaussian state against a quadratic log joint."""
    d = state.dim
    r = state.mu - model.theta_hat
    Sigma = state.covariance()
    expected_ell = model.ell0 - 0.5 * (r @ model.P @ r + np.sum(model.P * Sigma))
    entropy = 0.5 * d * (1.0 + LOG_2PI) + 0.5 * state.log_det_cov()
    return float(expected_ell + entropy)


@dataclass(frozen=True)
class LaplaceFit:
    mode: np.ndarray
    cov: np.ndarray
    log_evidence: float
    elbo: float


def laplace_fit(model: LogisticModel, tol: float = 1e-10, max_iter: int = 100, n_nodes: int = 64) -> LaplaceFit:
    """Newton mode search plus the exact ELBO of the resulting Gaussian.

    ``log_evidence`` is the usual Laplace estimate of ``log p(y)``; ``elbo`` is
    the evidence lower bound of ``q = N(mode, (-hess)^{-1})``, with each
    likelihood term integrated over its one-dimensional Gaussian projection by
    Gauss-Hermite quadrature.
    """
    theta = np.zeros(model.dim)
    for _ in range(max_iter):
        md = model.evaluate(theta, want_hessian=True)
        step = np.linalg.solve(md.hess, md.grad)
        theta = theta - step
        if np.max(np.abs(step)) < tol:
            break
    else:
        raise RuntimeError("Newton iteration did not converge")
    md = model.evaluate(theta, want_hessian=True)
    neg_hess = -md.hess
    cov = np.linalg.inv(neg_hess)
    d = model.dim
    _, logdet_p = np.linalg.slogdet(neg_hess)
    log_evidence = float(md.value + 0.5 * d * LOG_2PI - 0.5 * logdet_p)

    nodes, weights = np.polynomial.hermite_e.hermegauss(n_nodes)
    weights = weights / weights.sum()
    X, y, s2 = model.X, model.y, model.sigma0_sq
    loc = X @ theta
    scale = np.sqrt(np.einsum("ij,jk,ik->i", X, cov, X))
    softplus = np.logaddexp(0.0, loc[:, None] + scale[:, None] * nodes[None, :]) @ weights
    expected_ell = (
        y @ loc
        - softplus.sum()
        - 0.5 * d * (LOG_2PI + np.log(s2))
        - 0.5 * (theta @ theta + np.trace(cov)) / s2
    )
    entropy = 0.5 * d * (1.0 + LOG_2PI) - 0.5 * logdet_p
    return LaplaceFit(theta, cov, log_evidence, float(expected_ell + entropy))
