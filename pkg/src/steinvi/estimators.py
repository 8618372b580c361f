"""Stochastic gradient directions for the mean and the Cholesky factor.

Per draw, the factor direction is one of

* ``g1 = bar(grad_h z')``                        first order, covariance factor C
* ``f1 = bar(hess_h C)``                         second order, covariance factor C
* ``g2 = bar(-T^{-T} z grad_h' T^{-T})``         first order, precision factor T
* ``f2 = bar(-T^{-T} T^{-1} hess_h T^{-T})``     second order, precision factor T

and natural-gradient variants rescale them with :func:`naturalize`. Each pair
has the same expectation under q, but the second-order forms are constant
when ``log p`` is quadratic.

All helpers broadcast over a leading batch axis: vectors may be ``(d,)`` or
``(k, d)``, matrices ``(d, d)`` or ``(k, d, d)``. Factors are never batched.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .models import LogJoint, ModelDerivatives
from .trimat import bar, barbar, tri_solve
from .variational import DrawContext, GaussianVariational, h_derivs


class Order(enum.IntEnum):
    FIRST = 1
    SECOND = 2


class Geometry(enum.Enum):
    EUCLIDEAN = "E"
    NATURAL = "N"


@dataclass(frozen=True)
class GradientEstimate:
    mu_dir: np.ndarray
    factor_dir: np.ndarray
    order: Order
    geometry: Geometry


def _solve_vecs(T: np.ndarray, v: np.ndarray, transposed: bool) -> np.ndarray:
    if v.ndim == 1:
        return tri_solve(T, v, transposed)
    return tri_solve(T, v.T, transposed).T


def _solve_mats(T: np.ndarray, M: np.ndarray, transposed: bool) -> np.ndarray:
    """Left-solve every matrix in a ``(..., d, d)`` stack against T (or T')."""
    if M.ndim == 2:
        return tri_solve(T, M, transposed)
    moved = np.moveaxis(M, -2, 0)
    flat = tri_solve(T, moved.reshape(T.shape[0], -1), transposed)
    return np.moveaxis(flat.reshape(moved.shape), 0, -2)


def _outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., :, None] * b[..., None, :]


def _t(M: np.ndarray) -> np.ndarray:
    return np.swapaxes(M, -1, -2)


def mean_dir_euclidean(gradh: np.ndarray) -> np.ndarray:
    return np.asarray(gradh, dtype=float)


def mean_dir_natural(state: GaussianVariational, gradh: np.ndarray) -> np.ndarray:
    """``Sigma grad_h`` without forming Sigma."""
    gradh = np.asarray(gradh, dtype=float)
    L = state.factor
    if state.is_covariance:
        return (gradh @ L) @ L.T
    # T^{-T} v with v = T^{-1} grad_h
    return _solve_vecs(L, _solve_vecs(L, gradh, False), True)


def g1(gradh: np.ndarray, z: np.ndarray) -> np.ndarray:
    return bar(_outer(np.asarray(gradh, dtype=float), np.asarray(z, dtype=float)))


def f1(hessh: np.ndarray, C: np.ndarray) -> np.ndarray:
    return bar(np.asarray(hessh, dtype=float) @ np.asarray(C, dtype=float))


def g2(gradh: np.ndarray, z: np.ndarray, T: np.ndarray) -> np.ndarray:
    a = _solve_vecs(T, np.asarray(z, dtype=float), True)
    b = _solve_vecs(T, np.asarray(gradh, dtype=float), False)
    return bar(-_outer(a, b))


def f2(hessh: np.ndarray, T: np.ndarray) -> np.ndarray:
    hessh = np.asarray(hessh, dtype=float)
    # hess T^{-T} = (T^{-1} hess')', then two left solves
    right = _t(_solve_mats(T, _t(hessh), False))
    return bar(-_solve_mats(T, _solve_mats(T, right, False), True))


def naturalize(factor: np.ndarray, euclid_bar: np.ndarray) -> np.ndarray:
    """``L barbar(L' E)`` for factor L and a masked Euclidean direction E."""
    factor = np.asarray(factor, dtype=float)
    return factor @ barbar(factor.T @ np.asarray(euclid_bar, dtype=float))


def estimate_from_derivs(
    state: GaussianVariational,
    ctx: DrawContext,
    hd: ModelDerivatives,
    order: Order,
    geometry: Geometry,
) -> GradientEstimate:
    """Assemble mean and factor directions from already-evaluated derivatives of h."""
    order, geometry = Order(order), Geometry(geometry)
    L = state.factor
    if order is Order.SECOND:
        if hd.hess is None:
            raise ValueError("second-order estimate needs the Hessian of h")
        euclid = f1(hd.hess, L) if state.is_covariance else f2(hd.hess, L)
    elif state.is_covariance:
        euclid = g1(hd.grad, ctx.z)
    else:
        euclid = g2(hd.grad, ctx.z, L)
    if geometry is Geometry.NATURAL:
        return GradientEstimate(
            mean_dir_natural(state, hd.grad), naturalize(L, euclid), order, geometry
        )
    return GradientEstimate(mean_dir_euclidean(hd.grad), euclid, order, geometry)


def estimate(
    state: GaussianVariational,
    model: LogJoint,
    ctx: DrawContext,
    order: Order,
    geometry: Geometry,
) -> GradientEstimate:
    hd = h_derivs(state, model, ctx, want_hessian=Order(order) is Order.SECOND)
    return estimate_from_derivs(state, ctx, hd, order, geometry)
