"""Step-size engines and the stochastic variational inference loop.

Algorithms are named by parametrization and geometry: ``1E``/``1N`` update
``(mu, C)``, ``2E``/``2N`` update ``(mu, T)``, with Euclidean (``E``) or
natural (``N``) gradients. Each iteration uses one draw and one model
evaluation; the mean and factor are updated jointly from that draw.
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .estimators import Geometry, Order, estimate_from_derivs
from .models import LogJoint
from .trimat import vech_indices
from .variational import DrawContext, GaussianVariational, Parametrization, h_derivs, transform

log = logging.getLogger(__name__)

ALGORITHMS = {
    "1E": (Parametrization.COVARIANCE, Geometry.EUCLIDEAN),
    "1N": (Parametrization.COVARIANCE, Geometry.NATURAL),
    "2E": (Parametrization.PRECISION, Geometry.EUCLIDEAN),
    "2N": (Parametrization.PRECISION, Geometry.NATURAL),
}

MAX_HALVINGS = 10


class Stepper(enum.Enum):
    ADAM = "adam"
    SNNGM = "snngm"


class Termination(enum.Enum):
    CONVERGED = "CONVERGED"
    MAX_ITERS = "MAX_ITERS"
    FACTOR_FAILURE = "FACTOR_FAILURE"


@dataclass
class AdamState:
    """Adam with bias-corrected moments; ``step`` returns an ascent increment."""

    size: int
    alpha: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.size)
        if self.v is None:
            self.v = np.zeros(self.size)

    def step(self, g: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * g
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * g * g
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return self.alpha * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class SnngmState:
    """Normalized natural-gradient ascent with momentum.

    The bias-corrected momentum is rescaled to length ``alpha``, so every
    increment has norm at most ``alpha``. With ``blocks`` set, each slice is
    normalized separately instead of the whole vector.
    """

    size: int
    alpha: float = 0.001
    beta: float = 0.9
    norm_floor: float = 1e-12
    blocks: Optional[list[slice]] = None
    t: int = 0
    m: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.norm_floor <= 0:
            raise ValueError("norm_floor must be positive")
        if self.m is None:
            self.m = np.zeros(self.size)

    def step(self, g: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta * self.m + (1.0 - self.beta) * g
        m_hat = self.m / (1.0 - self.beta**self.t)
        if self.blocks is None:
            return self.alpha * m_hat / max(np.linalg.norm(m_hat), self.norm_floor)
        out = np.empty_like(m_hat)
        for sl in self.blocks:
            out[sl] = self.alpha * m_hat[sl] / max(np.linalg.norm(m_hat[sl]), self.norm_floor)
        return out


@dataclass(frozen=True)
class RunConfig:
    algorithm: str = "1E"
    order: Order = Order.FIRST
    stepper: Stepper = Stepper.ADAM
    max_iters: int = 100_000
    window: int = 1000
    stop_tol: float = 0.0
    seed: int = 0
    alpha: float = 0.001
    early_stop: bool = True
    snngm_per_block: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {sorted(ALGORITHMS)}")
        object.__setattr__(self, "order", Order(self.order))
        object.__setattr__(self, "stepper", Stepper(self.stepper))
        if self.stepper is Stepper.SNNGM and self.geometry is not Geometry.NATURAL:
            raise ValueError("Snngm is only defined for natural-gradient algorithms (1N, 2N)")
        if self.max_iters < 1 or self.window < 1:
            raise ValueError("max_iters and window must be positive")
        if self.window > self.max_iters:
            raise ValueError("window cannot exceed max_iters")
        if self.stop_tol < 0:
            raise ValueError("stop_tol must be nonnegative")

    @property
    def parametrization(self) -> Parametrization:
        return ALGORITHMS[self.algorithm][0]

    @property
    def geometry(self) -> Geometry:
        return ALGORITHMS[self.algorithm][1]

    @property
    def label(self) -> str:
        return f"{self.algorithm}({int(self.order)})-{self.stepper.value}"


@dataclass(frozen=True, eq=False)
class RunRecord:
    iterations: int
    elbo_trace: np.ndarray
    averaged_trace: np.ndarray
    final_elbo: float
    wall_time_s: float
    termination: Termination
    state: GaussianVariational
    config: RunConfig

    def averaged_at(self, t: int) -> float:
        """Mean single-sample ELBO over iterations ``t - window + 1 .. t`` (1-based)."""
        return float(self.averaged_trace[t - self.config.window])


def sliding_mean(x: np.ndarray, window: int) -> np.ndarray:
    """Means over every run of ``window`` consecutive entries (empty if too short)."""
    if x.size < window:
        return np.empty(0)
    c = np.concatenate(([0.0], np.cumsum(x)))
    return (c[window:] - c[:-window]) / window


def make_stepper(cfg: RunConfig, d: int):
    size = d + d * (d + 1) // 2
    if cfg.stepper is Stepper.ADAM:
        return AdamState(size, alpha=cfg.alpha)
    blocks = [slice(0, d), slice(d, size)] if cfg.snngm_per_block else None
    return SnngmState(size, alpha=cfg.alpha, blocks=blocks)


def run(
    model: LogJoint,
    state0: GaussianVariational,
    cfg: RunConfig,
    callback: Optional[Callable[[int, GaussianVariational], None]] = None,
) -> RunRecord:
    """Fit ``state0`` to ``model`` by stochastic gradient ascent on the ELBO.

    Stops when the ELBO averaged over consecutive non-overlapping windows of
    ``cfg.window`` iterations fails to rise by more than ``cfg.stop_tol``, after
    ``cfg.max_iters`` iterations, or when a factor update keeps producing a
    non-positive diagonal even after ``MAX_HALVINGS`` step halvings.

    ``callback(t, state)`` is invoked after every accepted update.
    """
    if state0.parametrization is not cfg.parametrization:
        raise ValueError(
            f"algorithm {cfg.algorithm} needs a {cfg.parametrization.value} state, "
            f"got {state0.parametrization.value}"
        )
    if model.dim != state0.dim:
        raise ValueError(f"model dimension {model.dim} != state dimension {state0.dim}")

    d = state0.dim
    rows, cols = vech_indices(d)
    rng = np.random.default_rng(cfg.seed)
    stepper = make_stepper(cfg, d)
    want_hessian = cfg.order is Order.SECOND
    param, geometry = cfg.parametrization, cfg.geometry

    mu = state0.mu.copy()
    factor = state0.factor.copy()
    state = state0
    g = np.empty(stepper.size)
    trace = np.empty(cfg.max_iters)
    prev_window = -np.inf
    termination = Termination.MAX_ITERS
    t = 0

    start = time.perf_counter()
    while t < cfg.max_iters:
        z = rng.standard_normal(d)
        ctx = DrawContext(z, transform(state, z))
        hd = h_derivs(state, model, ctx, want_hessian)
        est = estimate_from_derivs(state, ctx, hd, cfg.order, geometry)
        g[:d] = est.mu_dir
        g[d:] = est.factor_dir[rows, cols]
        step = stepper.step(g)

        dmu = step[:d]
        dfactor = np.zeros((d, d))
        dfactor[rows, cols] = step[d:]
        scale = 1.0
        for _ in range(MAX_HALVINGS + 1):
            new_factor = factor + scale * dfactor
            if np.all(np.diagonal(new_factor) > 0):
                break
            scale *= 0.5
        else:
            log.warning(
                "%s: factor diagonal stayed non-positive after %d halvings at iteration %d",
                cfg.label, MAX_HALVINGS, t + 1,
            )
            termination = Termination.FACTOR_FAILURE
            break

        trace[t] = hd.value
        t += 1
        mu = mu + scale * dmu
        factor = new_factor
        state = GaussianVariational._trusted(mu, factor, param)
        if callback is not None:
            callback(t, state)

        if cfg.early_stop and t % cfg.window == 0:
            current = trace[t - cfg.window:t].mean()
            if current <= prev_window + cfg.stop_tol:
                termination = Termination.CONVERGED
                break
            prev_window = current
    wall = time.perf_counter() - start

    trace = trace[:t].copy()
    tail = trace[-cfg.window:] if t else trace
    final = float(tail.mean()) if t else float("nan")
    return RunRecord(
        iterations=t,
        elbo_trace=trace,
        averaged_trace=sliding_mean(trace, cfg.window),
        final_elbo=final,
        wall_time_s=wall,
        termination=termination,
        state=state,
        config=cfg,
    )
