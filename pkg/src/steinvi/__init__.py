"""Gaussian variational inference with first- and second-order Cholesky-factor updates."""

from .diagnostics import Identity, check_identity, compare_variance, elbo_estimate
from .estimators import Geometry, GradientEstimate, Order, estimate
from .models import LogisticModel, ModelDerivatives, QuadraticModel
from .optim import RunConfig, RunRecord, Stepper, Termination, run
from .variational import GaussianVariational, Parametrization, draw, from_moments, initial_state, log_q

__version__ = "0.1.0"

__all__ = [
    "GaussianVariational",
    "Geometry",
    "GradientEstimate",
    "Identity",
    "LogisticModel",
    "ModelDerivatives",
    "Order",
    "Parametrization",
    "QuadraticModel",
    "RunConfig",
    "RunRecord",
    "Stepper",
    "Termination",
    "check_identity",
    "compare_variance",
    "draw",
    "elbo_estimate",
    "estimate",
    "from_moments",
    "initial_state",
    "log_q",
    "run",
]
