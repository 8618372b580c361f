import numpy as np
import pytest
from scipy.special import expit

from steinvi.models import LogisticModel, QuadraticModel
from steinvi.variational import GaussianVariational


class CountingModel:
    """Wraps a model and counts evaluate() calls."""

    def __init__(self, inner):
        self.inner = inner
        self.dim = inner.dim
        self.calls = 0
        self.hessian_calls = 0

    def evaluate(self, theta, want_hessian=False):
        self.calls += 1
        self.hessian_calls += bool(want_hessian)
        return self.inner.evaluate(theta, want_hessian)


def make_logistic(n, d, seed, sigma0_sq=10.0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    theta = rng.normal(0.0, 1.0, d)
    y = (rng.random(n) < expit(X @ theta)).astype(float)
    return LogisticModel(X, y, sigma0_sq)


def random_lower(d, rng, diag_low=0.3, diag_high=0.8, off=0.2):
    return np.tril(rng.normal(0.0, off, (d, d)), -1) + np.diag(rng.uniform(diag_low, diag_high, d))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def logistic3():
    return make_logistic(50, 3, seed=7)


@pytest.fixture
def quad3():
    A = np.array([[1.0, 0, 0], [0.5, 1.2, 0], [-0.3, 0.4, 0.8]])
    return QuadraticModel([0.5, -1.0, 1.5], A @ A.T + 0.5 * np.eye(3), ell0=-2.0)


@pytest.fixture
def quad4():
    B = np.array([[1.0, 0.2, 0.0, 0.1], [0.3, 1.5, 0.2, 0.0], [0.0, 0.2, 1.0, 0.1], [0.1, 0.0, -0.4, 2.0]])
    return QuadraticModel([1.0, -2.0, 0.5, 3.0], B @ B.T + np.eye(4), ell0=1.5)


@pytest.fixture
def cov_state3(rng):
    return GaussianVariational(rng.normal(0.0, 0.5, 3), random_lower(3, rng))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
