import numpy as np
import pytest

from steinvi.diagnostics import (
    Identity,
    RunningMoments,
    check_identity,
    compare_variance,
    elbo_estimate,
    laplace_fit,
    quadratic_elbo,
)
from steinvi.models import ModelDerivatives
from steinvi.variational import GaussianVariational, Parametrization, from_moments

from conftest import make_logistic, random_lower

PREC = Parametrization.PRECISION


class LinearFunction:
    def __init__(self, a):
        self.a = np.asarray(a, dtype=float)
        self.dim = self.a.size

    def evaluate(self, theta, want_hessian=False):
        theta = np.asarray(theta)
        hess = np.zeros(theta.shape[:-1] + (self.dim, self.dim)) if want_hessian else None
        return ModelDerivatives(theta @ self.a, np.broadcast_to(self.a, theta.shape).copy(), hess)


class HalfQuadraticForm:
    """f(theta) = theta' A theta / 2 for symmetric A."""

    def __init__(self, A):
        self.A = np.asarray(A, dtype=float)
        self.dim = self.A.shape[0]

    def evaluate(self, theta, want_hessian=False):
        theta = np.asarray(theta)
        At = theta @ self.A
        hess = np.broadcast_to(self.A, theta.shape[:-1] + self.A.shape).copy() if want_hessian else None
        return ModelDerivatives(0.5 * np.sum(theta * At, axis=-1), At, hess)


def g1_variance_closed_form(state, model):
    """Entry variances of g1 on a quadratic log joint.

    grad_h = a + B z with a = -P (mu - theta_hat), B = C^{-T} - P C, so
    Var[(a_i + B_i. z) z_j] = a_i^2 + |B_i.|^2 + B_ij^2.
    """
    C = state.factor
    a = -model.P @ (state.mu - model.theta_hat)
    B = np.linalg.inv(C).T - model.P @ C
    V = a[:, None] ** 2 + np.sum(B**2, axis=1)[:, None] + B**2
    return np.tril(V)


@pytest.fixture
def state3(rng):
    return GaussianVariational(rng.normal(0, 0.5, 3), random_lower(3, rng))


class TestRunningMoments:
    def test_matches_numpy(self, rng):
        x = rng.normal(3.0, 2.0, (1000, 2))
        m = RunningMoments((2,))
        for chunk in np.array_split(x, 7):
            m.update(chunk)
        np.testing.assert_allclose(m.mean, x.mean(0), rtol=1e-12)
        np.testing.assert_allclose(m.variance, x.var(0, ddof=1), rtol=1e-10)

    def test_merge_order_free(self, rng):
        x = rng.standard_normal(500)
        a, b, whole = RunningMoments(), RunningMoments(), RunningMoments()
        a.update(x[:123])
        b.update(x[123:])
        a.merge(b)
        whole.update(x)
        assert a.mean == pytest.approx(whole.mean, rel=1e-12)
        assert a.variance == pytest.approx(whole.variance, rel=1e-10)


class TestIdentities:
    def test_stein_linear(self, state3):
        a = np.array([1.0, -2.0, 0.5])
        for n in (10_000, 40_000):
            rep = check_identity(Identity.BONNET_STEIN, state3, None, n, seed=1, func=LinearFunction(a))
            np.testing.assert_array_equal(rep.rhs_mean, a)
            assert rep.max_gap_in_se <= 4

    def test_stein_gap_shrinks(self, state3):
        a = np.array([1.0, -2.0, 0.5])
        gaps = [check_identity(Identity.BONNET_STEIN, state3, None, n, seed=1, func=LinearFunction(a)).gap_se.max()
                for n in (10_000, 160_000)]
        assert gaps[1] == pytest.approx(gaps[0] / 4, rel=0.2)

    def test_price_quadratic_half_convention(self, state3, rng):
        A = rng.standard_normal((3, 3))
        A = A + A.T
        rep = check_identity(Identity.PRICE, state3, None, 100_000, seed=2, func=HalfQuadraticForm(A))
        # d/dSigma of E[f] = (mu'A mu + tr(A Sigma)) / 2 is A / 2
        np.testing.assert_allclose(rep.rhs_mean, 0.5 * A, rtol=1e-12)
        se = rep.gap_se
        assert np.all(np.abs(rep.lhs_mean - 0.5 * A) <= 4 * se)

    @pytest.mark.parametrize("which", list(Identity))
    def test_logistic_h(self, which, state3):
        m = make_logistic(50, 3, seed=8)
        assert check_identity(which, state3, m, 100_000, seed=5).max_gap_in_se <= 4

    @pytest.mark.parametrize("which", [Identity.BONNET_STEIN, Identity.LEMMA1])
    def test_precision_state(self, which, state3):
        m = make_logistic(50, 3, seed=8)
        assert check_identity(which, state3.to(PREC), m, 50_000, seed=6).max_gap_in_se <= 4

    def test_detects_wrong_sign(self, state3, monkeypatch):
        from steinvi import estimators

        orig = estimators.f1
        monkeypatch.setattr(estimators, "f1", lambda H, C: -orig(H, C))
        m = make_logistic(50, 3, seed=8)
        assert check_identity(Identity.THM1A, state3, m, 20_000, seed=5).max_gap_in_se > 10

    def test_report_serializes(self, state3):
        import json

        rep = check_identity(Identity.LEMMA1, state3, make_logistic(20, 3, seed=1), 2000, seed=0)
        doc = json.loads(json.dumps(rep.to_dict()))
        assert doc["identity"] == "LEMMA1" and doc["n_samples"] == 2000

    def test_too_few_samples(self, state3):
        with pytest.raises(ValueError):
            check_identity(Identity.PRICE, state3, make_logistic(20, 3, seed=1), 1, seed=0)


class TestVariance:
    @pytest.mark.parametrize("par", list(Parametrization))
    def test_optimum(self, quad4, par):
        s = from_moments(quad4.theta_hat, quad4.posterior_cov, par)
        first, second = compare_variance(s, quad4, 10_000, seed=0)
        assert second.max_entry_variance <= 1e-24
        assert first.max_entry_variance > 0
        assert first.estimator == ("G1" if par is Parametrization.COVARIANCE else "G2")

    def test_offset_matches_closed_form(self, quad4):
        s = from_moments(quad4.theta_hat + 0.1, 1.3 * quad4.posterior_cov)
        first, second = compare_variance(s, quad4, 200_000, seed=1)
        expected = g1_variance_closed_form(s, quad4)
        low = np.tril_indices(4)
        np.testing.assert_allclose(first.entry_variances[low], expected[low], rtol=0.05)
        # the Hessian of a quadratic is constant, so f1 is too
        assert second.max_entry_variance <= 1e-24

    def test_two_samples(self, state3):
        for rep in compare_variance(state3, make_logistic(20, 3, seed=2), 2, seed=0):
            assert np.all(np.isfinite(rep.entry_variances)) and np.all(rep.entry_variances >= 0)

    def test_logistic_second_order_lower_near_mode(self):
        m = make_logistic(200, 3, seed=4, sigma0_sq=100.0)
        fit = laplace_fit(m)
        for par in Parametrization:
            first, second = compare_variance(from_moments(fit.mode, fit.cov, par), m, 20_000, seed=3)
            assert second.max_entry_variance < first.max_entry_variance


class TestElbo:
    def test_matched_quadratic(self, quad4):
        s = from_moments(quad4.theta_hat, quad4.posterior_cov)
        mean, se = elbo_estimate(s, quad4, 10_000, seed=0)
        exact = quad4.optimal_elbo()
        assert abs(mean - exact) <= max(4 * se, 1e-9)
        assert quadratic_elbo(s, quad4) == pytest.approx(exact, abs=1e-10)

    def test_mismatched_quadratic(self, quad4):
        s = from_moments(quad4.theta_hat + 0.2, 0.5 * quad4.posterior_cov)
        mean, se = elbo_estimate(s, quad4, 100_000, seed=1)
        assert abs(mean - quadratic_elbo(s, quad4)) <= 4 * se
        assert mean + 4 * se < quad4.optimal_elbo()

    def test_single_draw(self, state3):
        from steinvi.variational import DrawContext, h_derivs, transform

        m = make_logistic(20, 3, seed=3)
        mean, se = elbo_estimate(state3, m, 1, seed=9)
        z = np.random.default_rng(9).standard_normal((1, 3))
        assert mean == pytest.approx(float(h_derivs(state3, m, DrawContext(z, transform(state3, z))).value[0]))
        assert np.isnan(se)


class TestLaplace:
    def test_mode_and_elbo(self):
        m = make_logistic(300, 4, seed=2, sigma0_sq=100.0)
        fit = laplace_fit(m)
        np.testing.assert_allclose(m.evaluate(fit.mode).grad, 0, atol=1e-8)
        s = from_moments(fit.mode, fit.cov)
        mean, se = elbo_estimate(s, m, 200_000, seed=0)
        assert abs(mean - fit.elbo) <= 4 * se
        assert fit.elbo <= fit.log_evidence + 0.5
