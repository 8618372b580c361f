import numpy as np
import pytest
from scipy.special import erf

from steinvi.errors import SingularFactorError
from steinvi.variational import (
    DrawContext,
    GaussianVariational,
    Parametrization,
    draw,
    from_moments,
    h_derivs,
    initial_state,
    inverse_transform,
    log_q,
    score_precision_term,
    transform,
)

from conftest import make_logistic, random_lower

PREC = Parametrization.PRECISION


def matched_pair(rng, d):
    cov_state = GaussianVariational(rng.normal(0, 1, d), random_lower(d, rng))
    return cov_state, cov_state.to(PREC)


class TestState:
    def test_initial(self):
        s = initial_state(3, PREC)
        np.testing.assert_array_equal(s.mu, 0)
        np.testing.assert_array_equal(s.factor, np.eye(3))

    def test_rejects_bad_factor(self):
        with pytest.raises(SingularFactorError):
            GaussianVariational([0, 0], [[1, 0], [0, -1]])
        with pytest.raises(ValueError):
            GaussianVariational([0, 0], [[1, 1], [0, 1]])

    def test_conversion_preserves_moments(self, rng):
        c, p = matched_pair(rng, 4)
        np.testing.assert_allclose(c.covariance(), p.covariance(), atol=1e-12)
        np.testing.assert_allclose(c.precision(), p.precision(), atol=1e-10)
        assert c.log_det_cov() == pytest.approx(p.log_det_cov(), abs=1e-12)


class TestDraw:
    def test_covariance_transform(self):
        s = initial_state(2)
        np.testing.assert_array_equal(transform(s, [0.5, -1]), [0.5, -1])

    def test_precision_transform(self):
        s = GaussianVariational([0, 0], np.diag([2.0, 4.0]), PREC)
        np.testing.assert_allclose(transform(s, [1, 1]), [0.5, 0.25])

    def test_round_trip(self, rng):
        for s in matched_pair(rng, 5):
            z = rng.standard_normal((10, 5))
            np.testing.assert_allclose(inverse_transform(s, transform(s, z)), z, atol=1e-10)

    def test_moments(self, rng):
        n = 10**6
        for s in matched_pair(rng, 3):
            ctx = draw(s, np.random.default_rng(1), size=n)
            Sigma = s.covariance()
            se_mu = np.sqrt(np.diag(Sigma) / n)
            assert np.all(np.abs(ctx.theta.mean(0) - s.mu) <= 3 * se_mu)
            emp = np.cov(ctx.theta.T)
            # var of a sample covariance entry: (S_ii S_jj + S_ij^2) / n
            se_cov = np.sqrt((np.outer(np.diag(Sigma), np.diag(Sigma)) + Sigma**2) / n)
            assert np.all(np.abs(emp - Sigma) <= 3 * se_cov)

    def test_seeded(self):
        s = initial_state(3)
        a = draw(s, np.random.default_rng(5)).theta
        b = draw(s, np.random.default_rng(5)).theta
        np.testing.assert_array_equal(a, b)


class TestLogQ:
    def test_examples(self):
        assert log_q(initial_state(1), [0.0]) == pytest.approx(-0.5 * np.log(2 * np.pi))
        s = GaussianVariational([1.0, 2.0], np.eye(2))
        assert log_q(s, [1.0, 2.0]) == pytest.approx(-np.log(2 * np.pi))

    def test_parametrizations_agree(self, rng):
        c, p = matched_pair(rng, 4)
        theta = rng.normal(0, 1, (7, 4))
        np.testing.assert_allclose(log_q(c, theta), log_q(p, theta), atol=1e-10)

    def test_against_scipy(self, rng):
        from scipy.stats import multivariate_normal

        c, _ = matched_pair(rng, 3)
        theta = rng.normal(0, 1, 3)
        assert log_q(c, theta) == pytest.approx(multivariate_normal(c.mu, c.covariance()).logpdf(theta), rel=1e-10)

    def test_normalized_d1(self):
        # mass of [mu - a, mu + a] by uniform Monte Carlo vs. erf
        s = GaussianVariational([0.3], [[0.7]])
        a = 1.2
        u = np.random.default_rng(0).uniform(0.3 - a, 0.3 + a, 10**6)
        mass = 2 * a * np.exp(log_q(s, u[:, None])).mean()
        assert mass == pytest.approx(erf(a / (0.7 * np.sqrt(2))), abs=1e-3)


class TestHDerivs:
    def test_zero_at_exact_fit(self, quad4, rng):
        for par in Parametrization:
            s = from_moments(quad4.theta_hat, quad4.posterior_cov, par)
            ctx = DrawContext(np.zeros(4), s.mu.copy())
            hd = h_derivs(s, quad4, ctx, want_hessian=True)
            np.testing.assert_allclose(hd.grad, 0, atol=1e-12)
            z = rng.standard_normal(4)
            hd = h_derivs(s, quad4, DrawContext(z, transform(s, z)), want_hessian=True)
            np.testing.assert_allclose(hd.hess, 0, atol=1e-12)

    def test_finite_differences(self, rng):
        m = make_logistic(30, 4, seed=9)
        for s in matched_pair(rng, 4):
            z = rng.standard_normal(4)
            theta = transform(s, z)

            def h(t):
                return m.evaluate(t).value - log_q(s, t)

            fd = np.array([(h(theta + e) - h(theta - e)) / 2e-5 for e in 1e-5 * np.eye(4)])
            hd = h_derivs(s, m, DrawContext(z, theta))
            np.testing.assert_allclose(hd.grad, fd, rtol=1e-4, atol=1e-6)
            assert hd.value == pytest.approx(h(theta), rel=1e-12)

    def test_parametrizations_agree(self, rng):
        m = make_logistic(30, 3, seed=4)
        c, p = matched_pair(rng, 3)
        theta = rng.normal(0, 1, 3)
        hc = h_derivs(c, m, DrawContext(inverse_transform(c, theta), theta), True)
        hp = h_derivs(p, m, DrawContext(inverse_transform(p, theta), theta), True)
        assert hc.value == pytest.approx(hp.value, abs=1e-9)
        np.testing.assert_allclose(hc.grad, hp.grad, atol=1e-9)
        np.testing.assert_allclose(hc.hess, hp.hess, atol=1e-9)

    def test_score_has_zero_mean(self, rng):
        # grad of log q is -Sigma^{-1}(theta - mu)
        n = 10**6
        for s in matched_pair(rng, 3):
            z = np.random.default_rng(2).standard_normal((n, 3))
            score = -score_precision_term(s, z)
            se = score.std(0, ddof=1) / np.sqrt(n)
            assert np.linalg.norm(score.mean(0)) <= 4 * np.linalg.norm(se)
