import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import simpson
from scipy.stats import ks_2samp

from tfvasicek import asymptotics as asy
from tfvasicek import tfbm, vasicek
from tfvasicek.errors import FallbackRequired, NumericalError, QuadratureError, ValidationError
from tfvasicek.tfbm import SampleGrid, TfbmParams
from tfvasicek.vasicek import VasicekParams

P07 = TfbmParams(0.7, 1.0)
P05 = TfbmParams(0.5, 1.0)

mpmath.mp.dps = 30


def beta_sq_mpmath(H, lam, b):
    # independent oracle: the defining integral with v(u) = alpha^2 - kappa u^H K_H(lam u)
    H, lam, b = mpmath.mpf(H), mpmath.mpf(lam), mpmath.mpf(b)
    a2 = 2 * mpmath.gamma(2 * H) / (2 * lam) ** (2 * H)
    kappa = 2 * mpmath.gamma(H + mpmath.mpf(0.5)) / (mpmath.sqrt(mpmath.pi) * (2 * lam) ** H)
    v = lambda u: a2 - kappa * u**H * mpmath.besselk(H, lam * u) if u > 0 else mpmath.mpf(0)
    return float(b / 2 * mpmath.quad(lambda u: mpmath.exp(-b * u) * v(u), [0, 1, 10, mpmath.inf]))


class TestBetaSquared:
    def test_half_order_closed_form(self):
        # H = 1/2: v(u) = (1 - e^{-lam u}) / lam, beta^2 = 1 / (2 (b + lam))
        for lam, b in ((1.0, 1.0), (0.5, 2.0), (2.0, 0.3)):
            p = TfbmParams(0.5, lam)
            exp = 1 / (2 * (b + lam))
            np.testing.assert_allclose(asy.beta_squared_quadrature(p, b), exp, rtol=1e-10)
            np.testing.assert_allclose(asy.beta_squared_hypergeometric(p, b), exp, rtol=1e-12)

    def test_example_value(self):
        assert asy.beta_squared(P05, 1.0) == (pytest.approx(0.25, abs=1e-12), "hypergeometric")

    @pytest.mark.parametrize("H, lam, b", [(0.7, 1.0, 1.0), (0.3, 2.0, 0.5), (1.4, 0.5, 1.5)])
    def test_against_mpmath(self, H, lam, b):
        ref = beta_sq_mpmath(H, lam, b)
        p = TfbmParams(H, lam)
        np.testing.assert_allclose(asy.beta_squared_quadrature(p, b), ref, rtol=1e-9)
        np.testing.assert_allclose(asy.beta_squared_hypergeometric(p, b), ref, rtol=1e-9)

    def test_routes_agree_on_grid(self):
        worst = 0.0
        for H in (0.2, 0.5, 0.7, 1.2, 1.8):
            for lam in (0.5, 1.0, 2.0):
                for b in (0.3, 1.0, 2.5):
                    p = TfbmParams(H, lam)
                    q = asy.beta_squared_quadrature(p, b)
                    h = asy.beta_squared_hypergeometric(p, b)
                    worst = max(worst, abs(q - h) / abs(h))
        assert worst <= 1e-8

    def test_psd_bound_on_reference_grid(self):
        for H in (0.3, 0.5, 0.7, 1.0, 1.5):
            for lam in (0.5, 1.0, 2.0):
                for b in (0.25, 1.0, 3.0):
                    p = TfbmParams(H, lam)
                    be2, _ = asy.beta_squared(p, b)
                    assert 0 < be2 < tfbm.alpha_squared(p) / 2 + 1e-12

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.05, 2.0), st.floats(0.1, 5.0), st.floats(0.05, 5.0))
    def test_strictly_inside_psd_bound(self, H, lam, b):
        p = TfbmParams(H, lam)
        be2, _ = asy.beta_squared(p, b)
        assert 0 < be2 < tfbm.alpha_squared(p) / 2

    def test_fallback(self):
        with pytest.raises(FallbackRequired):
            asy.beta_squared_hypergeometric(P07, 100.0)
        val, route = asy.beta_squared(P07, 100.0)
        assert route == "quadrature"
        np.testing.assert_allclose(val, beta_sq_mpmath(0.7, 1.0, 100.0), rtol=1e-8)

    @pytest.mark.parametrize("b", [0.0, -1.0, math.nan, math.inf, True])
    def test_invalid_b(self, b):
        with pytest.raises(ValidationError):
            asy.beta_squared(P07, b)

    def test_quadrature_failure_is_reported(self, monkeypatch):
        monkeypatch.setattr(asy, "variance", lambda p, u: math.nan)
        with pytest.raises(QuadratureError, match="worst subinterval"):
            asy.beta_squared_quadrature(P07, 1.0)


class TestSigma:
    def test_example(self):
        c = asy.sigma_matrix(P05, 1.0)
        np.testing.assert_allclose(c.sigma_matrix, [[0.25, 0.25, 0], [0.25, 0.75, 0], [0, 0, 0.25]], atol=1e-12)
        assert not c.sigma_matrix.flags.writeable

    def test_positive_semidefinite(self):
        for H in (0.1, 0.7, 1.9):
            for b in (0.1, 1.0, 10.0):
                c = asy.sigma_matrix(TfbmParams(H, 1.0), b)
                assert np.linalg.eigvalsh(c.sigma_matrix).min() > 0

    def test_rejects_bad_beta(self):
        with pytest.raises(NumericalError):
            asy.sigma_matrix(P05, 1.0, beta_sq=2.0)

    def test_limit_law_params(self):
        c = asy.sigma_matrix(P05, 1.0)
        lp = asy.limit_law_params(c, VasicekParams(1.0, 1.0, 2.0, 0.5))
        assert lp.a_limit_var == pytest.approx(4.0)
        assert lp.eta1_var == pytest.approx(4 * 4 * 0.25)
        assert lp.eta2_mean == pytest.approx(1.5)
        assert lp.eta2_var == pytest.approx(1.0)

    def test_limit_law_params_checks_b(self):
        with pytest.raises(ValidationError):
            asy.limit_law_params(asy.sigma_matrix(P05, 1.0), VasicekParams(1.0, 2.0, 1.0, 0.0))


def quadratic_form_moments(p, b, T, n=2000):
    # independent oracle: Simpson weights against the exact covariance matrix on a fine grid
    g = SampleGrid(T, n)
    t = g.times
    C = np.zeros((n + 1, n + 1))
    C[1:, 1:] = tfbm.covariance_matrix(p, g)
    w = simpson(np.eye(n + 1), x=t, axis=1)
    wz = w * np.exp(-b * t)
    wu = w * np.exp(-b * (T - t))
    eT = np.zeros(n + 1)
    eT[-1] = 1.0
    wv = eT - b * wu
    q = lambda x, y: float(x @ C @ y)
    return {"ez2": q(wz, wz), "eu2": q(wu, wu), "ev2": q(wv, wv), "ezu": q(wz, wu),
            "ezv": q(wz, wv), "euv": q(wu, wv), "ezb": q(wz, eT), "eub": q(wu, eT)}


class TestFiniteHorizonMoments:
    @pytest.mark.parametrize("b", [0.5, 1.3])
    def test_against_quadratic_form(self, b):
        m = asy.finite_T_second_moments(P07, b, 3.0)
        ref = quadratic_form_moments(P07, b, 3.0)
        for k, v in ref.items():
            np.testing.assert_allclose(getattr(m, k), v, rtol=1e-5, atol=1e-7, err_msg=k)

    def test_zero_horizon(self):
        m = asy.finite_T_second_moments(P07, 1.0, 0.0)
        assert np.all(m.covariance() == 0.0)

    def test_converges_to_sigma(self):
        c = asy.sigma_matrix(P07, 1.0)
        errs = [np.abs(asy.finite_T_second_moments(P07, 1.0, T).covariance() - c.sigma_matrix).max() for T in (5, 10, 20, 40)]
        assert all(e1 > e2 for e1, e2 in zip(errs, errs[1:]))
        assert errs[-1] < 1e-10

    def test_covariance_is_psd(self):
        for T in (0.5, 2.0, 10.0):
            assert np.linalg.eigvalsh(asy.finite_T_second_moments(P07, 0.7, T).covariance()).min() > -1e-12

    def test_guards(self):
        with pytest.raises(ValidationError):
            asy.finite_T_second_moments(P07, 1.0, -1.0)
        with pytest.raises(ValidationError):
            asy.finite_T_second_moments(P07, 1.0, 60.0)

    def test_empirical_covariance(self):
        b, T = 1.0, 10.0
        g = SampleGrid.from_step(T, 0.02)
        B = tfbm.sample_paths(P07, g, 5000, 77).values
        x = np.column_stack(vasicek.auxiliary_zuv(B, b, g))
        emp = x.T @ x / len(x)
        cov = asy.finite_T_second_moments(P07, b, T).covariance()
        for i in range(3):
            for j in range(3):
                se = math.sqrt((cov[i, j] ** 2 + cov[i, i] * cov[j, j]) / len(x))
                assert abs(emp[i, j] - cov[i, j]) <= 5 * se, (i, j, emp[i, j], cov[i, j])


class TestLimitSamplers:
    def lp(self, sigma=1.0):
        return asy.limit_law_params(asy.sigma_matrix(P07, 1.0), VasicekParams(1.0, 1.0, sigma, 0.5))

    def test_deterministic(self):
        d1 = asy.sample_limit_laws(self.lp(), 1000, 5)
        d2 = asy.sample_limit_laws(self.lp(), 1000, 5)
        np.testing.assert_array_equal(d1.joint, d2.joint)
        assert not np.array_equal(d1.a_limit, asy.sample_limit_laws(self.lp(), 1000, 6).a_limit)

    def test_prefix_stability(self):
        # the first draws do not depend on how many are requested
        d1 = asy.sample_limit_laws(self.lp(), 100, 5)
        d2 = asy.sample_limit_laws(self.lp(), 5000, 5)
        np.testing.assert_array_equal(d1.joint, d2.joint[:100])

    def test_sigma_scaling(self):
        d1 = asy.sample_limit_laws(self.lp(1.0), 1000, 5)
        d3 = asy.sample_limit_laws(self.lp(3.0), 1000, 5)
        np.testing.assert_allclose(d3.a_limit, 3 * d1.a_limit, rtol=1e-13)

    def test_xi_covariance(self):
        lp = self.lp()
        xi = asy.sample_limit_laws(lp, 200_000, 1).xi
        np.testing.assert_allclose(np.cov(xi.T), asy.sigma_matrix(P07, 1.0).sigma_matrix, atol=0.01)

    def test_a_limit_variance(self):
        lp = self.lp(0.5)
        a = asy.sample_limit_laws(lp, 1_000_000, 2).a_limit
        np.testing.assert_allclose(a.var(), lp.a_limit_var, rtol=0.01)
        np.testing.assert_allclose(lp.a_limit_var, 0.25 * tfbm.alpha_squared(P07), rtol=1e-14)

    def test_ratio_matches_independent_construction(self):
        lp = self.lp()
        via_sigma = asy.sample_limit_laws(lp, 100_000, 3).b_limit
        direct = asy.sample_eta_ratio(lp, 100_000, 4)
        assert ks_2samp(via_sigma, direct).pvalue > 0.001

    def test_zero_draws(self):
        assert asy.sample_limit_laws(self.lp(), 0, 1).joint.shape == (0, 2)

    @pytest.mark.parametrize("n", [-1, 1.5, True])
    def test_bad_n(self, n):
        with pytest.raises(ValidationError):
            asy.sample_limit_laws(self.lp(), n, 1)
