import math
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from spikesim import analytic as A
from spikesim import limits as L
from spikesim import simulate as S
from spikesim.errors import DomainError
from spikesim.model import CycleBoundaries, DiffusionModel

BB = DiffusionModel.bb_linear
RABI = DiffusionModel.rabi_linearized

KAPPA_EX1 = 0.16958747517801886
KAPPA_RABI = 0.16692737036544633


def kappa_ex1_riemann(a, b, s, alpha, beta, n_y=6000, n_w=600):
    """Brute-force midpoint sum of (2/s^2) e^{c(1/w - 1/y)} w^k y^{-k-2} over y > 0, alpha < w < beta.

    ``y`` is summed in log coordinates on a truncated range; the four
    regions of the cycle cover this whole strip.
    """
    c, k = a / s**2, b / s**2
    t = np.linspace(math.log(1e-3), math.log(1e5), n_y + 1)
    tm = 0.5 * (t[1:] + t[:-1])
    y = np.exp(tm)
    w_edges = np.linspace(alpha, beta, n_w + 1)
    w = 0.5 * (w_edges[1:] + w_edges[:-1])
    F = np.exp(c * (1 / w[None, :] - 1 / y[:, None])) * w[None, :] ** k * y[:, None] ** (-k - 2) * y[:, None]
    total = F.sum() * (t[1] - t[0]) * (w_edges[1] - w_edges[0])
    return 1.0 / (2 / s**2 * total)


class TestKappaLimits:
    def test_example1_value(self):
        assert L.kappa_limit_example1(1, 1, 1, 1, 2) == pytest.approx(KAPPA_EX1, rel=1e-12)

    def test_example1_riemann_oracle(self):
        assert kappa_ex1_riemann(1, 1, 1, 1, 2) == pytest.approx(L.kappa_limit_example1(1, 1, 1, 1, 2), rel=1e-4)

    @pytest.mark.parametrize("a,b,s,alpha,beta", [(1, 1, 1, 1, 2), (2.0, 0.5, 0.8, 0.5, 3.0), (0.7, 3.0, 1.5, 1, 1.2)])
    def test_example1_gamma_product(self, a, b, s, alpha, beta):
        # the y-integral over (0, inf) is Gamma(k+1) c^-(k+1)
        c, k = a / s**2, b / s**2
        wint = integrate.quad(lambda w: w**k * math.exp(c / w), alpha, beta, epsabs=0, epsrel=1e-13)[0]
        ref = 1.0 / (2 / s**2 * special.gamma(k + 1) * c ** (-k - 1) * wint)
        assert L.kappa_limit_example1(a, b, s, alpha, beta) == pytest.approx(ref, rel=1e-10)

    def test_example1_diagonal_integrand(self):
        # on w = y the exponential factor is 1 and the integrand is y^-2 (times 2/s^2)
        for y in (0.5, 1.3, 4.0):
            assert math.exp(1.0 * (1 / y - 1 / y)) * y * y ** (-3) == pytest.approx(y**-2)

    def test_rabi_value_and_high_precision_oracle(self):
        mpmath.mp.dps = 40
        la = mpmath.quad(lambda w: mpmath.exp(w**2 / 2), [0, 1])
        ref = 1 / (4 * la * mpmath.sqrt(mpmath.pi / 2))
        k = L.kappa_limit_rabi(1.0)
        assert k == pytest.approx(float(ref), rel=1e-12)
        assert k == pytest.approx(KAPPA_RABI, rel=1e-12)
        assert 1 / k == pytest.approx(5.99, abs=0.01)

    @pytest.mark.parametrize("b", [0.5, 1.0, 2.0])
    def test_rabi_product_equals_direct_2d(self, b):
        b5 = b**5
        ymax = math.sqrt(2 * 80 / b5)
        val = integrate.dblquad(lambda w, y: math.exp(b5 * (w * w - y * y) / 2), 0, ymax, 0, 1,
                                epsabs=0, epsrel=1e-12)[0]
        assert 1 / (4 * b**4 * val) == pytest.approx(L.kappa_limit_rabi(b), rel=1e-8)

    def test_rabi_first_factor(self):
        for b in (0.5, 1.0, 2.0):
            inv = 1 / L.kappa_limit_rabi(b)
            gauss = math.sqrt(math.pi / (2 * b**5))
            first = integrate.quad(lambda w: math.exp(b**5 * w * w / 2), 0, 1, epsabs=0, epsrel=1e-13)[0]
            assert inv / (4 * b**4 * gauss) == pytest.approx(first, rel=1e-10)

    def test_invalid(self):
        with pytest.raises(DomainError):
            L.kappa_limit_example1(1, 1, 1, 2, 1)
        with pytest.raises(DomainError):
            L.kappa_limit_rabi(0.0)


class TestKappaNumeric:
    def test_example1_converges_to_limit(self):
        # convergence here is faster than first order, so the linear fit is rejected
        with pytest.warns(RuntimeWarning, match="fit residual"):
            est = L.kappa_numeric(BB(1.0), CycleBoundaries.linear(), 1.0, [0.1, 0.05, 0.02, 0.01])
        np.testing.assert_allclose(est.kappa_eps, [0.174351, 0.171389, 0.170011, 0.169719], rtol=1e-5)
        gaps = np.abs(np.array(est.kappa_eps) / KAPPA_EX1 - 1)
        assert np.all(np.diff(gaps) < 0)
        assert not est.extrapolated and est.kappa == est.kappa_eps[-1]
        assert est.kappa == pytest.approx(KAPPA_EX1, rel=0.02)

    def test_two_point_extrapolation(self):
        est = L.kappa_numeric(BB(1.0), CycleBoundaries.linear(), 1.0, [0.02, 0.01])
        k1, k2 = est.kappa_eps
        assert est.extrapolated
        assert est.kappa == pytest.approx(2 * k2 - k1, rel=1e-12)
        assert est.error == pytest.approx(abs(k2 - k1), rel=1e-9)
        assert est.kappa == pytest.approx(KAPPA_EX1, rel=0.02)

    def test_rabi_converges_to_limit(self):
        est = L.kappa_numeric(RABI(1.0), CycleBoundaries.rabi(), 1.0, [0.02, 0.01, 0.005])
        assert est.kappa == pytest.approx(KAPPA_RABI, rel=0.02)
        assert est.kappa_eps[-1] == pytest.approx(KAPPA_RABI, rel=0.01)

    def test_independent_of_z(self):
        m = BB(1.0)
        k1 = L.kappa_numeric(m, CycleBoundaries.linear(), 1.0, [0.01]).kappa_eps[0]
        k2 = L.kappa_numeric(m, CycleBoundaries.linear(), 2.0, [0.01]).kappa_eps[0]
        assert abs(k1 / k2 - 1) < 0.01

    def test_lambda_ignored(self):
        a = L.kappa_numeric(BB(1.0, lam=9.0), CycleBoundaries.linear(), 1.0, [0.05]).kappa_eps[0]
        b = L.kappa_numeric(BB(1.0), CycleBoundaries.linear(), 1.0, [0.05]).kappa_eps[0]
        assert a == b

    def test_poor_fit_falls_back_with_warning(self):
        with pytest.warns(RuntimeWarning):
            est = L.kappa_numeric(BB(1.0), CycleBoundaries.linear(), 1.0, [0.3, 0.1, 0.02, 0.01], fit_tol=1e-6)
        assert not est.extrapolated and est.kappa == est.kappa_eps[-1]

    def test_grid_must_decrease(self):
        with pytest.raises(DomainError):
            L.kappa_numeric(BB(1.0), CycleBoundaries.linear(), 1.0, [0.01, 0.02])


class TestAlphaAndQ:
    def test_linear_closed_form(self):
        assert L.alpha_xz(BB(1.0), 1.0, 2.0) == pytest.approx(0.75, abs=1e-8)

    @settings(max_examples=20, deadline=None)
    @given(b=st.floats(0.2, 5.0), x=st.floats(0.01, 0.99), z=st.floats(0.1, 10.0))
    def test_linear_closed_form_property(self, b, x, z):
        x = x * z
        assert L.alpha_xz(BB(b), x, z) == pytest.approx(1 - (x / z) ** (b + 1), rel=1e-9, abs=1e-12)

    def test_rabi_closed_form(self):
        f = lambda y: math.exp(-1 / (2 * y * y))
        num = integrate.quad(f, 0.5, 1.0, epsabs=0, epsrel=1e-13)[0]
        den = integrate.quad(f, 0.0, 1.0, epsabs=0, epsrel=1e-13)[0]
        assert L.alpha_xz(RABI(1.0), 0.5, 1.0) == pytest.approx(num / den, rel=1e-9)

    def test_endpoints_and_monotonicity(self):
        m = BB(1.0)
        assert L.alpha_xz(m, 1.0, 1.0) == 0.0
        assert L.alpha_xz(m, 1e-6, 1.0) == pytest.approx(1.0, abs=1e-10)
        xs = [L.alpha_xz(m, x, 1.0) for x in (0.1, 0.3, 0.6, 0.9)]
        zs = [L.alpha_xz(m, 0.5, z) for z in (0.6, 1.0, 2.0)]
        assert np.all(np.diff(xs) < 0) and np.all(np.diff(zs) > 0)

    def test_finite_eps_agrees(self):
        eps = 1e-3
        m = BB(1.0, eps=eps)
        fin = 1 - A.hitting_prob(m, 1.0, eps, 2.0)
        assert abs(fin - L.alpha_xz(m, 1.0, 2.0)) < 1e-3

    def test_independent_of_eps_and_lambda(self):
        assert L.alpha_xz(BB(1.0, eps=0.3, lam=5.0), 0.5, 1.0) == L.alpha_xz(BB(1.0), 0.5, 1.0)

    def test_q(self):
        m = BB(1.0)
        assert L.q_of_z(m, 1.0) == 1.0
        assert L.q_of_z(m, 2.0) == pytest.approx(4.0, rel=1e-9)
        assert L.q_of_z(m, 0.5) == pytest.approx(0.5**2, rel=1e-9)

    def test_q_branches_agree_at_one(self):
        m = BB(1.0)
        below = 1 - L.alpha_xz(m, 1.0, 1.0)
        above = 1 / (1 - L.alpha_xz(m, 1.0, 1.0))
        assert below == above == 1.0
        d = 1e-9
        assert L.q_of_z(m, 1 - d) == pytest.approx(L.q_of_z(m, 1 + d), abs=1e-8)

    def test_claim_ratio(self):
        m = BB(1.0, eps=1e-3)
        bd = CycleBoundaries.linear()
        ratio = A.spike_prob(m, bd, 2.0) / A.spike_prob(m, bd, 1.0)
        assert ratio == pytest.approx(1 / L.q_of_z(m, 2.0), rel=0.01)


class TestMixtureLaw:
    def test_pure_exponential(self):
        p = L.mixture_law(0.2, 3.0, 1.0)
        for t in (0.0, 0.5, 4.0):
            assert p.survival(t) == pytest.approx(math.exp(-0.6 * t))

    def test_point_mass(self):
        p = L.mixture_law(0.2, 3.0, 0.0)
        assert p.cdf(0.0) == 1.0 and p.survival(1.0) == 0.0

    def test_survival_shape(self):
        p = L.mixture_law(0.2, 1.0, 0.4)
        assert p.survival(-1e-12) == 1.0
        assert p.survival(0.0) == pytest.approx(0.4)
        assert p.survival(1e6) == pytest.approx(0.0, abs=1e-300)
        t = np.linspace(0, 50, 200)
        assert np.all(np.diff(p.survival(t)) <= 0)
        assert p.atom_weight + p.alpha_xz == 1.0

    def test_q_rate(self):
        assert L.mixture_law(0.2, 2.0, 0.5, q_z=4.0).rate == pytest.approx(0.1)

    def test_invalid(self):
        with pytest.raises(DomainError):
            L.mixture_law(0.0, 1.0, 0.5)
        with pytest.raises(DomainError):
            L.mixture_law(0.1, 1.0, 1.5)


class TestScalingCurve:
    bd = CycleBoundaries.linear()

    def test_identity(self):
        m = BB(1.0, eps=0.02)
        lam = L.scaling_lambda(m, self.bd, 1.0, 1.0)
        assert lam**2 * A.spike_prob(m, self.bd, 1.0) == pytest.approx(1.0, rel=1e-10)
        assert lam == pytest.approx(21.00346733177496, rel=1e-10)

    def test_J_scaling(self):
        m = BB(1.0, eps=0.02)
        assert L.scaling_lambda(m, self.bd, 1.0, 2.0) == pytest.approx(
            math.sqrt(2) * L.scaling_lambda(m, self.bd, 1.0, 1.0), rel=1e-12)

    def test_lambda_grows_as_eps_falls(self):
        lams = [L.scaling_lambda(BB(1.0), self.bd, 1.0, 1.0, eps=e) for e in (0.1, 0.05, 0.02, 0.01)]
        assert np.all(np.diff(lams) > 0)

    def test_rabi_extreme_scale(self):
        lam = L.scaling_lambda(RABI(1.0), CycleBoundaries.rabi(), 1.0, 1.0, eps=0.05)
        assert math.isfinite(lam) and lam > 1e10


class TestTvBound:
    def test_values(self):
        assert L.tv_bound(0.0, 0.0) == 0.0
        assert L.tv_bound(0.5, 0.0) == pytest.approx(0.25 / math.sqrt(0.5))
        assert L.tv_bound(0.5, 0.0) == pytest.approx(0.3536, abs=1e-4)

    def test_invalid(self):
        with pytest.raises(DomainError):
            L.tv_bound(1.0, 0.0)
        with pytest.raises(DomainError):
            L.tv_bound(0.1, -1.0)

    @pytest.mark.slow
    def test_decreases_along_curve(self):
        # empirical E|p N - kappa J T| from simulated cycle counts
        bd = CycleBoundaries.linear()
        kappa = KAPPA_EX1
        T = 2.0 / kappa
        bounds = []
        for eps in (0.1, 0.02):
            m = BB(1.0, eps=eps)
            p = A.spike_prob(m, bd, 1.0)
            m = m.replace(lam=math.sqrt(1.0 / p))
            trains = S.run_spike_processes(m, bd, 1.0, T, 40, S.SimConfig(rng_master_seed=11))
            n = np.array([tr.n_cycles for tr in trains], dtype=float)
            bounds.append(L.tv_bound(p, float(np.mean(np.abs(p * n - kappa * T)))))
        assert bounds[1] < bounds[0]


class TestRabiAsymptotics:
    def test_empty_numerator(self):
        assert L.rabi_spike_prob_asymptotic(1.0, 0.05, 0.0, 1.0) == 0.0

    def test_ratio_tends_to_one(self):
        ratios = []
        for eps in (0.1, 0.07, 0.05):
            lp = A.log_spike_prob(RABI(1.0, eps=eps), CycleBoundaries.rabi(1.0, 1.0), 1.0)
            ratios.append(math.exp(lp - L.log_rabi_spike_prob_asymptotic(1.0, eps, 1.0, 1.0)))
        dev = np.abs(np.array(ratios) - 1)
        np.testing.assert_allclose(ratios, [0.8727, 0.9094, 0.9345], atol=5e-4)
        assert np.all(np.diff(dev) < 0)

    def test_log_value_dominated_by_exponent(self):
        eps, b = 0.05, 1.0
        v = L.log_rabi_spike_prob_asymptotic(b, eps, 1.0, 1.0)
        mpmath.mp.dps = 30
        num = mpmath.quad(lambda x: mpmath.exp(x * x / 2), [0, 1])
        den = mpmath.quad(lambda x: mpmath.exp(-1 / (2 * x * x)), [0, 1])
        ref = 2 * math.log(eps) - 1 / (6 * eps**2) + float(mpmath.log(num / den))
        assert v == pytest.approx(ref, rel=1e-12)
        assert abs(v + 66.67) < 10


class TestZeps:
    def test_substitution_oracle(self):
        b, eps = 1.0, 0.05
        # u = 1/x turns the integral into int_0^inf u^2 exp(-eps u^3/3 + b u^2/2) du
        mpmath.mp.dps = 30
        g = lambda u: u**2 * mpmath.exp(-eps * u**3 / 3 + b * u**2 / 2)
        peak = float(mpmath.findroot(lambda u: 2 / u + b * u - eps * u**2, b / eps))
        ref = mpmath.quad(g, [0, peak / 2, peak * 0.9, peak, peak * 1.1, 2 * peak, mpmath.inf])
        assert L.log_z_eps(b, eps) == pytest.approx(float(mpmath.log(ref)), rel=1e-6)
        assert L.z_eps(b, eps) == pytest.approx(float(ref), rel=1e-6)

    def test_integrand_vanishes_at_ends(self):
        f = lambda x: x**-4.0 * math.exp(-0.05 / (3 * x**3) + 1 / (2 * x * x))
        assert f(1e-3) == 0.0 and f(1e4) < 1e-15

    def test_diagnostic_rows(self):
        rows = L.zeps_diagnostic(1.0, [0.1, 0.07, 0.05])
        assert [r["eps"] for r in rows] == [0.1, 0.07, 0.05]
        for r in rows:
            assert all(math.isfinite(r[k]) for k in ("log_z_eps", "log_p", "log_pz", "log_pz_limit"))
        assert rows[0]["log_pz_limit"] == pytest.approx(2.6632, abs=1e-4)

    def test_invalid(self):
        with pytest.raises(DomainError):
            L.z_eps(1.0, 0.0)
