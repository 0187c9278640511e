import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from spikesim.errors import DomainError
from spikesim.model import (
    CycleBoundaries,
    DiffusionModel,
    Family,
    TaylorBounds,
    diffusion_coeff,
    drift,
    feller_transform,
    validate_model,
)

pos = st.floats(1e-3, 1e3, allow_nan=False, allow_infinity=False)


class TestDrift:
    def test_vanishes_at_balance_point(self):
        m = DiffusionModel.bb_linear(1.0, lam=1.0, eps=0.1)
        assert drift(m, 0.1) == 0.0

    def test_bb_linear_substitution(self):
        m = DiffusionModel.bb_linear(1.0, lam=2.0, eps=0.1)
        assert drift(m, 0.2) == pytest.approx(-0.2, rel=1e-15)

    def test_rabi_substitution(self):
        m = DiffusionModel.rabi_linearized(1.0, lam=1.0, eps=0.01)
        assert drift(m, 1.0) == pytest.approx(-0.495, rel=1e-15)

    @pytest.mark.parametrize("x", [0.0, -1.0])
    def test_nonpositive_x_rejected(self, x):
        with pytest.raises(DomainError):
            drift(DiffusionModel.bb_linear(), x)

    @given(b=pos, lam=pos, eps=st.floats(0, 10), x=pos)
    def test_presets_match_closed_forms(self, b, lam, eps, x):
        for fam in (DiffusionModel.bb_linear, DiffusionModel.rabi_linearized):
            m = fam(b, lam=lam, eps=eps)
            ref = 0.5 * lam**2 * (eps - b * x)
            assert drift(m, x) == pytest.approx(ref, rel=1e-14, abs=1e-14 * 0.5 * lam**2 * (eps + b * x))

    @given(b=pos, eps=st.floats(1e-3, 10))
    def test_zero_where_perturbation_balances_restoring_term(self, b, eps):
        m = DiffusionModel.bb_linear(b, eps=eps)
        x = eps / b
        assert abs(drift(m, x)) <= 1e-15 * eps

    def test_vectorized(self):
        m = DiffusionModel.bb_linear(2.0, eps=0.5)
        x = np.array([0.1, 0.25, 1.0])
        np.testing.assert_allclose(drift(m, x), 0.5 * (0.5 - 2 * x), rtol=1e-15)


class TestDiffusionCoeff:
    @pytest.mark.parametrize("ctor", [DiffusionModel.bb_linear, DiffusionModel.rabi_linearized,
                                      DiffusionModel.asym_linear])
    def test_zero_at_origin(self, ctor):
        assert diffusion_coeff(ctor(), 0.0) == 0.0

    def test_bb_linear(self):
        assert diffusion_coeff(DiffusionModel.bb_linear(lam=3.0), 0.5) == pytest.approx(1.5)

    def test_rabi(self):
        assert diffusion_coeff(DiffusionModel.rabi_linearized(lam=2.0), 0.5) == pytest.approx(0.5)

    @given(lam=pos, x=st.floats(0, 1e3))
    def test_presets_match_closed_forms(self, lam, x):
        assert diffusion_coeff(DiffusionModel.bb_linear(lam=lam), x) == pytest.approx(lam * x, rel=1e-14)
        assert diffusion_coeff(DiffusionModel.rabi_linearized(lam=lam), x) == pytest.approx(lam * x * x, rel=1e-14)

    def test_negative_rejected(self):
        with pytest.raises(DomainError):
            diffusion_coeff(DiffusionModel.bb_linear(), -0.1)


class TestConstruction:
    def test_preset_coefficients(self):
        m = DiffusionModel.bb_linear(2.0)
        x = np.array([0.5, 3.0])
        np.testing.assert_array_equal(m.b1(x), [1.0, 1.0])
        np.testing.assert_allclose(m.b2(x), 2 * x)
        np.testing.assert_allclose(m.sigma(x), x)
        r = DiffusionModel.rabi_linearized(2.0)
        np.testing.assert_allclose(r.sigma(x), x**2)

    def test_asym_linear_coefficients(self):
        m = DiffusionModel.asym_linear(2.0, 1.5, 0.5, a1=1.0, c2=0.3, c3=0.1)
        x = 0.7
        assert m.b1(x) == pytest.approx(2.0 + x / (1 + x))
        assert m.b2(x) == pytest.approx(1.5 * x + 0.3 * x**2 + 0.1 * x**3)
        assert m.sigma(x) == pytest.approx(0.5 * x)

    @pytest.mark.parametrize("kw", [dict(b=0.0), dict(b=-1.0)])
    def test_invalid_b(self, kw):
        with pytest.raises(DomainError):
            DiffusionModel.bb_linear(**kw)

    def test_asym_linear_b1_bounded_away_from_zero(self):
        with pytest.raises(DomainError):
            DiffusionModel.asym_linear(1.0, 1.0, 1.0, a1=-1.0)

    @pytest.mark.parametrize("kw", [dict(lam=0.0), dict(lam=math.inf), dict(eps=-0.1)])
    def test_invalid_lam_eps(self, kw):
        with pytest.raises(DomainError):
            DiffusionModel.bb_linear(**kw)

    def test_immutable_and_replace(self):
        m = DiffusionModel.bb_linear(1.0, eps=0.1)
        with pytest.raises(Exception):
            m.eps = 0.2
        m2 = m.replace(lam=3.0)
        assert (m2.lam, m2.eps, m.lam) == (3.0, 0.1, 1.0)

    def test_sigma_prime_exact_for_presets(self):
        x = np.array([0.3, 2.0])
        np.testing.assert_allclose(DiffusionModel.rabi_linearized().sigma_prime(x), 2 * x)
        np.testing.assert_allclose(DiffusionModel.asym_linear(sigma_prime=0.7).sigma_prime(x), 0.7)

    def test_custom_sigma_prime_by_difference(self):
        m = DiffusionModel.custom(lambda x: np.ones_like(x), lambda x: x, lambda x: x**1.5)
        assert m.family is Family.Custom
        assert m.sigma_prime(2.0) == pytest.approx(1.5 * 2.0**0.5, rel=1e-7)


class TestFellerTransform:
    def test_rabi_limit_form(self):
        t = feller_transform(DiffusionModel.rabi_linearized())
        assert math.isinf(t.anchor)
        assert t.F(2.0) == pytest.approx(-0.5)

    def test_linear_log_form(self):
        t = feller_transform(DiffusionModel.bb_linear(), anchor=3.0)
        assert t.F(3.0) == 0.0
        assert t.F(6.0) == pytest.approx(math.log(2.0))

    @pytest.mark.parametrize("model", [
        DiffusionModel.bb_linear(),
        DiffusionModel.rabi_linearized(),
        DiffusionModel.asym_linear(sigma_prime=0.5),
        DiffusionModel.custom(lambda x: np.ones_like(x), lambda x: x, lambda x: x + x**2),
    ])
    def test_round_trip(self, model):
        t = feller_transform(model)
        for x in (0.01, 1.0, 10.0):
            assert float(t.F_inv(t.F(x))) == pytest.approx(x, rel=1e-12)

    @pytest.mark.parametrize("model", [
        DiffusionModel.bb_linear(lam=2.5, eps=0.1),
        DiffusionModel.rabi_linearized(lam=1.7, eps=0.1),
        DiffusionModel.asym_linear(sigma_prime=0.5, lam=3.0),
    ])
    def test_unit_diffusion(self, model):
        t = feller_transform(model)
        x = np.geomspace(0.05, 20, 100)
        np.testing.assert_allclose(t.diffusion_coeff(t.F(x)), model.lam, rtol=1e-10)

    def test_strictly_increasing(self):
        for model in (DiffusionModel.bb_linear(), DiffusionModel.rabi_linearized()):
            t = feller_transform(model)
            y = t.F(np.geomspace(1e-3, 1e3, 200))
            assert np.all(np.diff(y) > 0)

    def test_custom_matches_numeric_integral(self):
        m = DiffusionModel.custom(lambda x: np.ones_like(x), lambda x: x, lambda x: x + x**2)
        t = feller_transform(m, anchor=1.0)
        # int du / (u (1+u)) = ln(u/(1+u))
        ref = math.log(3.0 / 4.0) - math.log(1.0 / 2.0)
        assert float(t.F(3.0)) == pytest.approx(ref, rel=1e-11)

    def test_rabi_drift_from_ito_formula(self):
        # Y = -1/X: drift is (lam^2/2)(eps Y^2 + b Y + 2/Y)
        lam, eps, b = 1.3, 0.2, 0.8
        t = feller_transform(DiffusionModel.rabi_linearized(b, lam=lam, eps=eps))
        y = -np.array([0.5, 1.0, 4.0, 20.0])
        ref = 0.5 * lam**2 * (eps * y**2 + b * y + 2.0 / y)
        np.testing.assert_allclose(t.drift(y), ref, rtol=1e-13)

    def test_drift_matches_generic_ito_formula(self):
        # mu_Y = F'(x) mu(x) + F''(x) lam^2 sigma^2 / 2, F'' by central difference
        m = DiffusionModel.custom(lambda x: 1 + 0 * x, lambda x: 2 * x, lambda x: x + x**2, lam=1.5, eps=0.3)
        t = feller_transform(m)
        for x in (0.2, 1.0, 3.0):
            h = 1e-5 * x
            Fpp = (1 / m.sigma(x + h) - 1 / m.sigma(x - h)) / (2 * h)
            mu = 0.5 * m.lam**2 * (m.eps * m.b1(x) - m.b2(x))
            ref = mu / m.sigma(x) + 0.5 * Fpp * m.lam**2 * m.sigma(x) ** 2
            assert t.drift(t.F(x)) == pytest.approx(ref, rel=1e-7)

    def test_invalid_anchor(self):
        with pytest.raises(DomainError):
            feller_transform(DiffusionModel.bb_linear(), anchor=math.inf)
        with pytest.raises(DomainError):
            feller_transform(DiffusionModel.bb_linear(), anchor=-1.0)


class TestValidateModel:
    def test_exactly_linear_passes(self):
        tb = TaylorBounds(1.0, 1.0, 1.0, 1.0, 0.1)
        rep = validate_model(DiffusionModel.bb_linear(1.0), tb, np.linspace(0.01, 0.1, 10))
        assert rep.passed
        assert all(r["ok"] for r in rep.as_dicts())

    def test_cubic_remainder_passes(self):
        m = DiffusionModel.asym_linear(1.0, 1.0, 1.0, c3=1.0)
        rep = validate_model(m, TaylorBounds(1.0, 1.0, 1.0, 1.0, 0.1), [0.05])
        assert rep.passed
        # |b2(x) - x| = 1.25e-4 against the allowance 2.5e-3
        assert rep.rows[0][2] == pytest.approx(1.25e-4 - 2.5e-3, rel=1e-12)

    def test_large_quadratic_term_fails(self):
        m = DiffusionModel.asym_linear(1.0, 1.0, 1.0, c2=10.0)
        rep = validate_model(m, TaylorBounds(1.0, 1.0, 1.0, 1.0, 0.1), [0.05])
        assert not rep.passed
        assert rep.rows[0][2] == pytest.approx(0.025 - 0.0025, rel=1e-12)

    def test_grid_beyond_delta0_rejected(self):
        with pytest.raises(DomainError):
            validate_model(DiffusionModel.bb_linear(), TaylorBounds(1, 1, 1, 1, 0.1), [0.2])
        with pytest.raises(DomainError):
            validate_model(DiffusionModel.bb_linear(), TaylorBounds(1, 1, 1, 1, 0.1), [])

    def test_delta0_cap(self):
        with pytest.raises(DomainError):
            TaylorBounds(1.0, 1.0, 1.0, 1.0, 0.5)


class TestCycleBoundaries:
    def test_linear(self):
        assert CycleBoundaries.linear().at(0.1) == pytest.approx((0.1, 0.2))

    def test_rabi(self):
        a, b = CycleBoundaries.rabi(2.0, 1.0).at(0.1)
        assert a == pytest.approx(0.05) and b == pytest.approx(0.06)

    @given(eps=st.floats(1e-6, 1.0))
    def test_ordered_and_vanishing(self, eps):
        for bd in (CycleBoundaries.linear(1.0, 2.0), CycleBoundaries.rabi(1.0, 1.0)):
            a, b = bd.at(eps)
            assert 0 < a < b <= 3 * eps

    def test_invalid(self):
        with pytest.raises(DomainError):
            CycleBoundaries.linear(2.0, 1.0)
        with pytest.raises(DomainError):
            CycleBoundaries.linear().at(0.0)


def test_closed_form_log_scale_matches_quadrature():
    # the preset antiderivative against direct integration of (eps b1 - b2)/sigma^2
    m = DiffusionModel.asym_linear(1.3, 0.7, 0.9, a1=0.4, c2=0.2, c3=0.05, eps=0.1)
    for x in (0.05, 0.5, 4.0):
        ref, _ = integrate.quad(lambda u: (m.eps * m.b1(u) - m.b2(u)) / m.sigma(u) ** 2, 1.0, x,
                                epsabs=0, epsrel=1e-13, limit=200)
        assert m.log_scale_closed(x, 1.0) == pytest.approx(ref, rel=1e-11, abs=1e-13)


@settings(max_examples=30)
@given(lam=pos, eps=st.floats(0, 1), x=st.floats(0.01, 10))
def test_models_pickle(lam, eps, x):
    import pickle

    m = DiffusionModel.asym_linear(1.0, 2.0, 0.5, a1=0.5, lam=lam, eps=eps)
    m2 = pickle.loads(pickle.dumps(m))
    assert m2.b1(x) == m.b1(x) and m2.sigma(x) == m.sigma(x)
