"""Model layer: modulations, potentials, jump families, derived constants,
assumption validation.

Closed-form oracles used below, all hand quadrature over one period:
  homogeneous fixture (R=1, kappa=1/2, Laplace b=1):
      sigma = R * kappa * E[w^2] = 1 * 0.5 * 2b^2 = 1.
  cosine fixture (R=1, kappa = 1/2 + cos/10, b = 1 + cos/4):
      sigma = int 2 kappa b^2 = 2 * (1/2 + (1/32 + 1/20)/2) = 1.08125
      r1, r2 = extremes of 2 kappa(a) b(a)^2 at cos = -1, +1
             = 2*0.4*0.75^2 = 0.45 and 2*0.6*1.25^2 = 1.875
      nu = min kappa = 0.4
      rho = sup_a E[w^4] = 24 b_max^4 = 24 * 1.25^4 = 58.59375.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kickmc.model import (AveragedKick, InvalidModelError, JumpFamily,
                          KickField, ModelSpec, Modulation, Potential,
                          averaged_kick, constant, homogeneous_model, sigma,
                          standard_cosine_model, validate)


class TestModulation:
    def test_constant(self):
        m = Modulation("constant", 0.7, 0.0)
        assert np.all(m(np.linspace(0, 1, 9)) == 0.7)
        assert m.bounds() == (0.7, 0.7)
        assert m.mean() == 0.7

    def test_cosine_values_and_bounds(self):
        m = Modulation("cosine", 0.5, 0.1)
        assert m(0.0) == pytest.approx(0.6, abs=1e-15)
        assert m(0.5) == pytest.approx(0.4, abs=1e-15)
        assert m(0.25) == pytest.approx(0.5, abs=1e-15)
        assert m.bounds() == (0.4, 0.6)
        assert m.mean() == 0.5

    def test_twostep(self):
        m = Modulation("twostep", 1.0, 2.0)
        assert m(0.1) == 1.0 and m(0.9) == 2.0
        assert m.bounds() == (1.0, 2.0)
        assert m.mean() == 1.5

    def test_unknown_kind(self):
        with pytest.raises(InvalidModelError):
            Modulation("triangle", 1.0, 0.0)

    @given(a=st.floats(-3, 3, allow_nan=False))
    @settings(max_examples=50, deadline=None)
    def test_reflection_symmetry(self, a):
        m = Modulation("cosine", 1.0, 0.3)
        assert float(m(a)) == pytest.approx(float(m(-a)), abs=1e-12)


class TestPotential:
    def test_zero(self):
        p = Potential(kind="zero")
        x = np.linspace(-1, 2, 13)
        assert np.all(p.value(x) == 0.0) and np.all(p.force(x) == 0.0)
        assert p.vbar == 0.0 and p.dv_bound == 0.0

    def test_cosine_range_and_force(self):
        p = Potential(kind="cosine", amplitude=0.5)
        x = np.linspace(0, 1, 1001)
        v = p.value(x)
        assert v.min() >= 0.0 and v.max() == pytest.approx(0.5, abs=1e-12)
        assert p.value(0.0) == pytest.approx(0.5)   # max at the origin
        assert p.value(0.5) == pytest.approx(0.0, abs=1e-15)
        assert p.vbar == 0.5
        assert p.dv_bound == pytest.approx(0.5 * math.pi)
        # force is -dV/dx: central differences
        h = 1e-6
        fd = -(p.value(x[1:-1] + h) - p.value(x[1:-1] - h)) / (2 * h)
        assert np.max(np.abs(fd - p.force(x[1:-1]))) < 1e-6

    def test_cosine_reflection(self):
        p = Potential(kind="cosine", amplitude=0.3)
        x = np.linspace(0, 1, 97)
        assert np.allclose(p.value(-x), p.value(x), atol=1e-14)

    def test_tabulated_matches_knots_and_periodic(self):
        tab = tuple(0.1 + 0.05 * i for i in range(8))
        p = Potential(kind="tabulated", table=tab, reflection_point=None)
        knots = np.arange(8) / 8.0
        assert np.allclose(p.value(knots), tab)
        assert p.value(1.25) == pytest.approx(p.value(0.25))
        assert p.vbar == pytest.approx(max(tab))
        # piecewise-linear: force is constant inside a cell
        assert p.force(0.01) == p.force(0.05)

    def test_tabulated_rejects_bad_tables(self):
        with pytest.raises(InvalidModelError):
            Potential(kind="tabulated", table=(1.0, 2.0))
        with pytest.raises(InvalidModelError):
            Potential(kind="tabulated", table=(0.0,) * 7 + (-1.0,))

    def test_negative_amplitude_rejected(self):
        with pytest.raises(InvalidModelError):
            Potential(kind="cosine", amplitude=-0.1)


class TestJumpFamily:
    def test_laplace_density_normalized_and_symmetric(self):
        j = JumpFamily(kind="laplace", scale=constant(1.3))
        v = np.linspace(-30, 30, 20001)
        d = j.density(0.2, v)
        assert np.trapezoid(d, v) == pytest.approx(1.0, abs=1e-5)
        assert np.allclose(d, j.density(0.2, -v))

    def test_laplace_moments_exact(self):
        b = 0.8
        j = JumpFamily(kind="laplace", scale=constant(b))
        assert float(j.second_moment(0.0)) == pytest.approx(2 * b * b)
        assert float(j.fourth_moment(0.0)) == pytest.approx(24 * b**4)

    def test_laplace_quantile_closed_form(self):
        # two-sided exponential: Q(u) = b ln(2u) for u < 1/2, odd around 1/2
        b = 1.0
        j = JumpFamily(kind="laplace", scale=constant(b))
        q = j.quantile(0.0, np.array([0.25, 0.5, 0.75]))
        assert q[0] == pytest.approx(b * math.log(0.5))
        assert q[1] == pytest.approx(0.0, abs=1e-12)
        assert q[2] == pytest.approx(-b * math.log(0.5))

    @given(u=st.floats(1e-6, 0.5 - 1e-9))
    @settings(max_examples=60, deadline=None)
    def test_laplace_quantile_odd(self, u):
        j = JumpFamily(kind="laplace", scale=constant(1.0))
        lo = float(j.quantile(0.0, np.array([u]))[0])
        hi = float(j.quantile(0.0, np.array([1.0 - u]))[0])
        assert lo == pytest.approx(-hi, abs=1e-10)

    def test_gauss_mixture_moments(self):
        j = JumpFamily(kind="gauss_mixture", scale=constant(1.0),
                       weights=(0.5, 0.5), sds=(1.0, 2.0))
        assert float(j.second_moment(0.0)) == pytest.approx(2.5)
        assert float(j.fourth_moment(0.0)) == pytest.approx(
            3 * (0.5 * 1.0 + 0.5 * 16.0))

    def test_tabulated_symmetrized_and_normalized(self):
        # deliberately asymmetric input; constructor symmetrizes
        vg = np.linspace(-4, 4, 129)
        vals = np.exp(-np.abs(vg - 0.5))
        j = JumpFamily(kind="tabulated", scale=constant(1.0),
                       v_grid=tuple(vg), values=tuple(vals))
        v = np.linspace(-4, 4, 801)
        d = j.density(0.0, v)
        assert np.allclose(d, j.density(0.0, -v), atol=1e-12)
        assert np.trapezoid(d, v) == pytest.approx(1.0, abs=1e-4)

    def test_scale_must_be_positive_where_evaluated(self):
        # scale dips to -0.5 at a=1/2; density evaluation there must refuse
        j = JumpFamily(kind="laplace", scale=Modulation("cosine", 1.0, 1.5))
        with pytest.raises(InvalidModelError):
            j.density(0.5, np.array([0.0]))


class TestDerived:
    def test_homogeneous_sigma_is_one(self, hom):
        assert hom.derived["sigma"] == pytest.approx(1.0, rel=1e-9)
        assert hom.derived["r1"] == pytest.approx(1.0, rel=1e-9)
        assert hom.derived["r2"] == pytest.approx(1.0, rel=1e-9)
        assert hom.derived["vbar"] == 0.0

    def test_cosine_fixture_constants(self, cos_model):
        d = cos_model.derived
        assert d["sigma"] == pytest.approx(1.08125, rel=1e-9)
        assert d["r1"] == pytest.approx(0.45, rel=1e-6)
        assert d["r2"] == pytest.approx(1.875, rel=1e-6)
        assert d["nu"] == pytest.approx(0.4)
        assert d["rho"] == pytest.approx(58.59375, rel=1e-9)
        assert d["vbar"] == 0.5

    def test_sigma_matches_brute_force_quadrature(self, cos_model):
        a = (np.arange(20000) + 0.5) / 20000
        val = np.mean(cos_model.kicks.rate_density_moment(a, 2))
        assert sigma(cos_model) == pytest.approx(float(val), rel=1e-7)

    def test_rate_must_be_positive(self):
        with pytest.raises(InvalidModelError):
            KickField(rate=0.0, coin=constant(0.5), jump=JumpFamily())


class TestAveragedKick:
    def test_homogeneous_average_is_the_laplace_law(self, hom):
        avg = averaged_kick(hom)
        assert isinstance(avg, AveragedKick)
        assert avg.rate == pytest.approx(0.5)
        ref = 0.5 * np.exp(-np.abs(avg.v_grid))
        assert np.max(np.abs(avg.density - ref)) < 1e-6
        assert avg.normalization() == pytest.approx(1.0, abs=1e-9)
        assert avg.second_moment() == pytest.approx(2.0, rel=1e-6)

    def test_cosine_average_second_moment(self, cos_model):
        # int kappa P_a v^2 da / int kappa da = sigma / (R * mean kappa)
        avg = averaged_kick(cos_model)
        assert avg.rate == pytest.approx(0.5)
        assert avg.second_moment() == pytest.approx(1.08125 / 0.5, rel=1e-4)


class TestValidate:
    def test_fixtures_pass(self, hom, cos_model):
        for m in (hom, cos_model):
            rep = validate(m)
            assert rep.ok, rep.flags
            assert rep.flags["kick_symmetry"]
            assert rep.flags["second_moment_bounds"]

    def test_constants_reported(self, cos_model):
        rep = validate(cos_model)
        assert "eta" in rep.constants or len(rep.constants) > 0

    def test_broken_reflection_detected(self):
        tab = tuple(0.1 + 0.02 * i for i in range(16))   # sawtooth, asymmetric
        model = ModelSpec.build(
            Potential(kind="tabulated", table=tab, reflection_point=0.0),
            KickField(rate=1.0, coin=constant(0.5), jump=JumpFamily()))
        rep = validate(model)
        assert not rep.flags["reflection"]
        assert not rep.ok
