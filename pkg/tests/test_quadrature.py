import math

import numpy as np
import pytest
import scipy.integrate
from hypothesis import given, settings, strategies as st

from tracephase import TracePolynomial, build_field, univariate
from tracephase.errors import DimensionMismatch, DimensionTooLarge
from tracephase.functionals import Cutoff, EmbeddingProductCutoff, random_polynomial
from tracephase.numberfield import trace_form_float
from tracephase.quadrature import (
    adaptive_integrate,
    extension_operator,
    factorized_integral,
    kb_fourier,
    loglog_slope,
    mass,
    oscillatory_integral,
    radial_fourier,
    verify_main_bound,
)

SQRT2 = math.sqrt(2)


def quad_oracle(phase, weight, a, b):
    """Real and imaginary parts by scipy's adaptive QUADPACK on a fine partition."""
    edges = np.linspace(a, b, 65)
    re = im = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        re += scipy.integrate.quad(lambda t: math.cos(2 * math.pi * phase(t)) * weight(t), lo, hi,
                                   epsabs=1e-14, epsrel=1e-12, limit=200)[0]
        im += scipy.integrate.quad(lambda t: math.sin(2 * math.pi * phase(t)) * weight(t), lo, hi,
                                   epsabs=1e-14, epsrel=1e-12, limit=200)[0]
    return complex(re, im)


class TestAdaptive:
    def test_polynomial_exact(self):
        res = adaptive_integrate(lambda p: (p[:, 0] ** 6 * p[:, 1] ** 2).astype(complex), [0, 0], [1, 2], 1e-10)
        assert res.value.real == pytest.approx(8 / 21, rel=1e-13)
        assert res.converged

    def test_gaussian_bump(self):
        res = adaptive_integrate(lambda p: np.exp(-np.sum(p**2, axis=1)).astype(complex), [-6] * 3, [6] * 3, 1e-9)
        assert res.value.real == pytest.approx(math.pi**1.5, rel=1e-9)

    def test_dimension_guard(self):
        with pytest.raises(DimensionTooLarge):
            adaptive_integrate(lambda p: np.ones(len(p), complex), [0] * 5, [1] * 5)

    def test_threads_give_identical_values(self):
        f = lambda p: np.exp(2j * math.pi * 40 * p[:, 0] ** 2) * np.cos(p[:, 1])
        a = adaptive_integrate(f, [-1, -1], [1, 1], 1e-8, threads=1)
        b = adaptive_integrate(f, [-1, -1], [1, 1], 1e-8, threads=2)
        assert a.value == b.value and a.panels_used == b.panels_used


class TestOscillatory:
    def test_zero_phase_is_mass(self, fields):
        for name in ("Q", "Q(sqrt2)", "Q(i)"):
            field = fields[name]
            psi = Cutoff.centered(field.k, 0.5, 1.0)
            res = oscillatory_integral(TracePolynomial.zero(field, 1), psi, 1e-10)
            assert res.value.imag == 0
            assert res.value.real == pytest.approx(mass(psi), rel=1e-9)
            assert res.value.real == pytest.approx(radial_fourier(psi, np.zeros(field.k)).real, rel=1e-9)

    def test_constant_term_only_rotates(self, sqrt2):
        psi = Cutoff.centered(2, 0.5, 1.0)
        f = univariate(sqrt2, {0: np.array([0.125, 0.0])})
        res = oscillatory_integral(f, psi, 1e-10)
        # the trace of 1/8 is 1/4, so the phase factor is exp(i pi / 2)
        assert res.value == pytest.approx(1j * mass(psi), rel=1e-9)

    @pytest.mark.parametrize("lam", [16.0, 64.0])
    def test_parabola_against_quadpack(self, rationals, lam):
        psi = Cutoff.centered(1, 0.15, 0.3)
        f = univariate(rationals, {2: np.array([lam])})
        ours = oscillatory_integral(f, psi, 1e-10).value
        oracle = quad_oracle(lambda t: lam * t * t, lambda t: float(psi([t])), -0.3, 0.3)
        assert abs(ours - oracle) <= 1e-9 * abs(oracle)

    def test_sqrt2_separates_into_fresnel_factors(self, sqrt2):
        # phi = 2 lam x1^2 + 4 lam x2^2 on a product cutoff equals a product of 1D integrals
        lam = 8.0
        psi = EmbeddingProductCutoff(sqrt2, 1, 0.5, 1.0)
        f = univariate(sqrt2, {2: np.array([lam, 0.0])})
        fact = factorized_integral(f, psi, 1e-10).value
        direct = oscillatory_integral(f, psi, 1e-9).value
        assert abs(fact - direct) <= 1e-7 * abs(fact)

    def test_coordinate_routes_agree(self, gaussian):
        psi = Cutoff.centered(2, 0.3, 0.6)
        f = univariate(gaussian, {2: np.array([20.0, 3.0]), 1: np.array([1.0, -2.0])})
        a = oscillatory_integral(f, psi, 1e-10, coordinates="embedding").value
        b = oscillatory_integral(f, psi, 1e-10, coordinates="standard").value
        assert abs(a - b) <= 1e-9 * abs(a)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000))
    def test_negated_phase_conjugates(self, seed):
        field = build_field([0, 1])
        rng = np.random.default_rng(seed)
        f = random_polynomial(field, 1, 3, rng).scaled(4.0)
        psi = Cutoff.centered(1, 0.4, 0.8)
        a = oscillatory_integral(f, psi, 1e-10).value
        b = oscillatory_integral(-f, psi, 1e-10).value
        assert abs(a - b.conjugate()) <= 1e-10 * (1 + abs(a))

    @settings(max_examples=15, deadline=None)
    @given(st.floats(-2, 2), st.floats(-2, 2))
    def test_linear_phase_is_fourier_transform(self, a, b):
        field = build_field([1, 0, 1])
        psi = Cutoff.centered(2, 0.5, 1.0)
        x = np.array([a, b])
        ours = kb_fourier(field, psi, x, 1e-10)
        assert abs(ours - radial_fourier(psi, trace_form_float(field) @ x)) <= 1e-8 * (1 + abs(ours))

    def test_bad_inputs(self, sqrt2):
        f = univariate(sqrt2, {2: np.array([1.0, 0.0])})
        with pytest.raises(DimensionMismatch):
            oscillatory_integral(f, Cutoff.centered(3, 0.5, 1.0))
        with pytest.raises(ValueError):
            oscillatory_integral(f, Cutoff.centered(2, 0.5, 1.0), tol=1e-2)
        with pytest.raises(ValueError):
            oscillatory_integral(f, Cutoff.centered(2, 0.5, 1.0), coordinates="polar")


class TestFourier:
    def test_rationals_is_plain_fourier(self, rationals):
        psi = Cutoff.centered(1, 0.5, 1.0)
        for x in (0.0, 0.7, 3.1):
            ours = kb_fourier(rationals, psi, [x], 1e-10)
            oracle = quad_oracle(lambda t: x * t, lambda t: float(psi([t])), -1, 1)
            assert abs(ours - oracle) <= 1e-9 * max(1, abs(oracle))

    def test_sqrt2_random_points(self, sqrt2):
        psi = Cutoff.centered(2, 0.5, 1.0)
        rng = np.random.default_rng(4)
        T = trace_form_float(sqrt2)
        for x in rng.uniform(-2, 2, (4, 2)):
            a = kb_fourier(sqrt2, psi, x, 1e-10)
            b = radial_fourier(psi, T @ x)
            assert abs(a - b) <= 1e-6 * (1 + abs(b))

    def test_guards(self, cbrt2, sqrt2):
        with pytest.raises(DimensionTooLarge):
            kb_fourier(build_field([1, 0, 0, 0, 1]), Cutoff.centered(4, 0.5, 1.0), np.zeros(4))
        with pytest.raises(DimensionMismatch):
            kb_fourier(sqrt2, Cutoff.centered(2, 0.5, 1.0), [1.0])


class TestExtension:
    def test_zero_frequency_is_mass(self, rationals):
        psi = Cutoff.centered(1, 0.5, 1.0)
        val = extension_operator(rationals, 2, np.zeros(2), psi)
        assert val.direct == pytest.approx(mass(psi), rel=1e-9)
        assert val.reduced == pytest.approx(mass(psi), rel=1e-9)

    def test_rationals_against_quadpack(self, rationals):
        lam = 50.0
        psi = Cutoff.centered(1, 0.5, 1.0)
        val = extension_operator(rationals, 2, np.array([0.0, lam]), psi, 1e-10)
        oracle = quad_oracle(lambda t: lam * t * t, lambda t: float(psi([t])), -1, 1)
        assert abs(val.direct - oracle) <= 1e-9 * abs(oracle)
        assert val.relative_gap <= 1e-9

    def test_gaussian_direct_and_reduced_agree(self, gaussian):
        rng = np.random.default_rng(8)
        psi = Cutoff.centered(2, 0.5, 1.0)
        xi = rng.standard_normal(2)
        val = extension_operator(gaussian, 1, 10 * xi / np.linalg.norm(xi), psi, 1e-10)
        assert val.relative_gap <= 1e-6

    @pytest.mark.slow
    def test_sqrt2_two_variables(self, sqrt2):
        rng = np.random.default_rng(9)
        xi = rng.standard_normal(4)
        val = extension_operator(sqrt2, 2, 10 * xi / np.linalg.norm(xi), Cutoff.centered(2, 0.5, 1.0), 1e-8)
        assert val.relative_gap <= 1e-6

    def test_shape_checked(self, sqrt2):
        with pytest.raises(DimensionMismatch):
            extension_operator(sqrt2, 2, np.zeros(3), Cutoff.centered(2, 0.5, 1.0))


class TestMainBound:
    def test_slope_helper(self):
        assert loglog_slope([1, 10, 100], [3, 0.3, 0.03]) == pytest.approx(-1.0)

    def test_degenerate_family_is_vacuous_with_full_set(self, sqrt2):
        psi = Cutoff.centered(2, 0.15, 0.3)
        q = np.array([-SQRT2, 1.0])
        family = [(lam, univariate(sqrt2, {2: lam * q})) for lam in (16, 64, 256, 1024)]
        rep = verify_main_bound(family, [0, 1], psi, 1e-6)
        assert rep.vacuous
        assert all(row.H == pytest.approx(0, abs=1e-12) for row in rep.rows)

    def test_family_validation(self, rationals):
        psi = Cutoff.centered(1, 0.15, 0.3)
        f = univariate(rationals, {2: np.array([1.0])})
        with pytest.raises(ValueError):
            verify_main_bound([(1, f)] * 3, [0], psi)
        with pytest.raises(ValueError):
            verify_main_bound([(lam, f.scaled(lam)) for lam in (1, 2, 3, 4)], [0], psi)
