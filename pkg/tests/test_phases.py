import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tracephase import TracePolynomial, build_field, eval_phase, eval_phase_embedded, grad_phase, univariate
from tracephase.errors import DimensionMismatch, NotUnivariate
from tracephase.functionals import random_polynomial
from tracephase.phases import (
    check_gradient_comparability,
    embed_polynomial,
    gradient_constants,
    moment_curve_polynomials,
    multi_indices,
    parse_multi_index,
    polynomial_from_spec,
    polynomial_to_spec,
)

SQRT2 = math.sqrt(2)
FIELDS = {"Q": [0, 1], "Q(sqrt2)": [-2, 0, 1], "Q(i)": [1, 0, 1], "Q(cbrt2)": [-2, 0, 0, 1]}


def degenerate(sqrt2, lam=1.0):
    return univariate(sqrt2, {2: lam * np.array([-SQRT2, 1.0])})


class TestEmbedding:
    def test_degenerate_first_embedding_vanishes(self, sqrt2):
        p = embed_polynomial(degenerate(sqrt2), 0)
        assert all(abs(c) < 1e-15 for c in p.coeffs.values())
        q = embed_polynomial(degenerate(sqrt2), 1)
        assert abs(q.coeffs[(2,)]) == pytest.approx(2 * SQRT2)

    def test_rational_one_embeds_to_one(self, fields):
        for field in fields.values():
            f = polynomial_from_spec(field, {"n": 2, "coeffs": {"(1,0)": 1, "(2,1)": 1, "(0,3)": 1}})
            for p in f.embedded:
                assert all(c == pytest.approx(1) for c in p.coeffs.values())

    def test_gaussian_i_times_z(self, gaussian):
        f = univariate(gaussian, {1: np.array([0.0, 1.0])})
        assert f.embedded[0].coeffs[(1,)] == pytest.approx(1j)
        assert f.embedded[1].coeffs[(1,)] == pytest.approx(-1j)

    def test_spec_round_trip(self, cbrt2):
        f = polynomial_from_spec(cbrt2, {"n": 2, "coeffs": {"(1,1)": ["1/2", "0", "-3"], "(0,2)": 2}})
        g = polynomial_from_spec(cbrt2, polynomial_to_spec(f))
        assert g.coeffs.keys() == f.coeffs.keys()
        for a in f.coeffs:
            np.testing.assert_array_equal(f.coeffs[a], g.coeffs[a])

    def test_coefficient_length_checked(self, sqrt2):
        with pytest.raises(DimensionMismatch):
            TracePolynomial(sqrt2, 1, {(2,): np.array([1.0, 2.0, 3.0])})
        with pytest.raises(DimensionMismatch):
            TracePolynomial(sqrt2, 2, {(2,): np.array([1.0, 2.0])})

    def test_multi_index_helpers(self):
        assert parse_multi_index("(2, 0,1)") == (2, 0, 1)
        assert parse_multi_index([1, 2]) == (1, 2)
        assert len(multi_indices(2, 3, 1)) == 9


class TestPhase:
    def test_gaussian_square_is_twice_real_part(self, gaussian):
        f = univariate(gaussian, {2: np.array([1.0, 0.0])})
        rng = np.random.default_rng(0)
        pts = rng.uniform(-2, 2, (50, 2))
        expected = 2 * (pts[:, 0] ** 2 - pts[:, 1] ** 2)
        np.testing.assert_allclose(eval_phase(f, pts), expected, rtol=1e-12, atol=1e-12)

    def test_sqrt2_square(self, sqrt2):
        f = univariate(sqrt2, {2: np.array([1.0, 0.0])})
        pts = np.array([[0.3, -0.7], [1.0, 2.0]])
        np.testing.assert_allclose(eval_phase(f, pts), 2 * pts[:, 0] ** 2 + 4 * pts[:, 1] ** 2)

    def test_zero_polynomial(self, fields):
        for field in fields.values():
            f = TracePolynomial.zero(field, 2)
            assert np.all(eval_phase(f, np.ones((3, 2 * field.k))) == 0)
            assert np.all(grad_phase(f, np.ones((3, 2 * field.k))) == 0)

    def test_gradient_examples(self, sqrt2, gaussian):
        f = univariate(sqrt2, {2: np.array([1.0, 0.0])})
        np.testing.assert_allclose(grad_phase(f, [1.0, 0.0]), [4.0, 0.0], atol=1e-12)
        g = univariate(gaussian, {2: np.array([1.0, 0.0])})
        np.testing.assert_allclose(grad_phase(g, [1.0, 1.0]), [4.0, -4.0], atol=1e-12)

    def test_point_dimension_checked(self, sqrt2):
        f = univariate(sqrt2, {2: np.array([1.0, 0.0])})
        with pytest.raises(DimensionMismatch):
            eval_phase(f, [1.0, 2.0, 3.0])

    @pytest.mark.parametrize("name", list(FIELDS))
    def test_trace_and_embedding_routes_agree(self, name):
        field = build_field(FIELDS[name])
        rng = np.random.default_rng(11)
        for _ in range(25):
            f = random_polynomial(field, 2, 3, rng)
            x = rng.uniform(-1.5, 1.5, (4, f.dim))
            algebra = eval_phase(f, x)
            embedded = eval_phase_embedded(f, x)
            np.testing.assert_allclose(embedded.imag, 0, atol=1e-9 * (1 + np.abs(algebra).max()))
            np.testing.assert_allclose(embedded.real, algebra, rtol=1e-9, atol=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_gradient_matches_central_differences(self, seed):
        field = build_field([-2, 0, 0, 1])
        rng = np.random.default_rng(seed)
        f = random_polynomial(field, 1, 4, rng)
        x = rng.uniform(-1, 1, 3)
        h = 1e-6
        fd = np.array([(eval_phase(f, x + h * e) - eval_phase(f, x - h * e)) / (2 * h) for e in np.eye(3)])
        g = grad_phase(f, x)
        assert np.allclose(g, fd, rtol=1e-5, atol=1e-5 * (1 + np.abs(g).max()))

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-3, 3), st.floats(-3, 3))
    def test_phase_is_real_and_linear_in_coefficients(self, a, b):
        field = build_field([1, 0, 1])
        x = np.array([0.4, -1.1])
        f = univariate(field, {2: np.array([1.0, 0.5])})
        g = univariate(field, {3: np.array([0.0, 1.0])})
        combo = f.scaled(a) + g.scaled(b)
        assert eval_phase(combo, x) == pytest.approx(a * eval_phase(f, x) + b * eval_phase(g, x), abs=1e-10)


class TestComparability:
    def test_sqrt2_constants(self, sqrt2):
        lower, upper = gradient_constants(sqrt2)
        assert upper == pytest.approx(2 * math.sqrt(3))
        assert lower > 0
        f = univariate(sqrt2, {2: np.array([1.0, 0.0])})
        rep = check_gradient_comparability(f, [[1.0, 0.0]])
        assert rep.holds
        assert rep.ratio_max == pytest.approx(2.0)

    def test_gaussian_grid(self, gaussian):
        f = univariate(gaussian, {2: np.array([1.0, 0.0])})
        axis = np.linspace(-1, 1, 10)
        grid = np.stack(np.meshgrid(axis, axis), axis=-1).reshape(-1, 2)
        assert check_gradient_comparability(f, grid).holds

    def test_zero_polynomial_vacuous(self, sqrt2):
        rep = check_gradient_comparability(TracePolynomial.zero(sqrt2, 1), [[0.3, 0.2]])
        assert rep.holds and math.isnan(rep.ratio_min)

    def test_requires_one_variable(self, sqrt2):
        f = TracePolynomial(sqrt2, 2, {(1, 1): np.array([1.0, 0.0])})
        with pytest.raises(NotUnivariate):
            check_gradient_comparability(f, np.zeros((1, 4)))


class TestMomentCurve:
    def test_first_power_is_coordinates(self, cbrt2):
        Q = moment_curve_polynomials(cbrt2, 1)
        assert Q[0] == [{(1, 0, 0): 1}, {(0, 1, 0): 1}, {(0, 0, 1): 1}]

    def test_sqrt2_square(self, sqrt2):
        Q = moment_curve_polynomials(sqrt2, 2)[1]
        assert Q[0] == {(2, 0): 1, (0, 2): 2}
        assert Q[1] == {(1, 1): 2}

    def test_gaussian_square(self, gaussian):
        Q = moment_curve_polynomials(gaussian, 2)[1]
        assert Q[0] == {(2, 0): 1, (0, 2): -1}
        assert Q[1] == {(1, 1): 2}

    def test_powers_match_embeddings(self, cbrt2):
        from tracephase.phases import eval_rational_poly

        Q = moment_curve_polynomials(cbrt2, 3)
        q = np.array([0.3, -0.8, 0.5])
        for l in range(3):
            coords = np.array([eval_rational_poly(Q[l][j], q) for j in range(3)])
            for s in range(3):
                assert coords @ cbrt2.w[s] == pytest.approx((q @ cbrt2.w[s]) ** (l + 1), abs=1e-12)

    def test_exact_coefficients(self, sqrt2):
        Q = moment_curve_polynomials(sqrt2, 3)
        assert all(isinstance(c, Fraction) for poly in Q[2] for c in poly.values())
