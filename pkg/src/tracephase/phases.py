"""Polynomials with coefficients in the real algebra of a number field.

A :class:`TracePolynomial` stores one real k-vector per multi-index.  The
trace phase is evaluated two ways: directly in the algebra (structure
constants and the trace vector), and as a sum over embeddings of the complex
polynomials obtained by embedding each coefficient.  Points in R^{kn} are
laid out as n consecutive blocks of k coordinates.
"""
from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Mapping, NamedTuple

import numpy as np

from .errors import DimensionMismatch, NotUnivariate
from .numberfield import NumberField, decompose, to_fraction

MultiIndex = tuple[int, ...]


def multi_indices(n: int, max_degree: int, min_degree: int = 0) -> list[MultiIndex]:
    """All n-multi-indices with min_degree <= |a| <= max_degree, graded then lexicographic."""
    out = []
    for total in range(min_degree, max_degree + 1):
        out.extend(sorted(a for a in itertools.product(range(total + 1), repeat=n) if sum(a) == total))
    return out


def index_order(alpha: MultiIndex) -> tuple:
    return (sum(alpha), alpha)


def parse_multi_index(text) -> MultiIndex:
    if isinstance(text, (tuple, list)):
        return tuple(int(v) for v in text)
    parts = [p for p in re.split(r"[(),\s]+", str(text)) if p]
    return tuple(int(p) for p in parts)


def _factorial_multi(alpha: MultiIndex) -> int:
    return math.prod(math.factorial(a) for a in alpha)


def _binom_multi(alpha: MultiIndex, beta: MultiIndex) -> int:
    return math.prod(math.comb(a, b) for a, b in zip(alpha, beta))


def monomials(z: np.ndarray, indices: list[MultiIndex]) -> np.ndarray:
    """z^gamma for each gamma in ``indices``; z has shape (..., n), result (..., len(indices))."""
    z = np.asarray(z)
    n = z.shape[-1]
    top = max((max(g) for g in indices if g), default=0)
    powers = np.ones(z.shape + (top + 1,), dtype=z.dtype)
    for e in range(1, top + 1):
        powers[..., e] = powers[..., e - 1] * z
    cols = []
    for g in indices:
        term = np.ones(z.shape[:-1], dtype=z.dtype)
        for l in range(n):
            if g[l]:
                term = term * powers[..., l, g[l]]
        cols.append(term)
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class EmbeddedPolynomial:
    """Complex polynomial in n variables obtained by embedding coefficients."""

    n: int
    coeffs: Mapping[MultiIndex, complex]
    sigma: int | None = None

    @cached_property
    def degree(self) -> int:
        nonzero = [sum(a) for a, c in self.coeffs.items() if c != 0]
        return max(nonzero, default=0)

    @cached_property
    def _taylor(self) -> tuple[list[MultiIndex], list[MultiIndex], np.ndarray]:
        # row beta, column gamma: coefficient of z^gamma in (1/beta!) d^beta P
        d = self.degree
        betas = multi_indices(self.n, d)
        gammas = multi_indices(self.n, d)
        mat = np.zeros((len(betas), len(gammas)), dtype=complex)
        for i, b in enumerate(betas):
            for j, g in enumerate(gammas):
                a = tuple(x + y for x, y in zip(b, g))
                c = self.coeffs.get(a, 0)
                if c != 0:
                    mat[i, j] = c * _binom_multi(a, b)
        return betas, gammas, mat

    def taylor_coefficients(self, z: np.ndarray) -> tuple[list[MultiIndex], np.ndarray]:
        """(1/beta!) d^beta P(z) for every beta with |beta| <= degree.

        Returns the beta list and an array of shape (..., len(betas)).
        """
        betas, gammas, mat = self._taylor
        z = np.asarray(z, dtype=complex)
        return betas, monomials(z, gammas) @ mat.T

    @cached_property
    def _value_rows(self) -> tuple[list[MultiIndex], np.ndarray]:
        # Taylor rows for the value (beta = 0) and the first-order derivatives
        betas, gammas, mat = self._taylor
        rows = [0] + [betas.index(tuple(int(i == l) for i in range(self.n))) for l in range(self.n)] \
            if self.degree >= 1 else [0]
        used = np.flatnonzero(np.any(mat[rows] != 0, axis=0))
        return [gammas[j] for j in used], mat[np.ix_(rows, used)]

    @cached_property
    def _dense_univariate(self) -> np.ndarray:
        out = np.zeros(self.degree + 1, dtype=complex)
        for a, c in self.coeffs.items():
            if a[0] <= self.degree:
                out[a[0]] += c
        return out

    def _low_order(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        if self.n == 1:
            # Horner for the value and the derivative together
            c = self._dense_univariate
            t = z[..., 0]
            val = np.full(t.shape, c[-1], dtype=complex)
            der = np.zeros(t.shape, dtype=complex)
            for a in c[-2::-1]:
                der = der * t + val
                val = val * t + a
            return np.stack([val, der], axis=-1) if self.degree >= 1 else val[..., None]
        gammas, mat = self._value_rows
        if not gammas:
            return np.zeros(z.shape[:-1] + (mat.shape[0],), dtype=complex)
        return monomials(z, gammas) @ mat.T

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return self._low_order(z)[..., 0]

    def gradient(self, z: np.ndarray) -> np.ndarray:
        if self.degree < 1:
            return np.zeros(np.shape(z), dtype=complex)
        return self._low_order(z)[..., 1:]

    def conjugated(self) -> "EmbeddedPolynomial":
        return EmbeddedPolynomial(self.n, {a: np.conj(c) for a, c in self.coeffs.items()}, self.sigma)


@dataclass(frozen=True)
class TracePolynomial:
    """f(x) = sum_alpha c_alpha x^alpha with c_alpha in the real algebra (B-coordinates)."""

    field: NumberField
    n: int
    coeffs: Mapping[MultiIndex, np.ndarray]

    def __post_init__(self):
        clean = {}
        for alpha, c in self.coeffs.items():
            alpha = parse_multi_index(alpha)
            if len(alpha) != self.n or min(alpha, default=0) < 0:
                raise DimensionMismatch(f"multi-index {alpha} does not have {self.n} entries")
            vec = np.array([float(to_fraction(v)) if isinstance(v, str) else float(v) for v in c])
            if vec.shape != (self.field.k,):
                raise DimensionMismatch(f"coefficient of {alpha} must have {self.field.k} entries")
            clean[alpha] = clean.get(alpha, 0) + vec
        object.__setattr__(self, "coeffs", dict(sorted(clean.items(), key=lambda kv: index_order(kv[0]))))

    @classmethod
    def zero(cls, field: NumberField, n: int) -> "TracePolynomial":
        return cls(field, n, {})

    @cached_property
    def degree(self) -> int:
        return max((sum(a) for a, c in self.coeffs.items() if np.any(c != 0)), default=0)

    @property
    def dim(self) -> int:
        return self.field.k * self.n

    def __add__(self, other: "TracePolynomial") -> "TracePolynomial":
        merged = {a: c.copy() for a, c in self.coeffs.items()}
        for a, c in other.coeffs.items():
            merged[a] = merged.get(a, 0) + c
        return TracePolynomial(self.field, self.n, merged)

    def scaled(self, lam: float) -> "TracePolynomial":
        return TracePolynomial(self.field, self.n, {a: lam * c for a, c in self.coeffs.items()})

    def __neg__(self) -> "TracePolynomial":
        return self.scaled(-1.0)

    @cached_property
    def embedded(self) -> tuple[EmbeddedPolynomial, ...]:
        return tuple(embed_polynomial(self, j) for j in range(self.field.k))

    def _points(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DimensionMismatch(f"points must have {self.dim} coordinates, got {x.shape[-1]}")
        return x

    def embed_points(self, x) -> np.ndarray:
        """sigma-vector of x for every embedding: shape (..., k, n)."""
        x = self._points(x)
        blocks = x.reshape(x.shape[:-1] + (self.n, self.field.k))
        return np.swapaxes(blocks @ self.field.w.T, -1, -2)


def embed_polynomial(f: TracePolynomial, sigma: int) -> EmbeddedPolynomial:
    f.field.check_index(sigma)
    w = f.field.w[sigma]
    coeffs = {a: complex(c @ w) for a, c in f.coeffs.items()}
    if f.field.is_real(sigma):
        coeffs = {a: complex(c.real) for a, c in coeffs.items()}
    return EmbeddedPolynomial(f.n, coeffs, sigma)


def polynomial_from_spec(field: NumberField, spec: dict) -> TracePolynomial:
    """Parse {"n": 1, "coeffs": {"(2)": ["0", "1"]}}; a bare number means a rational multiple of 1."""
    n = int(spec.get("n", 1))
    coeffs = {}
    one = _one_coordinates(field)
    for key, value in spec.get("coeffs", {}).items():
        if isinstance(value, (int, float, str)):
            value = [float(to_fraction(value)) * u for u in one]
        coeffs[parse_multi_index(key)] = value
    return TracePolynomial(field, n, coeffs)


def _one_coordinates(field: NumberField) -> list[float]:
    """B-coordinates of the field element 1."""
    inv = np.linalg.inv(np.array(field.basis_matrix, dtype=float))
    return list(inv[0])


def polynomial_to_spec(f: TracePolynomial) -> dict:
    return {
        "n": f.n,
        "coeffs": {"(" + ",".join(map(str, a)) + ")": [float(v) for v in c] for a, c in f.coeffs.items()},
    }


def _algebra_value(f: TracePolynomial, x: np.ndarray) -> np.ndarray:
    """f*(x) computed in the real algebra; returns B-coordinates, shape (..., k)."""
    k, n = f.field.k, f.n
    blocks = x.reshape(x.shape[:-1] + (n, k))
    top = max((max(a) for a in f.coeffs if a), default=0)
    unit = np.array(_one_coordinates(f.field))
    powers = [np.broadcast_to(unit, blocks.shape).copy()]
    for _ in range(top):
        powers.append(f.field.mul_float(powers[-1], blocks))
    total = np.zeros(x.shape[:-1] + (k,))
    for alpha, c in f.coeffs.items():
        term = np.broadcast_to(c, x.shape[:-1] + (k,))
        for l, e in enumerate(alpha):
            if e:
                term = f.field.mul_float(term, powers[e][..., l, :])
        total = total + term
    return total


def eval_phase(f: TracePolynomial, x) -> np.ndarray:
    """phi_f(x) = trace of f*(x), evaluated in the algebra."""
    x = f._points(x)
    trace = np.array(f.field.trace_vector, dtype=float)
    return _algebra_value(f, x) @ trace


def eval_phase_embedded(f: TracePolynomial, x) -> np.ndarray:
    """phi_f(x) as the sum over embeddings of P_{f,sigma}(sigma-vector of x); complex result."""
    u = f.embed_points(x)
    return sum(p(u[..., j, :]) for j, p in enumerate(f.embedded))


def grad_phase(f: TracePolynomial, x) -> np.ndarray:
    """Gradient of phi_f in R^{kn}; block l is sum_sigma d_l P_sigma(u_sigma) w_sigma (real part)."""
    x = f._points(x)
    u = f.embed_points(x)
    k, n = f.field.k, f.n
    grad = np.zeros(x.shape[:-1] + (n, k), dtype=complex)
    for j, p in enumerate(f.embedded):
        dp = p.gradient(u[..., j, :])
        grad += dp[..., :, None] * f.field.w[j]
    return grad.real.reshape(x.shape)


class ComparabilityReport(NamedTuple):
    ratio_min: float
    ratio_max: float
    upper_constant: float
    lower_constant: float
    upper_margin: float
    lower_margin: float
    holds: bool
    points: int


def gradient_constants(field: NumberField) -> tuple[float, float]:
    """(c, C) with c max|P'| <= |grad phi| <= C max|P'| for univariate f."""
    w = field.w
    upper = field.k * float(np.max(np.linalg.norm(w, axis=1)))
    vecs = decompose(field).complex_vectors
    lower = float(min(abs(w[j] @ vecs[:, j]) for j in range(field.k)))
    return lower, upper


def check_gradient_comparability(f: TracePolynomial, points, rel_tol: float = 1e-9) -> ComparabilityReport:
    """Compare |grad phi_f| with max_sigma |P'_sigma| at sample points (n = 1 only).

    Margins are the worst values of C*max - |grad| and |grad| - c*max; both
    must be at least -rel_tol*(1 + max) for the check to hold.
    """
    if f.n != 1:
        raise NotUnivariate(f"comparability is checked for n = 1, got n = {f.n}")
    lower, upper = gradient_constants(f.field)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    grad = np.linalg.norm(grad_phase(f, pts), axis=-1)
    u = f.embed_points(pts)
    derivs = np.stack([np.abs(p.gradient(u[:, j, :])[:, 0]) for j, p in enumerate(f.embedded)], axis=-1)
    big = derivs.max(axis=-1)
    slack = rel_tol * (1 + big)
    upper_margin = float(np.min(upper * big - grad))
    lower_margin = float(np.min(grad - lower * big))
    positive = big > 0
    ratios = grad[positive] / big[positive]
    holds = bool(np.all(upper * big - grad >= -slack) and np.all(grad - lower * big >= -slack))
    return ComparabilityReport(
        ratio_min=float(ratios.min()) if ratios.size else float("nan"),
        ratio_max=float(ratios.max()) if ratios.size else float("nan"),
        upper_constant=upper,
        lower_constant=lower,
        upper_margin=upper_margin,
        lower_margin=lower_margin,
        holds=holds,
        points=len(pts),
    )


# moment curve: exact polynomials in q_1..q_k, stored as {exponent tuple: Fraction}

RationalPoly = dict[tuple[int, ...], Fraction]


def _rpoly_mul(a: RationalPoly, b: RationalPoly) -> RationalPoly:
    out: RationalPoly = {}
    for ea, ca in a.items():
        for eb, cb in b.items():
            e = tuple(x + y for x, y in zip(ea, eb))
            out[e] = out.get(e, Fraction(0)) + ca * cb
    return {e: c for e, c in out.items() if c != 0}


def _rpoly_add(a: RationalPoly, b: RationalPoly) -> RationalPoly:
    out = dict(a)
    for e, c in b.items():
        out[e] = out.get(e, Fraction(0)) + c
    return {e: c for e, c in out.items() if c != 0}


def moment_curve_polynomials(field: NumberField, n: int) -> list[list[RationalPoly]]:
    """Q[l-1][j] is the j-th B-coordinate of (q_1 omega_1 + ... + q_k omega_k)^l."""
    k, c = field.k, field.structure
    generic = [{tuple(int(i == j) for i in range(k)): Fraction(1)} for j in range(k)]
    out = [generic]
    for _ in range(1, n):
        prev = out[-1]
        nxt: list[RationalPoly] = [{} for _ in range(k)]
        for i, j in itertools.product(range(k), repeat=2):
            prod = _rpoly_mul(prev[i], generic[j])
            if not prod:
                continue
            for l in range(k):
                if c[i][j][l] != 0:
                    nxt[l] = _rpoly_add(nxt[l], {e: v * c[i][j][l] for e, v in prod.items()})
        out.append(nxt)
    return out


def eval_rational_poly(poly: RationalPoly, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    total = np.zeros(q.shape[:-1])
    for e, c in poly.items():
        total = total + float(c) * np.prod(q ** np.array(e), axis=-1)
    return total


def eval_rational_poly_exact(poly: RationalPoly, q) -> Fraction:
    total = Fraction(0)
    for e, c in poly.items():
        total += c * math.prod(Fraction(v) ** p for v, p in zip(q, e))
    return total


def univariate(field: NumberField, coeffs: Mapping[int, np.ndarray]) -> TracePolynomial:
    """Shorthand for sum_l coeffs[l] x^l in one variable."""
    return TracePolynomial(field, 1, {(l,): c for l, c in coeffs.items()})
