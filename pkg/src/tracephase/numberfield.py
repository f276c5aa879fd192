"""Number fields K = Q[t]/(m(t)) with a chosen Q-basis.

Structure constants of the basis are exact rationals; embeddings live in
double precision.  Coordinates are always taken with respect to the basis
omega_1..omega_k, and ``w[j]`` is the vector (sigma_j(omega_1), ...,
sigma_j(omega_k)) so that sigma_j applied to a coordinate vector x is the
plain dot product ``x @ w[j]``.

Embeddings are ordered real roots first (descending), then conjugate pairs
with the positive-imaginary member first.  Each real embedding and each
conjugate pair forms one *class*; many quantities only depend on the class.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg

from .errors import (
    BadEmbeddingIndex,
    DegenerateBasis,
    DimensionMismatch,
    EmptyPolynomial,
    IllConditioned,
    NonMonic,
    RealEmbedding,
    RepeatedRoots,
    ZeroVector,
)

IMAG_TOL = 1e-10
ROOT_SEPARATION = 1e-8
NEWTON_STEPS = 50


def to_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(str(value).strip())


# exact polynomial helpers, coefficient lists with the constant term first

def _trim(p: list[Fraction]) -> list[Fraction]:
    p = list(p)
    while p and p[-1] == 0:
        p.pop()
    return p


def _poly_mul(a: Sequence[Fraction], b: Sequence[Fraction]) -> list[Fraction]:
    if not a or not b:
        return []
    out = [Fraction(0)] * (len(a) + len(b) - 1)
    for i, ai in enumerate(a):
        if ai == 0:
            continue
        for j, bj in enumerate(b):
            out[i + j] += ai * bj
    return _trim(out)


def _poly_rem(a: Sequence[Fraction], m: Sequence[Fraction]) -> list[Fraction]:
    a = _trim(list(a))
    m = _trim(list(m))
    dm = len(m) - 1
    lead = m[-1]
    while len(a) - 1 >= dm and a:
        shift = len(a) - 1 - dm
        factor = a[-1] / lead
        for i, mi in enumerate(m):
            a[i + shift] -= factor * mi
        a = _trim(a)
    return a


def _poly_gcd(a: Sequence[Fraction], b: Sequence[Fraction]) -> list[Fraction]:
    a, b = _trim(list(a)), _trim(list(b))
    while b:
        a, b = b, _poly_rem(a, b)
    if not a:
        return a
    return [c / a[-1] for c in a]


def _poly_deriv(p: Sequence[Fraction]) -> list[Fraction]:
    return _trim([i * c for i, c in enumerate(p)][1:])


def _frac_inverse(m: Sequence[Sequence[Fraction]]) -> list[list[Fraction]]:
    """Gauss-Jordan inverse over the rationals; raises DegenerateBasis if singular."""
    k = len(m)
    aug = [list(row) + [Fraction(int(i == j)) for j in range(k)] for i, row in enumerate(m)]
    for col in range(k):
        pivot = next((r for r in range(col, k) if aug[r][col] != 0), None)
        if pivot is None:
            raise DegenerateBasis("basis matrix is singular over Q")
        aug[col], aug[pivot] = aug[pivot], aug[col]
        inv = 1 / aug[col][col]
        aug[col] = [v * inv for v in aug[col]]
        for r in range(k):
            if r != col and aug[r][col] != 0:
                f = aug[r][col]
                aug[r] = [vr - f * vc for vr, vc in zip(aug[r], aug[col])]
    return [row[k:] for row in aug]


def _horner(coeffs: np.ndarray, z):
    acc = np.zeros_like(z, dtype=complex) + coeffs[-1]
    for c in coeffs[-2::-1]:
        acc = acc * z + c
    return acc


def _refine_roots(coeffs: np.ndarray, roots: np.ndarray) -> np.ndarray:
    deriv = np.array([i * c for i, c in enumerate(coeffs)][1:], dtype=complex)
    out = roots.astype(complex).copy()
    for _ in range(NEWTON_STEPS):
        val = _horner(coeffs, out)
        der = _horner(deriv, out)
        safe = np.abs(der) > 0
        step = np.where(safe, val / np.where(safe, der, 1.0), 0.0)
        out = out - step
        if np.all(np.abs(step) <= 1e-16 * (1 + np.abs(out))):
            break
    return out


@dataclass(frozen=True)
class NumberField:
    """A degree-k field with basis; build instances with :func:`build_field`."""

    minpoly: tuple[Fraction, ...]
    basis_matrix: tuple[tuple[Fraction, ...], ...]
    embeddings: np.ndarray = dc_field(repr=False, compare=False)
    k1: int
    k2: int
    structure: tuple = dc_field(repr=False, compare=False)

    @property
    def k(self) -> int:
        return len(self.minpoly) - 1

    @property
    def ktilde(self) -> int:
        return self.k1 + self.k2

    def is_real(self, j: int) -> bool:
        self.check_index(j)
        return j < self.k1

    def conjugate(self, j: int) -> int:
        """Index of the complex conjugate embedding (itself when real)."""
        self.check_index(j)
        if j < self.k1:
            return j
        return j + 1 if (j - self.k1) % 2 == 0 else j - 1

    def check_index(self, j: int) -> None:
        if not isinstance(j, (int, np.integer)) or not 0 <= j < self.k:
            raise BadEmbeddingIndex(f"embedding index {j!r} outside 0..{self.k - 1}")

    @cached_property
    def classes(self) -> tuple[tuple[int, ...], ...]:
        """Embedding classes: singletons for real embeddings, pairs otherwise."""
        real = [(j,) for j in range(self.k1)]
        pairs = [(self.k1 + 2 * p, self.k1 + 2 * p + 1) for p in range(self.k2)]
        return tuple(real + pairs)

    def class_of(self, j: int) -> int:
        self.check_index(j)
        if j < self.k1:
            return j
        return self.k1 + (j - self.k1) // 2

    @cached_property
    def structure_float(self) -> np.ndarray:
        """c[i, j, l] with omega_i omega_j = sum_l c[i, j, l] omega_l."""
        return np.array(self.structure, dtype=float)

    @cached_property
    def w(self) -> np.ndarray:
        """Row j holds (sigma_j(omega_1), ..., sigma_j(omega_k))."""
        vander = np.vander(self.embeddings, self.k, increasing=True)
        basis = np.array(self.basis_matrix, dtype=float)
        out = vander @ basis.T
        out[: self.k1] = out[: self.k1].real
        return out

    @cached_property
    def trace_vector(self) -> np.ndarray:
        """Field traces of the basis elements, as exact rationals."""
        c = self.structure
        return tuple(sum((c[i][j][j] for j in range(self.k)), Fraction(0)) for i in range(self.k))

    def mul_float(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Product in the real algebra; broadcasts over leading axes."""
        return np.einsum("...i,...j,ijl->...l", a, b, self.structure_float)

    def minkowski_matrix(self) -> np.ndarray:
        """Real k x k matrix sending x to (Re/Im parts of sigma(x)) per class."""
        rows = []
        for cls in self.classes:
            wj = self.w[cls[0]]
            if len(cls) == 1:
                rows.append(wj.real)
            else:
                rows.extend([wj.real, wj.imag])
        return np.array(rows)


def build_field(minpoly: Sequence, basis_matrix: Sequence[Sequence] | None = None) -> NumberField:
    """Construct a number field from a monic squarefree polynomial (constant term first).

    ``basis_matrix[i]`` lists the power-basis coordinates of omega_i.
    """
    coeffs = _trim([to_fraction(c) for c in minpoly])
    if len(coeffs) < 2:
        raise EmptyPolynomial("minimal polynomial must have degree at least 1")
    if coeffs[-1] != 1:
        raise NonMonic(f"leading coefficient is {coeffs[-1]}, expected 1")
    k = len(coeffs) - 1
    if len(_poly_gcd(coeffs, _poly_deriv(coeffs))) > 1:
        raise RepeatedRoots("minimal polynomial shares a factor with its derivative")

    if basis_matrix is None:
        basis = [[Fraction(int(i == j)) for j in range(k)] for i in range(k)]
    else:
        basis = [[to_fraction(v) for v in row] for row in basis_matrix]
        if len(basis) != k or any(len(row) != k for row in basis):
            raise DimensionMismatch(f"basis matrix must be {k}x{k}")
    basis_inv = _frac_inverse(basis)

    roots = _sorted_roots(np.array([float(c) for c in coeffs]))
    k1 = int(np.sum(roots.imag == 0))
    k2 = (k - k1) // 2
    if k >= 2:
        _warn_rational_roots(roots[:k1])

    structure = _structure_constants(coeffs, basis, basis_inv)
    return NumberField(
        minpoly=tuple(coeffs),
        basis_matrix=tuple(tuple(r) for r in basis),
        embeddings=roots,
        k1=k1,
        k2=k2,
        structure=structure,
    )


def _sorted_roots(coeffs: np.ndarray) -> np.ndarray:
    k = len(coeffs) - 1
    if k == 1:
        roots = np.array([-coeffs[0] + 0j])
    else:
        roots = _refine_roots(coeffs, np.roots(coeffs[::-1]).astype(complex))
    for r in roots:
        if abs(_horner(coeffs, np.array([r]))[0]) > 1e-12 * (1 + abs(r)) ** k:
            raise IllConditioned(f"root {r} not resolved to the required residual")
    if k > 1:
        gaps = np.abs(roots[:, None] - roots[None, :])
        np.fill_diagonal(gaps, np.inf)
        if gaps.min() < ROOT_SEPARATION:
            raise IllConditioned("two roots closer than 1e-8")

    is_real = np.abs(roots.imag) <= IMAG_TOL * (1 + np.abs(roots))
    real = np.sort(roots[is_real].real)[::-1]
    upper = roots[~is_real & (roots.imag > 0)]
    lower = list(roots[~is_real & (roots.imag < 0)])
    pairs = []
    for z in sorted(upper, key=lambda z: (-z.real, -z.imag)):
        partner = min(range(len(lower)), key=lambda i: abs(lower[i] - np.conj(z)))
        zbar = lower.pop(partner)
        z = 0.5 * (z + np.conj(zbar))
        pairs.extend([z, np.conj(z)])
    if lower:
        raise IllConditioned("complex roots do not pair into conjugates")
    return np.concatenate([real.astype(complex), np.array(pairs, dtype=complex)])


def _warn_rational_roots(real_roots: np.ndarray) -> None:
    for r in real_roots.real:
        approx = Fraction(float(r)).limit_denominator(1000)
        if abs(approx.numerator) <= 1000 and abs(float(approx) - r) <= 1e-10:
            warnings.warn(
                f"minimal polynomial has the rational root {approx}; the input is reducible "
                "and defines a product ring rather than a field",
                stacklevel=3,
            )


def _structure_constants(coeffs, basis, basis_inv):
    k = len(basis)
    out = [[[Fraction(0)] * k for _ in range(k)] for _ in range(k)]
    for i, j in itertools.product(range(k), repeat=2):
        prod = _poly_rem(_poly_mul(basis[i], basis[j]), coeffs)
        prod = prod + [Fraction(0)] * (k - len(prod))
        # power-basis row vector times basis^{-1} gives B-coordinates
        for l in range(k):
            out[i][j][l] = sum((prod[p] * basis_inv[p][l] for p in range(k)), Fraction(0))
    return tuple(tuple(tuple(row) for row in plane) for plane in out)


def field_from_spec(spec: dict) -> NumberField:
    """Build a field from the JSON layout {"minpoly": [...], "basis": [[...], ...]}."""
    if "minpoly" not in spec:
        raise EmptyPolynomial("field spec has no 'minpoly' entry")
    return build_field(spec["minpoly"], spec.get("basis"))


def field_to_spec(field: NumberField) -> dict:
    return {
        "minpoly": [str(c) for c in field.minpoly],
        "basis": [[str(v) for v in row] for row in field.basis_matrix],
    }


def _check_vector(field: NumberField, q, what="vector") -> None:
    if len(q) != field.k:
        raise DimensionMismatch(f"{what} has length {len(q)}, field degree is {field.k}")


def mult_matrix(field: NumberField, q: Sequence) -> list[list[Fraction]]:
    """Exact matrix of multiplication by q (B-coordinates): column j is q*omega_j."""
    _check_vector(field, q)
    q = [to_fraction(v) for v in q]
    k, c = field.k, field.structure
    return [
        [sum((q[i] * c[i][j][l] for i in range(k)), Fraction(0)) for j in range(k)]
        for l in range(k)
    ]


def mult_matrix_real(field: NumberField, x: np.ndarray) -> np.ndarray:
    """A*(x) for real coordinate vectors; broadcasts over leading axes."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != field.k:
        raise DimensionMismatch(f"expected trailing dimension {field.k}")
    return np.einsum("...i,ijl->...lj", x, field.structure_float)


def multiply(field: NumberField, q: Sequence, r: Sequence) -> list[Fraction]:
    """Exact product of two field elements given in B-coordinates."""
    _check_vector(field, r)
    a = mult_matrix(field, q)
    r = [to_fraction(v) for v in r]
    return [sum((a[l][j] * r[j] for j in range(field.k)), Fraction(0)) for l in range(field.k)]


def trace_form(field: NumberField) -> list[list[Fraction]]:
    """T with tr(A(x)A(y)) = Tx . y, i.e. T_ij = tr(omega_i omega_j)."""
    k, c, t = field.k, field.structure, field.trace_vector
    return [[sum((c[i][j][l] * t[l] for l in range(k)), Fraction(0)) for j in range(k)] for i in range(k)]


def trace_form_float(field: NumberField) -> np.ndarray:
    return np.array(trace_form(field), dtype=float)


def sigma_star(field: NumberField, j: int, x) -> complex:
    """sigma_j applied to the element with real coordinates x."""
    field.check_index(j)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != field.k:
        raise DimensionMismatch(f"expected {field.k} coordinates")
    value = x @ field.w[j]
    if field.is_real(j):
        return np.real(value) + 0j
    return value


def discriminant(field: NumberField) -> complex:
    return complex(np.linalg.det(field.w.T))


@dataclass(frozen=True)
class SubspaceDecomposition:
    """Real and complex subspaces attached to the embedding classes.

    ``real_bases[c]`` is a k x dim orthonormal basis of the real subspace on
    which every embedding outside class c vanishes.  ``complex_vectors[:, j]``
    is a unit vector annihilated (bilinear dot) by every w_sigma, sigma != j.
    """

    field: NumberField = dc_field(repr=False)
    w_vectors: np.ndarray = dc_field(repr=False)
    real_bases: tuple[np.ndarray, ...] = dc_field(repr=False)
    complex_vectors: np.ndarray = dc_field(repr=False)
    discriminant: complex

    @cached_property
    def stacked_basis(self) -> np.ndarray:
        return np.hstack(self.real_bases)

    @cached_property
    def slices(self) -> tuple[slice, ...]:
        out, start = [], 0
        for b in self.real_bases:
            out.append(slice(start, start + b.shape[1]))
            start += b.shape[1]
        return tuple(out)

    def components(self, x: np.ndarray) -> list[np.ndarray]:
        """Split x in R^{kn} (blocks of length k) into coordinates per class.

        Returns, for each class c, an array (..., n * dim_c) of coordinates of
        the V_c^n component in the orthonormal class basis; its norm is the
        norm of that component.
        """
        x = np.asarray(x, dtype=float)
        k = self.field.k
        n = x.shape[-1] // k
        blocks = x.reshape(x.shape[:-1] + (n, k))
        coords = np.linalg.solve(self.stacked_basis, np.moveaxis(blocks, -1, -2).reshape(-1, k, n))
        coords = coords.reshape(blocks.shape[:-2] + (k, n))
        return [np.moveaxis(coords[..., s, :], -1, -2).reshape(x.shape[:-1] + (-1,)) for s in self.slices]

    def embed_components(self, c: int, coords: np.ndarray, n: int) -> np.ndarray:
        """Inverse of :meth:`components` for a single class."""
        basis = self.real_bases[c]
        coords = np.asarray(coords, dtype=float).reshape(coords.shape[:-1] + (n, basis.shape[1]))
        return (coords @ basis.T).reshape(coords.shape[:-2] + (n * self.field.k,))


def _canonical_basis(null: np.ndarray) -> np.ndarray:
    dim = null.shape[1]
    proj = null @ null.T
    q, _, _ = scipy.linalg.qr(proj, pivoting=True)
    basis = q[:, :dim]
    for col in range(dim):
        v = basis[:, col]
        lead = np.flatnonzero(np.abs(v) > 1e-12)[0]
        if v[lead] < 0:
            basis[:, col] = -v
    return basis + 0.0


def decompose(field: NumberField) -> SubspaceDecomposition:
    w = field.w
    disc = discriminant(field)
    scale = max(1.0, float(np.abs(w).max()))
    if abs(disc) <= 1e-10 * scale**field.k:
        raise DegenerateBasis(f"discriminant {disc} is numerically zero")

    spans = []
    for cls in field.classes:
        wj = w[cls[0]]
        spans.append([wj.real] if len(cls) == 1 else [2 * wj.real, 2 * wj.imag])

    bases = []
    for c, cls in enumerate(field.classes):
        others = [v for d, span in enumerate(spans) if d != c for v in span]
        if others:
            null = scipy.linalg.null_space(np.array(others))
        else:
            null = np.eye(field.k)
        if null.shape[1] != len(cls):
            raise DegenerateBasis("class subspaces do not have the expected dimension")
        bases.append(_canonical_basis(null))

    inv = np.linalg.inv(w)
    vecs = inv / np.linalg.norm(inv, axis=0)
    for j in range(field.k):
        v = vecs[:, j]
        lead = np.flatnonzero(np.abs(v) > 1e-12)[0]
        vecs[:, j] = v * (abs(v[lead]) / v[lead])
        if field.is_real(j):
            vecs[:, j] = vecs[:, j].real
    return SubspaceDecomposition(field, w, tuple(bases), vecs, disc)


class RealPartDirection(NamedTuple):
    vector: np.ndarray
    constant: float


def realpart_direction(field: NumberField, j: int, x, decomposition: SubspaceDecomposition | None = None) -> RealPartDirection:
    """Unit z in the class subspace of the complex embedding j with |Re(x . sigma_j(z))| >= c|x|.

    Per variable the better of the two class basis vectors is used (signed so
    the real parts add up), weighted by |x_l|.
    """
    field.check_index(j)
    if field.is_real(j):
        raise RealEmbedding(f"embedding {j} is real")
    x = np.atleast_1d(np.asarray(x, dtype=complex))
    norm_x = float(np.linalg.norm(x))
    if norm_x == 0:
        raise ZeroVector("x must be nonzero")
    dec = decomposition or decompose(field)
    basis = dec.real_bases[field.class_of(j)]
    images = basis.T @ field.w[j]
    blocks = []
    for xl in x:
        re = np.real(xl * images)
        m = int(np.argmax(np.abs(re)))
        sign = 1.0 if re[m] >= 0 else -1.0
        blocks.append(sign * abs(xl) * basis[:, m])
    z = np.concatenate(blocks)
    z /= np.linalg.norm(z)
    value = sum(xl * (z[i * field.k:(i + 1) * field.k] @ field.w[j]) for i, xl in enumerate(x))
    return RealPartDirection(z, abs(float(np.real(value))) / norm_x)
