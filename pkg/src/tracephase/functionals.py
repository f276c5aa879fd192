"""H- and J-functionals, cutoffs, polydiscs and covering diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import cached_property
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import BudgetExceeded, DimensionMismatch, DimensionTooLarge, EmptySet, NotConjugationClosed
from .numberfield import NumberField, SubspaceDecomposition, decompose
from .phases import EmbeddedPolynomial, MultiIndex, TracePolynomial, embed_polynomial, multi_indices

TIE_TOL = 1e-12


def smooth_step(t: np.ndarray) -> np.ndarray:
    """g(t) = h(t) / (h(t) + h(1 - t)) with h(t) = exp(-1/t) on t > 0; 0 for t <= 0, 1 for t >= 1."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
        out = a / (a + b)
    return np.where(t >= 1, 1.0, np.where(t <= 0, 0.0, out))


@dataclass(frozen=True)
class Cutoff:
    """Radial bump: 1 on the closed rho1-ball, 0 outside the rho2-ball."""

    center: np.ndarray
    rho1: float
    rho2: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))
        if not 0 < self.rho1 < self.rho2:
            raise ValueError("need 0 < rho1 < rho2")

    @classmethod
    def centered(cls, dim: int, rho1: float, rho2: float) -> "Cutoff":
        return cls(np.zeros(dim), rho1, rho2)

    @property
    def dim(self) -> int:
        return self.center.size

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DimensionMismatch(f"cutoff lives in dimension {self.dim}, got {x.shape[-1]}")
        return x

    def __call__(self, x) -> np.ndarray:
        r = np.linalg.norm(self._check(x) - self.center, axis=-1)
        return smooth_step((self.rho2 - r) / (self.rho2 - self.rho1))

    def contains(self, x) -> np.ndarray:
        """Membership in the closed support."""
        return np.linalg.norm(self._check(x) - self.center, axis=-1) <= self.rho2 * (1 + 1e-12)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.center - self.rho2, self.center + self.rho2

    def intersects_box(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """Whether each box [lo, hi] meets the open support; lo, hi have shape (..., dim)."""
        nearest = np.clip(self.center, lo, hi)
        return np.linalg.norm(nearest - self.center, axis=-1) < self.rho2

    def radial_profile(self, r: np.ndarray) -> np.ndarray:
        return smooth_step((self.rho2 - np.asarray(r, dtype=float)) / (self.rho2 - self.rho1))


@dataclass(frozen=True)
class EmbeddingProductCutoff:
    """Product over embedding classes of radial bumps in Minkowski coordinates.

    For a class c the factor depends on |sigma-vector of (x - center)| only,
    with plateau rho1*|w_c| and support rho2*|w_c|.  Hence the cutoff equals
    1 whenever |x - center| <= rho1 and its support is a product of balls in
    the class coordinates, which lets integrals of separable phases factor.
    """

    field: NumberField
    n: int
    rho1: float
    rho2: float
    center: np.ndarray | None = None

    def __post_init__(self):
        c = np.zeros(self.dim) if self.center is None else np.asarray(self.center, dtype=float)
        object.__setattr__(self, "center", c)
        if not 0 < self.rho1 < self.rho2:
            raise ValueError("need 0 < rho1 < rho2")

    @property
    def dim(self) -> int:
        return self.field.k * self.n

    @cached_property
    def class_scales(self) -> np.ndarray:
        return np.array([np.linalg.norm(self.field.w[cls[0]]) for cls in self.field.classes])

    def class_norms(self, x) -> np.ndarray:
        """|sigma-vector of (x - center)| per class, shape (..., k~)."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DimensionMismatch(f"cutoff lives in dimension {self.dim}")
        blocks = (x - self.center).reshape(x.shape[:-1] + (self.n, self.field.k))
        u = np.einsum("...li,ji->...jl", blocks, self.field.w)
        reps = [cls[0] for cls in self.field.classes]
        return np.linalg.norm(u[..., reps, :], axis=-1)

    def factor(self, c: int, radius: np.ndarray) -> np.ndarray:
        s = self.class_scales[c]
        return smooth_step((self.rho2 * s - radius) / ((self.rho2 - self.rho1) * s))

    def __call__(self, x) -> np.ndarray:
        norms = self.class_norms(x)
        out = np.ones(norms.shape[:-1])
        for c in range(norms.shape[-1]):
            out = out * self.factor(c, norms[..., c])
        return out

    def contains(self, x) -> np.ndarray:
        norms = self.class_norms(x)
        return np.all(norms <= self.rho2 * self.class_scales * (1 + 1e-12), axis=-1)

    @cached_property
    def _half_widths(self) -> np.ndarray:
        # x = M^{-1} u per block, with |u_c| <= rho2 |w_c|
        minv = np.linalg.inv(self.field.minkowski_matrix())
        widths = np.zeros(self.field.k)
        col = 0
        for c, cls in enumerate(self.field.classes):
            part = minv[:, col : col + len(cls)]
            widths += np.linalg.norm(part, axis=1) * self.rho2 * self.class_scales[c]
            col += len(cls)
        return np.tile(widths, self.n)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.center - self._half_widths, self.center + self._half_widths

    def intersects_box(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        # conservative: test the bounding ball of each box against each class slab
        mid = 0.5 * (np.asarray(lo) + np.asarray(hi))
        half = 0.5 * np.linalg.norm(np.asarray(hi) - np.asarray(lo), axis=-1)
        norms = self.class_norms(mid)
        reach = half[..., None] * self.class_scales
        return np.all(norms - reach < self.rho2 * self.class_scales, axis=-1)


# pointwise functionals

class PointValue(NamedTuple):
    value: float
    argmax: MultiIndex | None


def _functional(p: EmbeddedPolynomial, z: np.ndarray, min_order: int, scale: float):
    """Values and argmax positions of max_{|b| >= min_order} |D_b P(z)|^{scale/|b|}."""
    z = np.asarray(z, dtype=complex)
    if p.degree < min_order:
        return [], np.zeros(z.shape[:-1]), np.full(z.shape[:-1], -1)
    betas, coeffs = p.taylor_coefficients(z)
    keep = [i for i, b in enumerate(betas) if sum(b) >= min_order]
    orders = np.array([sum(betas[i]) for i in keep], dtype=float)
    vals = np.abs(coeffs[..., keep]) ** (scale / orders)
    best = vals.max(axis=-1)
    # first index (graded order) within a relative tie tolerance of the max
    near = vals >= best[..., None] * (1 - TIE_TOL)
    arg = np.argmax(near, axis=-1)
    arg = np.where(best > 0, arg, -1)
    return [betas[i] for i in keep], best, arg


def _point_values(p, z, min_order, scale):
    betas, best, arg = _functional(p, z, min_order, scale)
    return [PointValue(float(v), betas[a] if a >= 0 else None) for v, a in zip(np.ravel(best), np.ravel(arg))]


def embedded_points(f: TracePolynomial, sigma: int, x) -> np.ndarray:
    f.field.check_index(sigma)
    return f.embed_points(np.atleast_2d(x))[:, sigma, :]


def h_values(f: TracePolynomial, sigma: int, x, min_order: int = 1) -> np.ndarray:
    """Vectorized pointwise H (min_order=1) or J (min_order=2) at points of shape (N, kn)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    z = f.embed_points(x)[:, sigma, :]
    _, best, _ = _functional(f.embedded[sigma], z, min_order, 1.0)
    return best


def pointwise_H(f: TracePolynomial, sigma: int, x) -> PointValue:
    return _point_values(f.embedded[_checked(f, sigma)], embedded_points(f, sigma, x), 1, 1.0)[0]


def pointwise_J(f: TracePolynomial, sigma: int, x) -> PointValue:
    return _point_values(f.embedded[_checked(f, sigma)], embedded_points(f, sigma, x), 2, 1.0)[0]


def _checked(f: TracePolynomial, sigma: int) -> int:
    f.field.check_index(sigma)
    return sigma


def classical_H(mode: str, coeffs, z, min_order: int = 1) -> PointValue:
    """Classical real (exponent 1/|a|) or complex (exponent 2/|a|) H-functional at one point.

    ``coeffs`` is a list indexed by degree (one variable) or a mapping from
    multi-indices to coefficients.
    """
    p = _as_embedded(coeffs)
    z = np.atleast_1d(np.asarray(z, dtype=complex)).reshape(1, p.n)
    if mode == "real":
        scale = 1.0
    elif mode == "complex":
        scale = 2.0
    else:
        raise ValueError("mode must be 'real' or 'complex'")
    return _point_values(p, z, min_order, scale)[0]


def _as_embedded(coeffs) -> EmbeddedPolynomial:
    if isinstance(coeffs, EmbeddedPolynomial):
        return coeffs
    if isinstance(coeffs, Mapping):
        items = {tuple(a) if not isinstance(a, int) else (a,): complex(c) for a, c in coeffs.items()}
        n = len(next(iter(items))) if items else 1
        return EmbeddedPolynomial(n, items)
    return EmbeddedPolynomial(1, {(d,): complex(c) for d, c in enumerate(coeffs)})


# uniform functionals

@dataclass(frozen=True)
class UniformValue:
    value: float
    argmin: np.ndarray
    resolution: int
    passes: int
    evaluations: int
    certified: bool = False

    def meta(self) -> dict:
        return {
            "resolution": self.resolution,
            "refinement_passes": self.passes,
            "evaluations": self.evaluations,
            "certified_lower_bound": self.certified,
            "argmin": [float(v) for v in self.argmin],
        }


def default_resolution(dim: int) -> int:
    if dim > 4:
        raise DimensionTooLarge(f"grid search supports at most 4 dimensions, got {dim}")
    return 33 if dim <= 3 else 17


def grid_minimize(func, psi, resolution: int | None = None, passes: int = 3) -> UniformValue:
    """Approximate inf of ``func`` over supp psi by a grid plus local refinement passes.

    ``func`` maps an (N, D) array to N values.  The result is an upper bound
    on the true infimum.
    """
    dim = psi.dim
    if resolution is None:
        resolution = default_resolution(dim)
    elif dim > 4:
        raise DimensionTooLarge(f"grid search supports at most 4 dimensions, got {dim}")
    if resolution < 9:
        raise ValueError("grid resolution must be at least 9 points per axis")
    lo, hi = psi.bounding_box()
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    best_val, best_pt, evals = math.inf, np.array(psi.center, dtype=float), 0
    for step in range(passes + 1):
        axes = [np.linspace(c - h, c + h, resolution) for c, h in zip(center, half)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
        pts = pts[psi.contains(pts)]
        if step == 0 and len(pts) == 0:
            pts = np.array([psi.center])
        if len(pts):
            vals = func(pts)
            evals += len(pts)
            i = int(np.argmin(vals))
            if vals[i] < best_val:
                best_val, best_pt = float(vals[i]), pts[i]
        center, half = best_pt, half / 8
    return UniformValue(best_val, best_pt, resolution, passes, evals)


def uniform_H(f: TracePolynomial, sigma: int, psi, resolution: int | None = None, passes: int = 3,
              min_order: int = 1) -> UniformValue:
    _checked(f, sigma)
    if psi.dim != f.dim:
        raise DimensionMismatch("cutoff and polynomial live in different dimensions")
    if f.dim > 4:
        raise DimensionTooLarge(f"grid search supports at most 4 dimensions, got {f.dim}")
    if f.embedded[sigma].degree < min_order:
        return UniformValue(0.0, np.asarray(psi.center, dtype=float), resolution or 0, 0, 0)
    return grid_minimize(lambda pts: h_values(f, sigma, pts, min_order), psi, resolution, passes)


def check_embedding_set(field: NumberField, S: Iterable[int]) -> tuple[int, ...]:
    S = tuple(sorted(set(int(s) for s in S)))
    if not S:
        raise EmptySet("embedding set is empty")
    for s in S:
        field.check_index(s)
        if field.conjugate(s) not in S:
            raise NotConjugationClosed(f"embedding {s} present without its conjugate {field.conjugate(s)}")
    return S


def combined_H(f: TracePolynomial, S: Iterable[int], psi, resolution: int | None = None, passes: int = 3) -> float:
    S = check_embedding_set(f.field, S)
    return math.prod(uniform_H(f, s, psi, resolution, passes).value for s in S)


def classical_uniform_H(mode: str, coeffs, psi: Cutoff, resolution: int | None = None, passes: int = 3) -> UniformValue:
    """inf over supp psi of the classical H; complex mode reads R^{2n} as C^n."""
    p = _as_embedded(coeffs)
    scale = 2.0 if mode == "complex" else 1.0

    def func(pts):
        z = pts[:, 0::2] + 1j * pts[:, 1::2] if mode == "complex" else pts
        return _functional(p, z, 1, scale)[1]

    return grid_minimize(func, psi, resolution, passes)


# radii and polydiscs

def class_indices_of(field: NumberField, S: Iterable[int]) -> set[int]:
    return {field.class_of(s) for s in S}


@dataclass(frozen=True)
class Polydisc:
    center: np.ndarray
    S: tuple[int, ...]
    scale: float
    radii: np.ndarray
    decomposition: SubspaceDecomposition = dc_field(repr=False)
    n: int = 1

    @property
    def infinite(self) -> bool:
        return bool(np.any(np.isinf(self.radii)))

    def contains(self, y) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        parts = self.decomposition.components(y - self.center)
        ok = np.ones(len(y), dtype=bool)
        for c, part in enumerate(parts):
            ok &= np.linalg.norm(part, axis=-1) <= self.radii[c] * (1 + 1e-12) + 1e-15
        return ok

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Uniform samples from the polydisc (per-class uniform balls); radii must be finite."""
        if self.infinite:
            raise ValueError("cannot sample a polydisc with an infinite radius")
        out = np.tile(self.center, (count, 1))
        for c, basis in enumerate(self.decomposition.real_bases):
            dim = basis.shape[1] * self.n
            g = rng.standard_normal((count, dim))
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            g *= rng.random((count, 1)) ** (1.0 / dim) * self.radii[c]
            out += self.decomposition.embed_components(c, g, self.n)
        return out


def radii(f: TracePolynomial, S: Sequence[int], x, C: float) -> np.ndarray:
    """r_{S,c,C}(x) per class: C / J on classes meeting S (inf when J = 0), 1 elsewhere."""
    field = f.field
    inside = class_indices_of(field, S)
    out = np.ones(field.ktilde)
    for c, cls in enumerate(field.classes):
        if c in inside:
            j = pointwise_J(f, cls[0], x).value
            out[c] = C / j if j > 0 else math.inf
            if C == 0:
                out[c] = 0.0
    return out


def polydisc(f: TracePolynomial, S: Sequence[int], x, C: float, decomposition=None) -> Polydisc:
    S = check_embedding_set(f.field, S)
    dec = decomposition or decompose(f.field)
    x = np.asarray(x, dtype=float)
    return Polydisc(x, S, float(C), radii(f, S, x, C), dec, f.n)


def _radii_batch(f: TracePolynomial, S, points: np.ndarray, C: float) -> np.ndarray:
    field = f.field
    inside = class_indices_of(field, S)
    out = np.ones((len(points), field.ktilde))
    for c, cls in enumerate(field.classes):
        if c in inside:
            j = h_values(f, cls[0], points, 2)
            with np.errstate(divide="ignore"):
                out[:, c] = np.where(j > 0, C / np.where(j > 0, j, 1.0), math.inf)
    return out


@dataclass(frozen=True)
class Cover:
    centers: np.ndarray
    radii_eps: np.ndarray
    candidates: int
    uncovered: int
    eps: float


def vitali_cover(f: TracePolynomial, S: Sequence[int], psi, eps: float, resolution: int | None = None,
                 max_centers: int = 1_000_000) -> Cover:
    """Greedy Vitali selection over a candidate grid of supp psi.

    Candidates are visited from the largest polydisc (sum of log radii)
    downwards; a candidate is kept when its eps-polydisc misses every kept
    one.  ``uncovered`` counts candidates outside all 3*eps polydiscs.
    """
    S = check_embedding_set(f.field, S)
    dec = decompose(f.field)
    dim = psi.dim
    if resolution is None:
        resolution = {1: 401, 2: 61, 3: 21, 4: 11}.get(dim, 9)
    lo, hi = psi.bounding_box()
    axes = [np.linspace(a, b, resolution) for a, b in zip(lo, hi)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    pts = pts[psi.contains(pts)]
    r = _radii_batch(f, S, pts, eps)
    with np.errstate(divide="ignore"):
        size = np.log(r).sum(axis=1)
    order = np.lexsort((np.arange(len(pts)), -size))
    parts = dec.components(pts)

    chosen: list[int] = []
    for i in order:
        if chosen:
            idx = np.array(chosen)
            dist = np.stack([np.linalg.norm(p[idx] - p[i], axis=-1) for p in parts], axis=-1)
            disjoint = np.any(dist > r[idx] + r[i], axis=-1)
            if not np.all(disjoint):
                continue
        chosen.append(int(i))
        if len(chosen) > max_centers:
            raise BudgetExceeded(f"more than {max_centers} centers")
    idx = np.array(chosen)
    covered = np.zeros(len(pts), dtype=bool)
    for i in idx:
        dist = np.stack([np.linalg.norm(p - p[i], axis=-1) for p in parts], axis=-1)
        covered |= np.all(dist <= 3 * r[i] * (1 + 1e-12), axis=-1)
    return Cover(pts[idx], r[idx], len(pts), int((~covered).sum()), eps)


def cover_overlap(f: TracePolynomial, cover: Cover, psi, dilation: float, probes: int, seed: int) -> int:
    """Max number of dilated polydiscs (dilation * eps) containing a random probe point of supp psi."""
    dec = decompose(f.field)
    rng = np.random.default_rng(seed)
    lo, hi = psi.bounding_box()
    pts = np.empty((0, psi.dim))
    while len(pts) < probes:
        cand = lo + (hi - lo) * rng.random((4 * probes, psi.dim))
        pts = np.vstack([pts, cand[psi.contains(cand)]])
    pts = pts[:probes]
    probe_parts = dec.components(pts)
    center_parts = dec.components(cover.centers)
    scaled = cover.radii_eps * (dilation / cover.eps) if cover.eps > 0 else cover.radii_eps
    counts = np.zeros(len(pts), dtype=int)
    for e in range(len(cover.centers)):
        dist = np.stack([np.linalg.norm(pp - cp[e], axis=-1) for pp, cp in zip(probe_parts, center_parts)], axis=-1)
        counts += np.all(dist <= scaled[e], axis=-1)
    return int(counts.max())


# stability diagnostics

class StabilityReport(NamedTuple):
    j_ratio_max: float
    j_ratio_inverse_max: float
    one_sided_max: float
    gradient_constant: float
    trials: int


def random_polynomial(field: NumberField, n: int, degree: int, rng: np.random.Generator) -> TracePolynomial:
    """Gaussian coefficients on every multi-index of order 1..degree."""
    return TracePolynomial(field, n, {a: rng.standard_normal(field.k) for a in multi_indices(n, degree, 1)})


def stability_trials(field: NumberField, n: int, degree: int, eps: float, trials: int, seed: int,
                     one_sided_scale: float = 1.0) -> StabilityReport:
    """Measure J ratios over eps-polydiscs and the gradient drift constant, with S = all embeddings."""
    rng = np.random.default_rng(seed)
    dec = decompose(field)
    S = tuple(range(field.k))
    ratio, inverse, one_sided, grad_c = 0.0, 0.0, 0.0, 0.0
    for _ in range(trials):
        f = random_polynomial(field, n, degree, rng)
        x = rng.uniform(-1, 1, field.k * n)
        small = polydisc(f, S, x, eps, dec)
        wide = polydisc(f, S, x, one_sided_scale, dec)
        if small.infinite:
            continue
        xp = small.sample(rng, 1)[0]
        xw = wide.sample(rng, 1)[0]
        for s in S:
            j0 = pointwise_J(f, s, x).value
            j1 = pointwise_J(f, s, xp).value
            jw = pointwise_J(f, s, xw).value
            ratio = max(ratio, j1 / j0)
            inverse = max(inverse, j0 / j1)
            one_sided = max(one_sided, jw / j0)
            p = f.embedded[s]
            u = f.embed_points(np.stack([x, xp]))[:, s, :]
            g = p.gradient(u)
            grad_c = max(grad_c, float(np.linalg.norm(g[1] - g[0]) / (eps * j1)))
    return StabilityReport(ratio, inverse, one_sided, grad_c, trials)
