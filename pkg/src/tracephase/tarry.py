"""Moment-curve experiments: coefficient boxes, H-level strata, L^q shell sums and lacunary lower bounds."""
from __future__ import annotations

import itertools
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy.stats import binomtest

from .errors import ConfigInvalid, DimensionTooLarge, EmptyEm
from .functionals import Cutoff, EmbeddingProductCutoff, default_resolution
from .numberfield import NumberField, trace_form_float
from .phases import TracePolynomial, _one_coordinates, univariate
from .quadrature import factorized_integral, loglog_slope

SFRAK_SHARD = 4096


def threshold_exponent(n: int) -> int:
    """q_n = n(n+1)/2 + 1."""
    return n * (n + 1) // 2 + 1


# coefficient boxes for a_1 z + ... + a_n z^n

class BoxMembership(NamedTuple):
    in_cover: bool
    box: tuple[int, ...] | None


@dataclass(frozen=True)
class CoefficientBoxCover:
    """Grid-point cover of the coefficient vectors whose polynomial has H <= Q somewhere on the unit square.

    Grid points are z_b = b / Q with integer b in [-Q, Q] (pairs in complex
    mode).  A vector a belongs to box b when every derivative satisfies
    |P^(l)(z_b)| <= C_l Q^l, where C_l = sum_{l'} (l+l')!/l'! delta^{l'} comes
    from moving the Taylor expansion of P by at most delta/Q.
    """

    mode: str
    n: int
    Q: float

    def __post_init__(self):
        if self.mode not in ("real", "complex"):
            raise ValueError("mode must be 'real' or 'complex'")
        if self.n < 1:
            raise ValueError("n must be positive")
        if not self.Q > 1:
            raise ValueError("Q must exceed 1")

    @property
    def delta(self) -> float:
        return 1.0 if self.mode == "real" else math.sqrt(2.0)

    @property
    def constants(self) -> np.ndarray:
        n, d = self.n, self.delta
        return np.array([sum(math.factorial(l + s) / math.factorial(s) * d**s for s in range(n - l + 1))
                         for l in range(1, n + 1)])

    @property
    def centers(self) -> list[tuple[int, ...]]:
        span = range(-math.ceil(self.Q), math.floor(self.Q) + 1)
        if self.mode == "real":
            return [(b,) for b in span]
        return list(itertools.product(span, span))

    def grid_point(self, b: Sequence[int]) -> complex:
        return b[0] / self.Q if self.mode == "real" else complex(b[0], b[1]) / self.Q

    def _coefficients(self, a) -> np.ndarray:
        a = np.atleast_1d(np.asarray(a, dtype=complex if self.mode == "complex" else float))
        if a.shape != (self.n,):
            raise ValueError(f"need {self.n} coefficients")
        return a

    def derivatives(self, a, z: complex) -> np.ndarray:
        """|P^(l)(z)| for l = 1..n, P(z) = sum_m a_m z^m."""
        a = self._coefficients(a)
        out = np.empty(self.n)
        for l in range(1, self.n + 1):
            out[l - 1] = abs(sum(math.factorial(m) / math.factorial(m - l) * a[m - 1] * z ** (m - l)
                                 for m in range(l, self.n + 1)))
        return out

    def in_box(self, a, b: Sequence[int]) -> bool:
        bound = self.constants * self.Q ** np.arange(1, self.n + 1)
        return bool(np.all(self.derivatives(a, self.grid_point(b)) <= bound))

    def membership(self, a) -> BoxMembership:
        for b in self.centers:
            if self.in_box(a, b):
                return BoxMembership(True, b)
        return BoxMembership(False, None)

    def fiber(self, b: Sequence[int], l: int, upper) -> tuple[complex, float]:
        """Center and radius of the interval/disc J_l holding a_l, given a_{l+1}, ..., a_n."""
        if not 1 <= l <= self.n:
            raise ValueError("l out of range")
        upper = np.atleast_1d(np.asarray(upper, dtype=complex))
        if upper.shape != (self.n - l,):
            raise ValueError(f"need the {self.n - l} coefficients above a_{l}")
        z = self.grid_point(b)
        shift = sum(math.factorial(m) / math.factorial(m - l) * upper[m - l - 1] * z ** (m - l)
                    for m in range(l + 1, self.n + 1))
        center = -shift / math.factorial(l)
        radius = self.constants[l - 1] * self.Q**l / math.factorial(l)
        return complex(center), float(radius)

    def box_measure(self) -> float:
        radii = [self.constants[l - 1] * self.Q**l / math.factorial(l) for l in range(1, self.n + 1)]
        if self.mode == "real":
            return math.prod(2 * r for r in radii)
        return math.prod(math.pi * r * r for r in radii)


def coefficient_box_membership(mode: str, n: int, Q: float, a) -> BoxMembership:
    return CoefficientBoxCover(mode, n, Q).membership(a)


# H-level classification of eta, batched over many eta at once

def default_tarry_cutoff(k: int) -> Cutoff:
    return Cutoff.centered(k, 2.0, 3.0)


def _derivative_levels(c: np.ndarray, z: np.ndarray) -> np.ndarray:
    """max_j |D_j P(z)|^{1/j} for P(z) = sum_l c_l z^l; c has shape (B, n), z shape (B, P)."""
    n = c.shape[1]
    best = np.zeros(z.shape)
    for j in range(1, n + 1):
        acc = np.zeros(z.shape, dtype=complex)
        for l in range(n, j - 1, -1):
            acc = acc * z + math.comb(l, j) * c[:, l - 1, None]
        np.maximum(best, np.abs(acc) ** (1.0 / j), out=best)
    return best


def batched_uniform_H(field: NumberField, n: int, etas: np.ndarray, psi: Cutoff,
                      resolution: int | None = None, passes: int = 3) -> np.ndarray:
    """Uniform H of f_eta = sum_l eta_l x^l per embedding, shape (B, k).

    Uses the same grid-and-refine search as the single-polynomial routine,
    run for a whole batch of coefficient vectors at once.
    """
    k = field.k
    etas = np.atleast_2d(np.asarray(etas, dtype=float))
    if etas.shape[1] != k * n:
        raise ValueError(f"eta must have {k * n} coordinates")
    if psi.dim != k:
        raise ValueError("cutoff must live in R^k")
    resolution = resolution or default_resolution(k)
    B = len(etas)
    blocks = etas.reshape(B, n, k)
    lo, hi = psi.bounding_box()
    axes = [np.linspace(-1.0, 1.0, resolution)] * k
    offsets = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, k)
    out = np.zeros((B, k))
    for cls in field.classes:
        s = cls[0]
        w = field.w[s]
        c = blocks @ w
        center = np.tile(0.5 * (lo + hi), (B, 1))
        half = 0.5 * (hi - lo)
        best_val = np.full(B, np.inf)
        best_pt = np.tile(np.asarray(psi.center, dtype=float), (B, 1))
        for _ in range(passes + 1):
            pts = center[:, None, :] + half * offsets[None, :, :]
            inside = psi.contains(pts)
            vals = np.where(inside, _derivative_levels(c, pts @ w), np.inf)
            i = np.argmin(vals, axis=1)
            v = vals[np.arange(B), i]
            better = v < best_val
            best_val = np.where(better, v, best_val)
            best_pt = np.where(better[:, None], pts[np.arange(B), i], best_pt)
            center, half = best_pt, half / 8
        for j in cls:
            out[:, j] = best_val
    return out


@dataclass(frozen=True)
class EtaClass:
    S: tuple[int, ...]
    alpha: dict[int, int]
    H: tuple[float, ...]

    @property
    def outside(self) -> bool:
        """True when no embedding reaches H >= 1, i.e. eta lies in no stratum with nonempty S."""
        return not self.S


def _classes_from_H(H: np.ndarray) -> list[EtaClass]:
    out = []
    for row in H:
        S = tuple(int(j) for j in np.flatnonzero(row >= 1))
        alpha = {j: int(math.floor(math.log2(row[j]))) for j in S}
        out.append(EtaClass(S, alpha, tuple(float(v) for v in row)))
    return out


def classify_eta(field: NumberField, n: int, eta, psi: Cutoff | None = None,
                 resolution: int | None = None) -> EtaClass:
    """Embedding set S = {H >= 1} and dyadic levels alpha = floor(log2 H) of f_eta."""
    psi = psi or default_tarry_cutoff(field.k)
    return _classes_from_H(batched_uniform_H(field, n, np.asarray(eta, float)[None, :], psi, resolution))[0]


class SfrakEstimate(NamedTuple):
    estimate: float
    ci_low: float
    ci_high: float
    hits: int
    samples: int
    bound: float
    ratio: float
    box: float


def sfrak_bound(n: int, alpha: Mapping[int, int]) -> float:
    return math.prod(2.0 ** (threshold_exponent(n) * a) for a in alpha.values())


def _sfrak_shard(field, n, S, alpha, box, psi, resolution, seed, shard, size) -> int:
    rng = np.random.default_rng(np.random.SeedSequence([seed, shard]))
    etas = rng.uniform(-box, box, (size, field.k * n))
    H = batched_uniform_H(field, n, etas, psi, resolution)
    hits = 0
    for cls in _classes_from_H(H):
        if cls.S == S and all(cls.alpha[j] == alpha[j] for j in S):
            hits += 1
    return hits


def sfrak_measure(field: NumberField, n: int, S: Sequence[int], alpha, samples: int = 20_000,
                  seed: int = 42, box: float | None = None, psi: Cutoff | None = None,
                  resolution: int | None = None, threads: int = 1) -> SfrakEstimate:
    """Monte Carlo measure of the stratum with embedding set S and levels alpha, against its volume bound.

    ``alpha`` is a mapping from embedding index to level, or a sequence aligned
    with sorted S.  The sample box defaults to [-2^(max alpha + 2), 2^(max alpha + 2)]^{kn}.
    With S empty the stratum is the set where every H is below 1.
    """
    S = tuple(sorted(int(s) for s in S))
    for s in S:
        field.check_index(s)
        if field.conjugate(s) not in S:
            raise ValueError("S must be closed under conjugation")
    if not isinstance(alpha, Mapping):
        alpha = dict(zip(S, (int(a) for a in alpha)))
    alpha = {int(j): int(a) for j, a in alpha.items()}
    if set(alpha) != set(S):
        raise ValueError("alpha must give one level per embedding in S")
    for s in S:
        if alpha[s] != alpha[field.conjugate(s)]:
            raise ValueError("conjugate embeddings share one level")
    if box is None:
        box = 2.0 ** (max(alpha.values(), default=0) + 2)
    psi = psi or default_tarry_cutoff(field.k)
    sizes = [SFRAK_SHARD] * (samples // SFRAK_SHARD) + ([samples % SFRAK_SHARD] if samples % SFRAK_SHARD else [])
    jobs = [(field, n, S, alpha, box, psi, resolution, seed, i, s) for i, s in enumerate(sizes)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            hits = sum(pool.map(lambda a: _sfrak_shard(*a), jobs))
    else:
        hits = sum(_sfrak_shard(*a) for a in jobs)
    volume = (2 * box) ** (field.k * n)
    ci = binomtest(hits, samples).proportion_ci(0.95, method="exact")
    estimate = volume * hits / samples
    bound = sfrak_bound(n, alpha)
    return SfrakEstimate(estimate, volume * float(ci.low), volume * float(ci.high), hits, samples, bound,
                         estimate / bound, float(box))


# L^q integrability of the extension operator, shell by shell

def extension_magnitude(field: NumberField, n: int, xi: np.ndarray, psi: EmbeddingProductCutoff,
                        tol: float = 1e-9) -> float:
    """|E 1(xi)| through the trace reduction eta = T^{-1} xi and the factorized quadrature."""
    T = trace_form_float(field)
    eta = np.linalg.solve(T, np.asarray(xi, float).reshape(n, field.k).T).T
    f = univariate(field, {l + 1: eta[l] for l in range(n)})
    return abs(factorized_integral(f, psi, tol).value)


def ball_volume(dim: int, r: float) -> float:
    return math.pi ** (dim / 2) / math.gamma(dim / 2 + 1) * r**dim


def _unit_with_large_embeddings(field: NumberField, rng: np.random.Generator, floor: float) -> np.ndarray:
    for _ in range(10_000):
        v = rng.standard_normal(field.k)
        v /= np.linalg.norm(v)
        if np.min(np.abs(field.w @ v)) >= floor:
            return v
    raise EmptyEm("no direction with all embeddings above the floor")


def recentered_coefficients(field: NumberField, theta: np.ndarray, shift: np.ndarray) -> np.ndarray:
    """eta with sum_l eta_l z^l = sum_l theta_l (z - shift)^l + const, products taken in the algebra.

    ``theta`` has shape (n, k) holding theta_1..theta_n; the result has the same shape.
    """
    theta = np.asarray(theta, dtype=float)
    n, k = theta.shape
    powers = [np.asarray(_one_coordinates(field))]
    neg = -np.asarray(shift, dtype=float)
    for _ in range(n):
        powers.append(field.mul_float(powers[-1], neg))
    eta = np.zeros((n, k))
    for j in range(1, n + 1):
        for l in range(j, n + 1):
            eta[j - 1] += math.comb(l, j) * field.mul_float(theta[l - 1], powers[l - j])
    return eta


def aligned_directions(field: NumberField, n: int, count: int, rng: np.random.Generator,
                       floor_fraction: float = 0.1) -> np.ndarray:
    """Unit xi-directions through the lacunary strata: eta = recentering of theta_n (z - x_r)^n, xi = T eta."""
    T = trace_form_float(field)
    floor = floor_fraction * float(np.max(np.linalg.norm(field.w, axis=1)))
    out = np.empty((count, n * field.k))
    for i in range(count):
        theta = np.zeros((n, field.k))
        theta[n - 1] = _unit_with_large_embeddings(field, rng, floor)
        shift = rng.uniform(0.0, 0.1, field.k)
        eta = recentered_coefficients(field, theta, shift)
        xi = (eta @ T.T).reshape(-1)
        out[i] = xi / np.linalg.norm(xi)
    return out


@dataclass(frozen=True)
class LqTailReport:
    n: int
    q_list: tuple[float, ...]
    shells: tuple[tuple[float, float], ...]
    shell_integrals: dict[float, tuple[float, ...]]
    cumulative: dict[float, tuple[float, ...]]
    ratios: dict[float, tuple[float, ...]]
    trends: dict[float, str]

    def csv_rows(self) -> list[dict]:
        rows = []
        for q in self.q_list:
            for s, (lo, hi) in enumerate(self.shells):
                rows.append({
                    "q": q, "shell": s, "r_lo": lo, "r_hi": hi,
                    "shell_integral": self.shell_integrals[q][s],
                    "cumulative": self.cumulative[q][s],
                    "ratio": self.ratios[q][s - 1] if s else "",
                    "trend": self.trends[q],
                })
        return rows


def shell_trend(ratios: Sequence[float], window: int = 3) -> str:
    """'convergent' if the last ``window`` ratios are below 0.9, 'non-convergent' if all are at least 1."""
    tail = list(ratios)[-window:]
    if len(tail) < window:
        return "inconclusive"
    if all(r < 0.9 for r in tail):
        return "convergent"
    if all(r >= 1 for r in tail):
        return "non-convergent"
    return "inconclusive"


def lq_tail_experiment(field: NumberField, n: int, q_list: Sequence[float],
                       shell_radii: Sequence[float] | None = None, seed: int = 42,
                       directions: int = 64, radii: int = 16, aligned: int = 16,
                       tol: float = 1e-9, threads: int = 1) -> LqTailReport:
    """Shell-by-shell integrals of |E 1(xi)|^q over dyadic annuli in xi.

    Each shell integral is the shell volume times the mean of |E 1|^q over a
    sample of ``directions`` unit vectors (``aligned`` of them pass through the
    lacunary strata, the rest are uniform) at ``radii`` stratified radii.
    The same directions are reused in every shell.
    """
    if field.k > 2 or n > 3:
        raise DimensionTooLarge("the shell experiment supports k <= 2 and n <= 3")
    if shell_radii is None:
        shell_radii = [2.0**j for j in range(1, 9)]
    edges = [float(r) for r in shell_radii]
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])) or edges[0] < 0:
        raise ValueError("shell radii must be increasing and nonnegative")
    if not 0 <= aligned <= directions:
        raise ValueError("aligned directions must not exceed the direction count")
    dim = field.k * n
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    uniform = rng.standard_normal((directions - aligned, dim))
    uniform /= np.linalg.norm(uniform, axis=1, keepdims=True)
    dirs = np.vstack([uniform, aligned_directions(field, n, aligned, rng)]) if aligned else uniform
    psi = EmbeddingProductCutoff(field, 1, 2.0, 3.0)

    shells = list(zip(edges, edges[1:]))
    samples = []
    for s, (lo, hi) in enumerate(shells):
        srng = np.random.default_rng(np.random.SeedSequence([seed, 1 + s]))
        u = (np.arange(radii)[None, :] + srng.random((len(dirs), radii))) / radii
        r = (lo**dim + u * (hi**dim - lo**dim)) ** (1.0 / dim)
        samples.append((dirs[:, None, :] * r[..., None]).reshape(-1, dim))
    points = np.vstack(samples)
    job = lambda xi: extension_magnitude(field, n, xi, psi, tol)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            mags = np.array(list(pool.map(job, points)))
    else:
        mags = np.array([job(xi) for xi in points])
    mags = mags.reshape(len(shells), -1)

    qs = tuple(float(q) for q in q_list)
    integrals, cumulative, ratios, trends = {}, {}, {}, {}
    for q in qs:
        vals = tuple(float((ball_volume(dim, hi) - ball_volume(dim, lo)) * np.mean(mags[s] ** q))
                     for s, (lo, hi) in enumerate(shells))
        integrals[q] = vals
        cumulative[q] = tuple(float(v) for v in np.cumsum(vals))
        ratios[q] = tuple(b / a if a > 0 else math.inf for a, b in zip(vals, vals[1:]))
        trends[q] = shell_trend(ratios[q])
    return LqTailReport(n, qs, tuple(shells), integrals, cumulative, ratios, trends)


# lacunary lower-bound construction

@dataclass(frozen=True)
class SharpnessConfig:
    """Parameters of the lacunary family Q_m = A^m; ``k`` is the field degree the constants are checked for."""

    A: float = 2.0
    m_min: int = 2
    m_max: int = 4
    a: float = 4.0
    c1: float = 1e-4
    seed: int = 42
    k: int = 2

    def __post_init__(self):
        if not self.A >= 2:
            raise ConfigInvalid("lacunary base A must be at least 2")
        if not 1 <= self.m_min <= self.m_max:
            raise ConfigInvalid("need 1 <= m_min <= m_max")
        if not (self.a > 1 and self.c1 > 0):
            raise ConfigInvalid("need a > 1 and c1 > 0")
        self.check_constants(self.k)

    def check_constants(self, k: int) -> None:
        if self.c1 * self.a ** (k + 1) > 0.01:
            raise ConfigInvalid(f"c1 * a^(k+1) = {self.c1 * self.a ** (k + 1):.3g} exceeds 0.01")

    def Q(self, m: int) -> float:
        return float(self.A) ** m

    @property
    def levels(self) -> range:
        return range(self.m_min, self.m_max + 1)


def sample_Em(field: NumberField, n: int, Q: float, C: float, rng: np.random.Generator,
              attempts: int = 2000) -> np.ndarray | None:
    """A point with Q^n <= |x| <= (2Q)^n and |sigma(x)| >= C Q^n for every embedding, or None."""
    k = field.k
    for _ in range(attempts):
        v = rng.standard_normal(k)
        v /= np.linalg.norm(v)
        lo, hi = Q**n, (2 * Q) ** n
        r = (lo**k + rng.random() * (hi**k - lo**k)) ** (1.0 / k)
        x = r * v
        if np.min(np.abs(field.w @ x)) >= C * Q**n:
            return x
    return None


def sample_ball(rng: np.random.Generator, k: int, radius: float) -> np.ndarray:
    v = rng.standard_normal(k)
    v /= np.linalg.norm(v)
    return v * radius * rng.random() ** (1.0 / k)


@dataclass(frozen=True)
class SharpnessRow:
    m: int
    Q: float
    trial: int
    r: tuple[int, ...]
    abs_II: float
    product: float
    abs_I_recentered: float
    main_term: float


@dataclass(frozen=True)
class SharpnessReport:
    rows: tuple[SharpnessRow, ...]
    c_kb: float
    min_product: float
    spread: float
    slope: float
    k: int
    recentering_gap: float
    recentering_det: float

    @property
    def spread_ok(self) -> bool:
        return self.spread <= 20

    @property
    def slope_ok(self) -> bool:
        return abs(self.slope + self.k) <= 0.2

    def csv_rows(self) -> list[dict]:
        return [{"m": r.m, "Q": r.Q, "trial": r.trial, "r": " ".join(map(str, r.r)), "abs_II": r.abs_II,
                 "product": r.product, "abs_I_recentered": r.abs_I_recentered, "main_term": r.main_term}
                for r in self.rows]


def recentering_matrix(field: NumberField, n: int, theta_n: np.ndarray, shift: np.ndarray) -> np.ndarray:
    """Linear part of theta' -> eta' for fixed theta_n and shift, as a (n-1)k square matrix."""
    k = field.k
    dim = (n - 1) * k
    base = np.zeros((n, k))
    base[n - 1] = theta_n
    offset = recentered_coefficients(field, base, shift)[: n - 1].reshape(-1)
    cols = []
    for i in range(dim):
        theta = base.copy()
        theta[: n - 1] = np.eye(dim)[i].reshape(n - 1, k)
        cols.append(recentered_coefficients(field, theta, shift)[: n - 1].reshape(-1) - offset)
    return np.array(cols).T


def sharpness_experiment(config: SharpnessConfig, field: NumberField, n: int, trials: int = 8,
                         tol: float = 1e-9, c_kb: float | None = None) -> SharpnessReport:
    """|II_r| Q_m^k over random theta_n in E_m, theta' in the small box and r in the lattice.

    II_r is computed with a cutoff that is a product over embedding classes
    (plateau radius 2, support radius 3) centered at -x_r, so the integral
    factors.  Each value is cross-checked against I(eta) for the recentered
    coefficients eta = T_{r, theta_n} theta' with the cutoff at the origin.
    """
    if n < 2:
        raise ValueError("the lacunary construction needs n >= 2")
    k = field.k
    config.check_constants(k)
    if c_kb is None:
        c_kb = 0.1 * float(np.max(np.linalg.norm(field.w, axis=1)))
    rng = np.random.default_rng(config.seed)
    rows = []
    gap, det_err = 0.0, 0.0
    for m in config.levels:
        Q = config.Q(m)
        for t in range(trials):
            theta_n = sample_Em(field, n, Q, c_kb, rng)
            while theta_n is None:
                c_kb /= 2
                warnings.warn(f"E_m empty at Q={Q}; lowering the embedding floor to {c_kb:.3g}")
                if c_kb < 1e-6:
                    raise EmptyEm(f"no point of E_m found at Q={Q}")
                theta_n = sample_Em(field, n, Q, c_kb, rng)
            theta = np.zeros((n, k))
            theta[n - 1] = theta_n
            for l in range(1, n):
                theta[l - 1] = sample_ball(rng, k, (config.c1 * Q) ** l)
            top = max(1, math.floor(Q / 10))
            r = tuple(int(v) for v in rng.integers(1, top + 1, k))
            x_r = np.array(r, dtype=float) / Q

            shifted = EmbeddingProductCutoff(field, 1, 2.0, 3.0, center=-x_r)
            f_theta = univariate(field, {l + 1: theta[l] for l in range(n)})
            II = factorized_integral(f_theta, shifted, tol).value
            eta = recentered_coefficients(field, theta, x_r)
            f_eta = univariate(field, {l + 1: eta[l] for l in range(n)})
            I_eta = factorized_integral(f_eta, EmbeddingProductCutoff(field, 1, 2.0, 3.0), tol).value
            g = univariate(field, {n: theta_n})
            main = factorized_integral(g, EmbeddingProductCutoff(field, 1, 2.0, 3.0), tol).value
            gap = max(gap, abs(abs(II) - abs(I_eta)) / abs(II))
            det_err = max(det_err, abs(np.linalg.det(recentering_matrix(field, n, theta_n, x_r)) - 1))
            rows.append(SharpnessRow(m, Q, t, r, abs(II), abs(II) * Q**k, abs(I_eta), abs(main)))
    products = [row.product for row in rows]
    levels = list(config.levels)
    medians = [float(np.median([row.abs_II for row in rows if row.m == m])) for m in levels]
    slope = loglog_slope([config.Q(m) for m in levels], medians) if len(levels) > 1 else math.nan
    return SharpnessReport(tuple(rows), c_kb, min(products), max(products) / min(products), slope, k, gap, det_err)


def cos_power_integral(n: int) -> float:
    """Closed form of the improper integral of cos(s^n) over s > 0, n >= 2."""
    if n < 2:
        raise ValueError("n must be at least 2")
    return math.gamma(1 + 1 / n) * math.cos(math.pi / (2 * n))
