"""Directional derivative bases, nearest-derivative-zero checks and sublevel set measures."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.stats import binomtest

from .errors import DegenerateQ, RankDeficient
from .functionals import check_embedding_set
from .phases import MultiIndex, TracePolynomial, multi_indices

COND_LIMIT = 1e6
SHARD_SIZE = 1 << 16


@dataclass(frozen=True)
class DirectionalBasis:
    n: int
    r: int
    vectors: np.ndarray
    matrix: np.ndarray
    condition: float

    @property
    def size(self) -> int:
        return len(self.vectors)


def expansion_row(u: np.ndarray, r: int) -> np.ndarray:
    """Coefficients of (u . grad)^r in the basis d^beta, |beta| = r (graded order)."""
    betas = multi_indices(len(u), r, r)
    return np.array([math.factorial(r) / math.prod(math.factorial(b) for b in beta) * np.prod(u ** np.array(beta))
                     for beta in betas])


def directional_basis(n: int, r: int, seed: int = 0) -> DirectionalBasis:
    """Unit vectors u whose operators (u . grad)^r span all order-r derivatives.

    Coordinate vectors are tried first, then seeded Gaussian directions; a
    candidate is kept when it raises the rank without pushing the condition
    number of the partial expansion matrix above 1e6.
    """
    if n < 1 or not 1 <= r <= 8:
        raise ValueError("need n >= 1 and 1 <= r <= 8")
    dim = math.comb(n + r - 1, r)
    rng = np.random.default_rng(seed)
    chosen: list[np.ndarray] = []
    rows: list[np.ndarray] = []
    candidates = [np.eye(n)[i] for i in range(n)]
    attempts = 0
    while len(chosen) < dim:
        if attempts >= 100 * dim:
            raise RankDeficient(f"no well-conditioned basis found for n={n}, r={r}")
        attempts += 1
        if candidates:
            u = candidates.pop(0)
        else:
            u = rng.standard_normal(n)
            u /= np.linalg.norm(u)
            lead = np.flatnonzero(np.abs(u) > 0)[0]
            u = u if u[lead] > 0 else -u
        row = expansion_row(u, r)
        trial = np.array(rows + [row])
        sv = np.linalg.svd(trial, compute_uv=False)
        if sv[-1] > 0 and sv[0] / sv[-1] <= COND_LIMIT and np.linalg.matrix_rank(trial) == len(trial):
            chosen.append(u)
            rows.append(row)
    mat = np.array(rows)
    return DirectionalBasis(n, r, np.array(chosen), mat, float(np.linalg.cond(mat)))


# nearest zero of a derivative

class NearestZero(NamedTuple):
    distance: float
    order: int
    bound: float
    ratio: float
    holds: bool | None
    distances_by_order: tuple[float, ...]


def _trim_poly(coeffs) -> np.ndarray:
    c = np.asarray(coeffs, dtype=complex)
    nz = np.flatnonzero(c != 0)
    if not nz.size:
        raise DegenerateQ("the polynomial is identically zero")
    return c[: nz[-1] + 1]


def _polish(c: np.ndarray, roots: np.ndarray, steps: int = 3) -> np.ndarray:
    dc = np.polynomial.polynomial.polyder(c)
    out = roots.copy()
    for _ in range(steps):
        val = np.polynomial.polynomial.polyval(out, c)
        der = np.polynomial.polynomial.polyval(out, dc)
        ok = np.abs(der) > 1e-300
        out = np.where(ok, out - val / np.where(ok, der, 1), out)
    return out


def derivative_roots(coeffs) -> list[np.ndarray]:
    """Roots of Q, Q', ..., Q^(d-1) (companion eigenvalues, Newton-polished); constant term first."""
    c = _trim_poly(coeffs)
    out = []
    for _ in range(len(c) - 1):
        roots = np.polynomial.polynomial.polyroots(c) if len(c) > 1 else np.array([])
        out.append(_polish(c, roots.astype(complex)))
        c = np.polynomial.polynomial.polyder(c)
    return out


def nearest_derivative_zero(coeffs, z0: complex, k: int, mu: float, eps: float,
                            C: float | None = None, eps_max: float = 0.01) -> NearestZero:
    """Distance from z0 to the nearest zero of any Q^(j), j < deg Q, compared with (eps/mu)^{1/k}.

    ``holds`` is None when no constant C is supplied.
    """
    c = _trim_poly(coeffs)
    if k < 1:
        raise ValueError("derivative order k must be at least 1")
    if abs(z0) > 1 + 1e-12:
        raise ValueError("z0 must lie in the closed unit disc")
    if not 0 < eps <= eps_max:
        raise ValueError(f"eps must lie in (0, {eps_max}]")
    qk = np.polynomial.polynomial.polyval(z0, np.polynomial.polynomial.polyder(c, k)) if k < len(c) else 0
    if abs(qk) < mu * (1 - 1e-9):
        raise ValueError("|Q^(k)(z0)| is below mu")
    if abs(np.polynomial.polynomial.polyval(z0, c)) > eps * (1 + 1e-9):
        raise ValueError("|Q(z0)| exceeds eps")
    per_order = tuple(float(np.min(np.abs(r - z0))) if len(r) else math.inf for r in derivative_roots(c))
    order = int(np.argmin(per_order))
    distance = per_order[order]
    bound = (eps / mu) ** (1.0 / k)
    ratio = distance / bound
    return NearestZero(distance, order, bound, ratio, None if C is None else bool(ratio <= C), per_order)


def random_sublevel_case(rng: np.random.Generator, max_degree: int = 6, eps_max: float = 0.01):
    """A random (Q, z0, eps) with z0 near a root of Q and |Q(z0)| = eps <= eps_max."""
    d = int(rng.integers(2, max_degree + 1))
    roots = 1.5 * np.sqrt(rng.random(d)) * np.exp(2j * math.pi * rng.random(d))
    z0 = roots[0] + 0.2 * rng.random() * np.exp(2j * math.pi * rng.random())
    if abs(z0) > 1:
        z0 = z0 / abs(z0)
    c = np.polynomial.polynomial.polyfromroots(roots)
    eps = float(10 ** rng.uniform(-6, math.log10(eps_max)))
    val = abs(np.polynomial.polynomial.polyval(z0, c))
    if val == 0:
        return c, z0, eps
    return c * (eps / val), z0, eps


def calibration_ratios(count: int, seed: int, max_degree: int = 6) -> np.ndarray:
    """Worst ratio over derivative orders k for each of ``count`` random cases."""
    rng = np.random.default_rng(seed)
    out = np.empty(count)
    for i in range(count):
        c, z0, eps = random_sublevel_case(rng, max_degree)
        worst = 0.0
        for k in range(1, len(c)):
            mu = abs(np.polynomial.polynomial.polyval(z0, np.polynomial.polynomial.polyder(c, k)))
            if mu == 0:
                continue
            worst = max(worst, nearest_derivative_zero(c, z0, k, mu, eps).ratio)
        out[i] = worst
    return out


# Monte Carlo sublevel measure

@dataclass(frozen=True)
class SublevelInstance:
    f: TracePolynomial
    S: tuple[int, ...]
    alpha: dict[int, MultiIndex]
    eps: dict[int, float]
    mu: dict[int, float]

    def __post_init__(self):
        S = check_embedding_set(self.f.field, self.S)
        object.__setattr__(self, "S", S)
        for s in S:
            if sum(self.alpha[s]) < 2:
                raise ValueError("each alpha must have order at least 2")
            if not 0 < self.eps[s] < self.mu[s]:
                raise ValueError("need 0 < eps < mu for each embedding")

    @classmethod
    def uniform(cls, f, S, alpha: MultiIndex, eps: float, mu: float) -> "SublevelInstance":
        return cls(f, tuple(S), {s: tuple(alpha) for s in S}, {s: eps for s in S}, {s: mu for s in S})

    def bound(self) -> float:
        return math.prod((self.eps[s] / self.mu[s]) ** (1.0 / (sum(self.alpha[s]) - 1)) for s in self.S)

    def indicator(self, x: np.ndarray) -> np.ndarray:
        f = self.f
        u = f.embed_points(x)
        inside = np.ones(len(x), dtype=bool)
        for s in self.S:
            p = f.embedded[s]
            z = u[:, s, :]
            grad = np.linalg.norm(p.gradient(z), axis=-1)
            betas, taylor = p.taylor_coefficients(z)
            a = self.alpha[s]
            if a in betas:
                deriv = np.abs(taylor[:, betas.index(a)]) * math.prod(math.factorial(v) for v in a)
            else:
                deriv = np.zeros(len(x))
            inside &= (grad <= self.eps[s]) & (deriv >= self.mu[s])
        return inside


class MeasureEstimate(NamedTuple):
    estimate: float
    ci_low: float
    ci_high: float
    hits: int
    samples: int
    bound: float
    ratio: float


def _shard_hits(instance: SublevelInstance, seed: int, shard: int, size: int) -> int:
    rng = np.random.default_rng(np.random.SeedSequence([seed, shard]))
    x = rng.random((size, instance.f.dim))
    return int(instance.indicator(x).sum())


def sublevel_measure(instance: SublevelInstance, samples: int = 1_000_000, seed: int = 42,
                     threads: int = 1) -> MeasureEstimate:
    """Monte Carlo measure of the sublevel set inside the unit cube, with a Clopper-Pearson 95% interval."""
    if samples < 10_000:
        raise ValueError("at least 10^4 samples are required")
    sizes = [SHARD_SIZE] * (samples // SHARD_SIZE)
    if samples % SHARD_SIZE:
        sizes.append(samples % SHARD_SIZE)
    jobs = [(instance, seed, i, s) for i, s in enumerate(sizes)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            hits = sum(pool.map(lambda a: _shard_hits(*a), jobs))
    else:
        hits = sum(_shard_hits(*a) for a in jobs)
    ci = binomtest(hits, samples).proportion_ci(0.95, method="exact")
    bound = instance.bound()
    return MeasureEstimate(hits / samples, float(ci.low), float(ci.high), hits, samples, bound, float(ci.high) / bound)
