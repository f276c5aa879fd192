"""Adaptive tensor Gauss-Kronrod quadrature for oscillatory integrals.

Panels are refined level by level.  Every live panel is integrated with the
15-point Kronrod rule per axis and its embedded 7-point Gauss rule; a panel
is accepted when the two agree and the phase turns by a bounded amount across
it, otherwise it is split along every axis.  Accepted contributions are summed
with ``math.fsum`` so the result does not depend on evaluation order.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np
import scipy.integrate
import scipy.special

from .errors import DimensionMismatch, DimensionTooLarge
from .functionals import Cutoff, EmbeddingProductCutoff, check_embedding_set, combined_H
from .numberfield import NumberField, trace_form_float
from .phases import (
    EmbeddedPolynomial,
    TracePolynomial,
    eval_rational_poly,
    grad_phase,
    moment_curve_polynomials,
    univariate,
)

# QUADPACK qk15 abscissae (descending, last is 0) and weights
_XGK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.0,
])
_WGK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
])

NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
KRONROD_WEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
GAUSS_WEIGHTS = np.zeros(15)
GAUSS_WEIGHTS[1::2] = np.concatenate([_WG[:-1], _WG[::-1]])

DEPTH_CAP = 14
PANEL_BUDGET = 2_000_000
PHASE_TURN_LIMIT = 8 * math.pi
EVAL_CHUNK = 2_000_000
MIN_FAMILY_SPAN = 64


class QuadratureResult(NamedTuple):
    value: complex
    error_estimate: float
    panels_used: int
    converged: bool


def _tensor_weights(dim: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    grids = np.stack(np.meshgrid(*([NODES] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    wk = np.ones(len(grids))
    wg = np.ones(len(grids))
    idx = np.stack(np.meshgrid(*([np.arange(15)] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    for axis in range(dim):
        wk = wk * KRONROD_WEIGHTS[idx[:, axis]]
        wg = wg * GAUSS_WEIGHTS[idx[:, axis]]
    return grids, wk, wg


def adaptive_integrate(
    integrand: Callable[[np.ndarray], np.ndarray],
    lo: Sequence[float],
    hi: Sequence[float],
    tol: float = 1e-6,
    phase_gradient: Callable[[np.ndarray], np.ndarray] | None = None,
    support_test: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
    depth_cap: int = DEPTH_CAP,
    budget: int = PANEL_BUDGET,
    turn_limit: float = PHASE_TURN_LIMIT,
    threads: int = 1,
) -> QuadratureResult:
    """Integrate a complex integrand over the box [lo, hi].

    ``phase_gradient`` returns the gradient of the phase (in cycles) at panel
    centers; ``support_test(lo, hi)`` drops panels that miss the support.
    A panel is accepted once |K - G| <= tol * vol / root_vol and the phase
    turns by at most ``turn_limit`` radians across it.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    dim = lo.size
    if dim > 4:
        raise DimensionTooLarge(f"adaptive quadrature supports at most 4 dimensions, got {dim}")
    nodes, wk, wg = _tensor_weights(dim)
    root_vol = float(np.prod(hi - lo))
    per_panel = len(nodes)
    chunk = max(1, EVAL_CHUNK // per_panel)

    live_lo, live_hi = lo[None, :], hi[None, :]
    re_parts: list[float] = []
    im_parts: list[float] = []
    errors: list[float] = []
    panels = 0
    converged = True
    pool = ThreadPoolExecutor(threads) if threads > 1 else None

    def integrate_chunk(bounds):
        blo, bhi = bounds
        half = 0.5 * (bhi - blo)
        mid = 0.5 * (bhi + blo)
        pts = mid[:, None, :] + half[:, None, :] * nodes[None, :, :]
        vals = integrand(pts.reshape(-1, dim)).reshape(len(blo), per_panel)
        jac = np.prod(half, axis=1)
        kron = vals @ wk
        return kron * jac, np.abs(kron - vals @ wg) * jac

    try:
        for depth in range(depth_cap + 1):
            if support_test is not None and len(live_lo):
                keep = support_test(live_lo, live_hi)
                live_lo, live_hi = live_lo[keep], live_hi[keep]
            if not len(live_lo):
                break
            panels += len(live_lo)
            if panels > budget:
                converged = False
                break
            pieces = [(live_lo[i : i + chunk], live_hi[i : i + chunk]) for i in range(0, len(live_lo), chunk)]
            results = list(pool.map(integrate_chunk, pieces)) if pool else [integrate_chunk(p) for p in pieces]
            kron = np.concatenate([r[0] for r in results])
            err = np.concatenate([r[1] for r in results])
            vol = np.prod(live_hi - live_lo, axis=1)
            ok = err <= tol * vol / root_vol
            widths = live_hi - live_lo
            if phase_gradient is not None:
                turns = 2 * math.pi * np.abs(phase_gradient(0.5 * (live_lo + live_hi))) * widths
                ok &= np.linalg.norm(turns, axis=1) <= turn_limit
            else:
                turns = np.zeros_like(widths)
            if depth == depth_cap:
                ok[:] = True
                converged = converged and bool(np.all(err <= tol * vol / root_vol))
            re_parts.extend(kron[ok].real.tolist())
            im_parts.extend(kron[ok].imag.tolist())
            errors.extend(err[ok].tolist())
            live_lo, live_hi = _split(live_lo[~ok], live_hi[~ok], _split_axes(turns[~ok], turn_limit))
    finally:
        if pool:
            pool.shutdown()
    if len(live_lo) and panels > budget:
        converged = False
    value = complex(math.fsum(re_parts), math.fsum(im_parts))
    return QuadratureResult(value, math.fsum(errors), panels, converged)


def _split_axes(turns: np.ndarray, turn_limit: float) -> np.ndarray:
    """Axes to halve: those carrying at least half the largest phase turn.

    Panels whose phase is already resolved failed the Gauss-Kronrod test for
    another reason (e.g. the cutoff's transition layer), so every axis is split.
    """
    top = turns.max(axis=1, keepdims=True) if turns.size else turns
    resolved = np.linalg.norm(turns, axis=1, keepdims=True) <= turn_limit
    return resolved | (turns >= 0.5 * top)


def _split(lo: np.ndarray, hi: np.ndarray, axes: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Halve each panel along the flagged axes (all axes by default); children stay in parent order."""
    if not len(lo):
        return lo, hi
    dim = lo.shape[1]
    if axes is None:
        axes = np.ones_like(lo, dtype=bool)
    mid = 0.5 * (lo + hi)
    corners = np.array(np.meshgrid(*([[0, 1]] * dim), indexing="ij")).reshape(dim, -1).T
    parents, lows, highs = [], [], []
    patterns, inverse = np.unique(axes, axis=0, return_inverse=True)
    for p, pattern in enumerate(patterns):
        sel = np.flatnonzero(inverse.reshape(-1) == p)
        kids = np.unique(corners * pattern, axis=0)
        upper = kids[None] == 1
        low = np.where(upper, mid[sel, None, :], lo[sel, None, :])
        high = np.where(upper | ~pattern[None, None, :], hi[sel, None, :], mid[sel, None, :])
        parents.append(np.repeat(sel, len(kids)))
        lows.append(low.reshape(-1, dim))
        highs.append(high.reshape(-1, dim))
    order = np.argsort(np.concatenate(parents), kind="stable")
    return np.vstack(lows)[order], np.vstack(highs)[order]


def oscillatory_integral_general(
    phase: Callable[[np.ndarray], np.ndarray],
    phase_gradient: Callable[[np.ndarray], np.ndarray] | None,
    psi,
    tol: float = 1e-6,
    **kwargs,
) -> QuadratureResult:
    """Integral of exp(2 pi i phase(x)) psi(x) over the support of psi."""
    if not 1e-12 <= tol <= 1e-3:
        raise ValueError("tol must lie in [1e-12, 1e-3]")

    def integrand(pts):
        weight = psi(pts)
        out = np.zeros(len(pts), dtype=complex)
        live = weight > 0
        if np.any(live):
            out[live] = weight[live] * np.exp(2j * math.pi * phase(pts[live]))
        return out

    lo, hi = psi.bounding_box()
    return adaptive_integrate(integrand, lo, hi, tol, phase_gradient, psi.intersects_box, **kwargs)


class MappedCutoff:
    """psi(L y) viewed as a function of y, for a linear change of variables x = L y."""

    def __init__(self, psi, L: np.ndarray):
        self.psi = psi
        self.L = np.asarray(L, dtype=float)
        self.Linv = np.linalg.inv(self.L)
        self.dim = psi.dim
        self.center = self.Linv @ np.asarray(psi.center, dtype=float)
        self._norm = float(np.linalg.norm(self.L, 2))

    def __call__(self, y):
        return self.psi(np.asarray(y) @ self.L.T)

    def contains(self, y):
        return self.psi.contains(np.asarray(y) @ self.L.T)

    def bounding_box(self):
        # the image of the box [lo, hi] under L^{-1}, via its vertices
        lo, hi = self.psi.bounding_box()
        corners = np.array(np.meshgrid(*zip(lo, hi), indexing="ij")).reshape(self.dim, -1).T
        images = corners @ self.Linv.T
        return images.min(axis=0), images.max(axis=0)

    def intersects_box(self, lo, hi):
        # conservative: bounding ball of the image of each box against the original test
        mid = 0.5 * (lo + hi)
        reach = 0.5 * self._norm * np.linalg.norm(hi - lo, axis=-1)
        center = mid @ self.L.T
        return self.psi.intersects_box(center - reach[:, None], center + reach[:, None])


def embedding_coordinates(field: NumberField, n: int) -> np.ndarray:
    """L with x = L y, where y lists the class coordinates (real parts, imaginary parts) per block."""
    return np.kron(np.eye(n), np.linalg.inv(field.minkowski_matrix()))


def oscillatory_integral(f: TracePolynomial, psi, tol: float = 1e-6, coordinates: str = "embedding",
                         **kwargs) -> QuadratureResult:
    """I(f) = integral over R^{kn} of exp(2 pi i phi_f(x)) psi(x) dx.

    With ``coordinates="embedding"`` the panels are laid out in the class
    coordinates of the embeddings, where the trace phase separates into one
    term per class; ``"standard"`` integrates in the B-coordinates directly.
    """
    if psi.dim != f.dim:
        raise DimensionMismatch("cutoff and polynomial live in different dimensions")
    if f.dim > 4:
        raise DimensionTooLarge(f"adaptive quadrature supports kn <= 4, got {f.dim}")
    if coordinates == "standard":
        L = np.eye(f.dim)
    elif coordinates == "embedding":
        L = embedding_coordinates(f.field, f.n)
    else:
        raise ValueError("coordinates must be 'embedding' or 'standard'")
    jac = abs(float(np.linalg.det(L)))
    region = psi if coordinates == "standard" else MappedCutoff(psi, L)
    if not f.coeffs or f.degree == 0:
        const = sum((np.array(c) for c in f.coeffs.values()), np.zeros(f.field.k))
        base = oscillatory_integral_general(lambda p: np.zeros(len(p)), None, region, tol, **kwargs)
        shift = np.exp(2j * math.pi * float(const @ np.array(f.field.trace_vector, dtype=float)))
        return QuadratureResult(base.value * shift * jac, base.error_estimate * jac, base.panels_used, base.converged)
    phase = lambda y: _real_phase(f, y @ L.T)
    gradient = lambda y: grad_phase(f, y @ L.T) @ L
    res = oscillatory_integral_general(phase, gradient, region, tol / jac if jac > 1 else tol, **kwargs)
    return QuadratureResult(res.value * jac, res.error_estimate * jac, res.panels_used, res.converged)


def _real_phase(f: TracePolynomial, pts: np.ndarray) -> np.ndarray:
    # embedding route: real classes once, pairs as twice the real part
    u = f.embed_points(pts)
    total = np.zeros(len(pts))
    for cls in f.field.classes:
        j = cls[0]
        val = f.embedded[j](u[:, j, :]).real
        total += val if len(cls) == 1 else 2 * val
    return total


def mass(psi, tol: float = 1e-10) -> float:
    return oscillatory_integral_general(lambda p: np.zeros(len(p)), None, psi, tol).value.real


# factorized route for cutoffs that are products over embedding classes

def factorized_integral(f: TracePolynomial, psi: EmbeddingProductCutoff, tol: float = 1e-8, **kwargs) -> QuadratureResult:
    """I(f) as a product of per-class integrals in Minkowski coordinates.

    The trace phase splits into a sum over classes, and the product cutoff
    splits into per-class radial factors, so after the linear change of
    variables u = M x the integral factors.
    """
    field = f.field
    if psi.n != f.n or psi.field is not field:
        raise DimensionMismatch("cutoff does not match the polynomial")
    n = f.n
    M = field.minkowski_matrix()
    jac = abs(np.linalg.det(M)) ** n
    u0 = f.embed_points(psi.center[None, :])[0]
    value = 1.0 + 0j
    err_rel = 0.0
    panels = 0
    converged = True
    for c, cls in enumerate(field.classes):
        j = cls[0]
        p = f.embedded[j]
        s = psi.class_scales[c]
        real = len(cls) == 1
        center = u0[j].real if real else _to_real(u0[j])
        cut = Cutoff(center, psi.rho1 * s, psi.rho2 * s)
        res = class_integral(p, cut, real, tol, **kwargs)
        value *= res.value
        err_rel += res.error_estimate / max(abs(res.value), 1e-300)
        panels += res.panels_used
        converged &= res.converged
    value /= jac
    return QuadratureResult(value, err_rel * abs(value), panels, converged)


def _to_real(z: np.ndarray) -> np.ndarray:
    return np.stack([z.real, z.imag], axis=-1).reshape(-1)


def class_integral(p: EmbeddedPolynomial, cut: Cutoff, real: bool, tol: float, **kwargs) -> QuadratureResult:
    """Integral of e(P(u)) (real class) or e(2 Re P(u)) (complex pair) against a radial cutoff."""
    n = p.n
    if real:
        phase = lambda pts: p(pts.astype(complex)).real
        grad = lambda pts: p.gradient(pts.astype(complex)).real
    else:
        def as_complex(pts):
            return pts[:, 0::2] + 1j * pts[:, 1::2]

        phase = lambda pts: 2 * p(as_complex(pts)).real

        def grad(pts):
            # d/dx 2Re P = 2Re P', d/dy 2Re P = -2Im P'
            g = p.gradient(as_complex(pts))
            return np.stack([2 * g.real, -2 * g.imag], axis=-1).reshape(len(pts), 2 * n)

    return oscillatory_integral_general(phase, grad, cut, tol, **kwargs)


# trace Fourier transform

def kb_fourier(field: NumberField, psi: Cutoff, x, tol: float = 1e-9, **kwargs) -> complex:
    """integral of exp(2 pi i tr(A(x) A(y))) psi(y) dy, computed as an oscillatory integral."""
    if field.k > 3:
        raise DimensionTooLarge(f"trace Fourier transform supports k <= 3, got {field.k}")
    x = np.asarray(x, dtype=float)
    if x.shape != (field.k,):
        raise DimensionMismatch(f"x must have {field.k} coordinates")
    f = univariate(field, {1: x})
    return oscillatory_integral(f, psi, tol, **kwargs).value


def radial_fourier(psi: Cutoff, xi) -> complex:
    """Plain Fourier transform int exp(2 pi i xi.y) psi(y) dy of a radial cutoff, via Hankel-type quadrature."""
    xi = np.asarray(xi, dtype=float)
    dim = psi.dim
    rho = float(np.linalg.norm(xi))
    shift = np.exp(2j * math.pi * float(xi @ psi.center))
    w = 2 * math.pi * rho
    g = lambda r: float(psi.radial_profile(r))
    opts = dict(epsabs=1e-14, epsrel=1e-13, limit=400)
    r1, r2 = psi.rho1, psi.rho2
    if dim == 1:
        if rho == 0:
            core = 2 * r1
            tail = 2 * scipy.integrate.quad(g, r1, r2, **opts)[0]
        else:
            core = 2 * math.sin(w * r1) / w
            tail = 2 * scipy.integrate.quad(g, r1, r2, weight="cos", wvar=w, **opts)[0]
    elif dim == 2:
        kernel = lambda r: scipy.special.j0(w * r) * r
        core = math.pi * r1**2 if rho == 0 else 2 * math.pi * r1 * scipy.special.j1(w * r1) / w
        tail = 2 * math.pi * scipy.integrate.quad(lambda r: kernel(r) * g(r), r1, r2, **opts)[0]
    elif dim == 3:
        if rho == 0:
            core = 4 / 3 * math.pi * r1**3
            tail = 4 * math.pi * scipy.integrate.quad(lambda r: g(r) * r * r, r1, r2, **opts)[0]
        else:
            core = 4 * math.pi * (math.sin(w * r1) - w * r1 * math.cos(w * r1)) / w**3
            tail = 4 * math.pi / w * scipy.integrate.quad(lambda r: g(r) * r, r1, r2, weight="sin", wvar=w, **opts)[0]
    else:
        raise DimensionTooLarge("radial transform implemented for dimensions 1 to 3")
    return shift * (core + tail)


# extension operator of the moment curve

@dataclass(frozen=True)
class ExtensionValue:
    direct: complex
    reduced: complex
    relative_gap: float


def _moment_phase(field: NumberField, n: int, xi: np.ndarray):
    polys = moment_curve_polynomials(field, n)
    k = field.k
    grads = [[_rpoly_grad(polys[l][j], k) for j in range(k)] for l in range(n)]
    blocks = xi.reshape(n, k)

    def phase(pts):
        return sum(blocks[l, j] * eval_rational_poly(polys[l][j], pts) for l in range(n) for j in range(k) if blocks[l, j])

    def gradient(pts):
        out = np.zeros_like(pts)
        for l in range(n):
            for j in range(k):
                if blocks[l, j]:
                    for i in range(k):
                        out[:, i] += blocks[l, j] * eval_rational_poly(grads[l][j][i], pts)
        return out

    return phase, gradient


def _rpoly_grad(poly, k):
    out = []
    for i in range(k):
        d = {}
        for e, c in poly.items():
            if e[i]:
                e2 = tuple(v - (idx == i) for idx, v in enumerate(e))
                d[e2] = d.get(e2, 0) + c * e[i]
        out.append(d)
    return out


def reduced_polynomial(field: NumberField, n: int, xi) -> TracePolynomial:
    """f_eta(x) = sum_l eta_l x^l with eta_l = T^{-1} xi_l."""
    xi = np.asarray(xi, dtype=float).reshape(n, field.k)
    T = trace_form_float(field)
    eta = np.linalg.solve(T, xi.T).T
    return univariate(field, {l + 1: eta[l] for l in range(n)})


def extension_operator(field: NumberField, n: int, xi, psi: Cutoff, tol: float = 1e-9, **kwargs) -> ExtensionValue:
    """Extension operator of the moment curve, computed directly and through the trace reduction."""
    if field.k > 3:
        raise DimensionTooLarge(f"extension operator supports k <= 3, got {field.k}")
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (n * field.k,):
        raise DimensionMismatch(f"xi must have {n * field.k} coordinates")
    phase, gradient = _moment_phase(field, n, xi)
    direct = oscillatory_integral_general(phase, gradient, psi, tol, **kwargs).value
    reduced = oscillatory_integral(reduced_polynomial(field, n, xi), psi, tol, **kwargs).value
    gap = abs(direct - reduced) / max(abs(direct), abs(reduced), 1e-300)
    return ExtensionValue(direct, reduced, gap)


# main-bound verification

@dataclass(frozen=True)
class VerificationRow:
    param: float
    abs_I: float
    H: float
    product: float


@dataclass(frozen=True)
class VerificationReport:
    rows: tuple[VerificationRow, ...]
    slope_I: float
    slope_H: float
    max_product: float
    median_product: float
    vacuous: bool
    passed: bool

    def csv_rows(self) -> list[dict]:
        return [
            {"param": r.param, "abs_I": r.abs_I, "H": r.H, "product": r.product, "slope": self.slope_I}
            for r in self.rows
        ]


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def verify_main_bound(family: Sequence[tuple[float, TracePolynomial]], S, psi, tol: float = 1e-6,
                      h_resolution: int | None = None, **kwargs) -> VerificationReport:
    """Check that |I(f)| * H_S(f) stays bounded along a one-parameter family.

    Passes when max product <= 3 * median product and the decay slope of |I|
    mirrors the growth slope of H within 0.15.  If any H vanishes the bound
    is vacuous for that row and the report is flagged.
    """
    if len(family) < 4:
        raise ValueError("family needs at least 4 parameter values")
    params = [p for p, _ in family]
    if max(params) / min(params) < MIN_FAMILY_SPAN:
        raise ValueError(f"family parameters must span a factor of at least {MIN_FAMILY_SPAN}")
    S = check_embedding_set(family[0][1].field, S)
    rows = []
    for param, f in family:
        res = oscillatory_integral(f, psi, tol, **kwargs)
        H = combined_H(f, S, psi, h_resolution)
        rows.append(VerificationRow(float(param), abs(res.value), H, abs(res.value) * H))
    slope_I = loglog_slope(params, [r.abs_I for r in rows])
    vacuous = any(r.H == 0 for r in rows)
    if vacuous:
        return VerificationReport(tuple(rows), slope_I, float("nan"), math.inf, math.inf, True, True)
    slope_H = loglog_slope(params, [r.H for r in rows])
    products = [r.product for r in rows]
    med = float(np.median(products))
    passed = max(products) <= 3 * med and abs(slope_I + slope_H) <= 0.15
    return VerificationReport(tuple(rows), slope_I, slope_H, max(products), med, False, bool(passed))
