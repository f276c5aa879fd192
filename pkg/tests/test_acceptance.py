"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import time
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from tracephase import build_field, univariate
from tracephase.functionals import random_polynomial
from tracephase.harness import PinnedConstants, load_config, run
from tracephase.numberfield import mult_matrix, trace_form
from tracephase.phases import check_gradient_comparability, embed_polynomial, eval_phase, eval_phase_embedded

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

_RUNS: dict[tuple[str, int], tuple[object, float]] = {}


@pytest.fixture(scope="module")
def out_root(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def run_config(name, root, threads=1):
    """Run a shipped config once per thread count and cache (outcome, seconds)."""
    key = (name, threads)
    if key not in _RUNS:
        cfg = load_config(CONFIGS / f"{name}.json", environ={})
        cfg = replace(cfg, threads=threads, output=str(root / f"{name}-t{threads}"))
        start = time.perf_counter()
        outcome = run(cfg, PinnedConstants())
        _RUNS[key] = (outcome, time.perf_counter() - start)
    return _RUNS[key]


def test_structure_exactness(acceptance):
    start = time.perf_counter()
    sqrt2, gaussian = build_field([-2, 0, 1]), build_field([1, 0, 1])
    ok = True
    for q1, q2 in [(Fraction(3, 7), Fraction(-5, 2)), (Fraction(1), Fraction(1)), (Fraction(-11, 3), Fraction(2, 9))]:
        ok &= mult_matrix(sqrt2, [q1, q2]) == [[q1, 2 * q2], [q2, q1]]
        ok &= mult_matrix(gaussian, [q1, q2]) == [[q1, -q2], [q2, q1]]
    ok &= trace_form(sqrt2) == [[2, 0], [0, 4]]
    ok &= trace_form(gaussian) == [[2, 0], [0, -2]]
    elapsed = time.perf_counter() - start
    passed = bool(ok) and elapsed < 1
    acceptance.record(1, passed, f"exact matrices and trace forms, {elapsed:.3f}s (limit 1s)")
    assert passed


def test_trace_identity_and_gaussian_real_part(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for minpoly in ([-2, 0, 1], [1, 0, 1], [-2, 0, 0, 1], [1, 1, 0, 1]):
        field = build_field(minpoly)
        for _ in range(100):
            n = int(rng.integers(1, 4))
            f = random_polynomial(field, n, int(rng.integers(1, 5)), rng)
            x = rng.uniform(-1, 1, field.k * n)
            direct = float(eval_phase(f, x))
            embedded = complex(eval_phase_embedded(f, x))
            worst = max(worst, abs(direct - embedded) / max(1.0, abs(direct)))
    gaussian = build_field([1, 0, 1])
    for _ in range(100):
        n = int(rng.integers(1, 4))
        f = random_polynomial(gaussian, n, int(rng.integers(1, 5)), rng)
        x = rng.uniform(-1, 1, 2 * n)
        P = embed_polynomial(f, 0)
        twice_real = 2 * P(f.embed_points(x)[..., 0, :]).real
        direct = float(eval_phase(f, x))
        worst = max(worst, abs(direct - float(twice_real)) / max(1.0, abs(direct)))
    elapsed = time.perf_counter() - start
    passed = worst <= 1e-9 and elapsed < 5
    acceptance.record(2, passed, f"worst relative gap {worst:.2e} (limit 1e-9), {elapsed:.2f}s (limit 5s)")
    assert passed


MAIN_FAMILIES = ["verify-main-q", "verify-main-sqrt2", "verify-main-gaussian", "verify-main-degenerate"]


def test_main_bound_decay(acceptance, out_root):
    total, details, passed = 0.0, [], True
    for name in MAIN_FAMILIES:
        outcome, seconds = run_config(name, out_root)
        total += seconds
        s = outcome.result.summary
        expected = load_config(CONFIGS / f"{name}.json", environ={}).params["expected_slope"]
        spread = s["max_product"] / s["median_product"]
        ok = abs(s["slope_I"] - expected) <= 0.10 and spread <= 3 and not s["vacuous"]
        passed &= ok
        details.append(f"{name} slope {s['slope_I']:.3f} (want {expected}) max/median {spread:.2f}")
    passed &= total < 300
    acceptance.record(3, passed, "; ".join(details) + f"; {total:.0f}s (limit 300s)")
    assert passed


def test_gradient_comparability(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    failures, checked = 0, 0
    for minpoly in ([0, 1], [-2, 0, 1], [1, 0, 1], [-2, 0, 0, 1]):
        field = build_field(minpoly)
        for _ in range(100):
            degree = int(rng.integers(1, 6))
            f = univariate(field, {d: rng.standard_normal(field.k) for d in range(1, degree + 1)})
            rep = check_gradient_comparability(f, rng.uniform(-2, 2, (50, field.k)))
            failures += not rep.holds
            checked += 1
    elapsed = time.perf_counter() - start
    passed = failures == 0 and elapsed < 30
    acceptance.record(4, passed, f"{checked - failures}/{checked} polynomials satisfy both bounds, "
                                 f"{elapsed:.1f}s (limit 30s)")
    assert passed


def test_sublevel_scaling(acceptance, out_root):
    total, details, passed = 0.0, [], True
    for name in ("sublevel-q", "sublevel-gaussian"):
        outcome, seconds = run_config(name, out_root)
        total += seconds
        s = outcome.result.summary
        assert all(row["samples"] == 1_000_000 for row in outcome.result.rows)
        ok = abs(s["slope"] - s["expected_slope"]) <= 0.15
        passed &= ok
        details.append(f"{name} slope {s['slope']:.3f} (want {s['expected_slope']:.2f})")
    passed &= total < 120
    acceptance.record(5, passed, "; ".join(details) + f"; {total:.1f}s (limit 120s)")
    assert passed


def test_stability_and_overlap(acceptance, out_root):
    pinned = PinnedConstants()
    total, details, passed = 0.0, [], True
    for name in ("stability-sqrt2", "stability-gaussian"):
        outcome, seconds = run_config(name, out_root)
        total += seconds
        ratio = outcome.result.constants["C1_stability"]
        pin = pinned.get(outcome.key)["C1_stability"]
        ok = ratio <= 10 and abs(ratio - pin) <= 0.25 * pin and outcome.result.rows[0]["trials"] == 100
        passed &= ok
        details.append(f"{name} J ratio {ratio:.3f} (pin {pin:.3f})")
    for name in ("cover-q", "cover-gaussian"):
        outcome, seconds = run_config(name, out_root)
        total += seconds
        overlap = outcome.result.constants["N_overlap"]
        pin = pinned.get(outcome.key)["N_overlap"]
        ok = overlap <= pin and abs(overlap - pin) <= 0.25 * pin
        passed &= ok
        details.append(f"{name} overlap {overlap:g} (pin {pin:g})")
    passed &= total < 60
    acceptance.record(6, passed, "; ".join(details) + f"; {total:.1f}s (limit 60s)")
    assert passed


def test_trace_fourier_identity(acceptance, out_root):
    total, details, passed = 0.0, [], True
    for name in ("fourier-q", "fourier-sqrt2", "fourier-gaussian"):
        outcome, seconds = run_config(name, out_root)
        total += seconds
        worst = outcome.result.summary["worst_relative_gap"]
        passed &= worst <= 1e-6 and len(outcome.result.rows) == 50
        details.append(f"{name} worst gap {worst:.1e}")
    passed &= total < 120
    acceptance.record(7, passed, "; ".join(details) + f"; {total:.1f}s (limit 120s)")
    assert passed


def test_tarry_threshold(acceptance, out_root):
    total, details, passed = 0.0, [], True
    for suffix in ("q", "sqrt2"):
        lq, seconds = run_config(f"tarry-lq-{suffix}", out_root)
        total += seconds
        trends = {float(q): t for q, t in lq.result.summary["trends"].items()}
        ok = trends[3.0] == "non-convergent" and trends[5.0] == "convergent"
        sharp, seconds = run_config(f"tarry-sharpness-{suffix}", out_root)
        total += seconds
        s = sharp.result.summary
        k = 1 if suffix == "q" else 2
        ok &= s["spread"] <= 20 and abs(s["slope"] + k) <= 0.2
        ok &= sorted({row["Q"] for row in sharp.result.rows}) == [4, 8, 16]
        passed &= ok
        details.append(f"{suffix}: q=3 {trends[3.0]}, q=5 {trends[5.0]}, spread {s['spread']:.2f}, "
                       f"slope {s['slope']:.3f} (want {-k})")
    passed &= total < 900
    acceptance.record(8, passed, "; ".join(details) + f"; {total:.0f}s (limit 900s)")
    assert passed


DETERMINISM = ["verify-main-q", "sublevel-gaussian", "calibration", "stability-gaussian", "cover-gaussian",
               "fourier-gaussian", "tarry-sfrak-q", "tarry-sharpness-q", "tarry-lq-q"]


def test_determinism_across_threads(acceptance, out_root):
    mismatched = []
    for name in DETERMINISM:
        reference = run_config(name, out_root, 1)[0].csv_path.read_bytes()
        counts = (2,) if name == "tarry-lq-q" else (2, 4)
        for threads in counts:
            if run_config(name, out_root, threads)[0].csv_path.read_bytes() != reference:
                mismatched.append(f"{name}@{threads}")
    passed = not mismatched
    acceptance.record(9, passed, f"{len(DETERMINISM)} experiments byte-identical across thread counts"
                      if passed else f"mismatch: {', '.join(mismatched)}")
    assert passed
