"""Experiment orchestration: configs, result files, run manifests and pinned constants."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import platform
from dataclasses import dataclass, field as dc_field, replace
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np
import scipy

from . import __version__
from .errors import CalibrationUnstable, ConfigInvalid, ExperimentFailed
from .functionals import (
    Cutoff,
    cover_overlap,
    stability_trials,
    vitali_cover,
)
from .numberfield import NumberField, field_from_spec, field_to_spec, trace_form_float
from .phases import TracePolynomial, parse_multi_index, polynomial_from_spec, univariate
from .quadrature import kb_fourier, loglog_slope, radial_fourier, verify_main_bound
from .sublevel import SublevelInstance, calibration_ratios, sublevel_measure
from .tarry import SharpnessConfig, lq_tail_experiment, sfrak_measure, sharpness_experiment, threshold_exponent

ENV_PREFIX = "TRACEPHASE_"
DEFAULT_SEED = 42
PINNED_PATH = Path(__file__).with_name("data") / "pinned_constants.json"
DRIFT_LIMIT = 0.25
REPIN_LIMIT = 0.10

FIELD_PRESETS = {
    "Q": [0, 1],
    "Q(i)": [1, 0, 1],
    "Q(sqrt2)": [-2, 0, 1],
    "Q(cbrt2)": [-2, 0, 0, 1],
}


def resolve_field(spec) -> NumberField:
    """A field from a preset name, a minimal-polynomial list, a spec dict or a path to a JSON spec."""
    if isinstance(spec, NumberField):
        return spec
    if isinstance(spec, str):
        if spec in FIELD_PRESETS:
            return field_from_spec({"minpoly": FIELD_PRESETS[spec]})
        path = Path(spec)
        if path.is_file():
            return field_from_spec(json.loads(path.read_text()))
        try:
            return field_from_spec({"minpoly": [p.strip() for p in spec.split(",")]})
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigInvalid(f"cannot read field spec {spec!r}") from exc
    if isinstance(spec, (list, tuple)):
        return field_from_spec({"minpoly": list(spec)})
    if isinstance(spec, Mapping):
        return field_from_spec(dict(spec))
    raise ConfigInvalid(f"cannot read field spec {spec!r}")


def field_id(field: NumberField) -> str:
    return "minpoly=" + ",".join(str(c) for c in field.minpoly)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# configuration

@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    field: Any
    params: dict = dc_field(default_factory=dict)
    seed: int = DEFAULT_SEED
    threads: int = 1
    tol: float = 1e-6
    output: str = "results"

    def validate(self) -> "ExperimentConfig":
        if self.experiment not in EXPERIMENTS:
            raise ConfigInvalid(f"unknown experiment {self.experiment!r}; choose from {sorted(EXPERIMENTS)}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigInvalid("seed must be a nonnegative integer")
        if not isinstance(self.threads, int) or self.threads < 1:
            raise ConfigInvalid("threads must be a positive integer")
        if not 1e-12 <= self.tol <= 1e-3:
            raise ConfigInvalid("tol must lie in [1e-12, 1e-3]")
        if not isinstance(self.params, Mapping):
            raise ConfigInvalid("params must be a mapping")
        return self

    def to_dict(self) -> dict:
        spec = field_to_spec(self.field) if isinstance(self.field, NumberField) else self.field
        return {"experiment": self.experiment, "field": spec, "params": self.params, "seed": self.seed,
                "tol": self.tol, "output": self.output}


def load_config(source, environ: Mapping[str, str] | None = None) -> ExperimentConfig:
    """Parse a config from a dict or a JSON file, then apply TRACEPHASE_* environment overrides."""
    if isinstance(source, (str, os.PathLike)):
        try:
            data = json.loads(Path(source).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigInvalid(f"cannot read config {source}: {exc}") from exc
    else:
        data = source
    if not data:
        raise ConfigInvalid("config is empty")
    if not isinstance(data, Mapping):
        raise ConfigInvalid("config must be a JSON object")
    unknown = set(data) - {"experiment", "field", "params", "seed", "threads", "tol", "output"}
    if unknown:
        raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
    for key in ("experiment", "field"):
        if key not in data:
            raise ConfigInvalid(f"config lacks {key!r}")
    try:
        cfg = ExperimentConfig(
            experiment=str(data["experiment"]),
            field=data["field"],
            params=dict(data.get("params", {})),
            seed=int(data.get("seed", DEFAULT_SEED)),
            threads=int(data.get("threads", 1)),
            tol=float(data.get("tol", 1e-6)),
            output=str(data.get("output", "results")),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(str(exc)) from exc
    return apply_env(cfg, os.environ if environ is None else environ).validate()


def apply_env(cfg: ExperimentConfig, environ: Mapping[str, str]) -> ExperimentConfig:
    updates = {}
    casts = {"SEED": ("seed", int), "THREADS": ("threads", int), "TOL": ("tol", float), "OUT": ("output", str)}
    for suffix, (name, cast) in casts.items():
        raw = environ.get(ENV_PREFIX + suffix)
        if raw is not None and raw != "":
            try:
                updates[name] = cast(raw)
            except ValueError as exc:
                raise ConfigInvalid(f"bad value for {ENV_PREFIX + suffix}: {raw!r}") from exc
    return replace(cfg, **updates) if updates else cfg


# experiments

@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ExperimentResult:
    rows: list[dict]
    summary: dict
    checks: list[Check]
    constants: dict[str, float]
    degree: int = 0
    n: int = 1


def _poly(field: NumberField, spec) -> TracePolynomial:
    return polynomial_from_spec(field, spec)


def _monomial_family(field: NumberField, params: dict) -> list[tuple[float, TracePolynomial]]:
    coeff = np.asarray([float(Fraction(str(c))) if not isinstance(c, float) else c for c in params["coeff"]])
    degree = int(params.get("degree", 2))
    return [(float(lam), univariate(field, {degree: lam * coeff})) for lam in params["lambdas"]]


def run_verify_main(field: NumberField, p: dict, cfg: ExperimentConfig) -> ExperimentResult:
    family = _monomial_family(field, p)
    rho = p.get("cutoff", [0.15, 0.3])
    psi = Cutoff.centered(field.k, rho[0], rho[1])
    S = p.get("S", list(range(field.k)))
    report = verify_main_bound(family, S, psi, cfg.tol, p.get("h_resolution"), threads=cfg.threads)
    checks = [Check("bounded_product", report.passed and not report.vacuous,
                    f"max/median={report.max_product / report.median_product:.4g}")]
    if "expected_slope" in p:
        ok = abs(report.slope_I - p["expected_slope"]) <= p.get("slope_tol", 0.10)
        checks.append(Check("decay_slope", ok, f"slope={report.slope_I:.4f} expected={p['expected_slope']}"))
    summary = {"slope_I": report.slope_I, "slope_H": report.slope_H, "max_product": report.max_product,
               "median_product": report.median_product, "vacuous": report.vacuous}
    return ExperimentResult(report.csv_rows(), summary, checks, {}, int(p.get("degree", 2)), 1)


def run_sublevel(field: NumberField, p: dict, cfg: ExperimentConfig) -> ExperimentResult:
    f = _poly(field, p["poly"])
    S = p.get("S", list(range(field.k)))
    alpha = parse_multi_index(p["alpha"])
    mu = float(p["mu"])
    rows, est = [], []
    for eps in p["eps"]:
        inst = SublevelInstance.uniform(f, S, alpha, float(eps), mu)
        m = sublevel_measure(inst, int(p.get("samples", 1_000_000)), cfg.seed, cfg.threads)
        rows.append({"eps": float(eps), "estimate": m.estimate, "ci_low": m.ci_low, "ci_high": m.ci_high,
                     "hits": m.hits, "samples": m.samples, "bound": m.bound, "ratio": m.ratio})
        est.append(m.estimate)
    expected = sum(1.0 / (sum(alpha) - 1) for _ in S)
    slope = loglog_slope([r["eps"] for r in rows], est) if all(v > 0 for v in est) else math.nan
    checks = [Check("sublevel_slope", abs(slope - expected) <= p.get("slope_tol", 0.15),
                    f"slope={slope:.4f} expected={expected:.4f}")]
    return ExperimentResult(rows, {"slope": slope, "expected_slope": expected}, checks,
                            {"C_pin": max(r["ratio"] for r in rows)}, f.degree, f.n)


def run_calibration(field: NumberField, p: dict, cfg: ExperimentConfig) -> ExperimentResult:
    degree = int(p.get("max_degree", 6))
    ratios = calibration_ratios(int(p.get("count", 500)), cfg.seed, degree)
    rows = [{"case": i, "ratio": float(r)} for i, r in enumerate(ratios)]
    worst = float(ratios.max())
    return ExperimentResult(rows, {"max_ratio": worst, "median_ratio": float(np.median(ratios))}, [],
                            {"C_cal": worst}, degree, 1)


def run_stability(field: NumberField, p: dict, cfg: ExperimentConfig) -> ExperimentResult:
    n, degree, eps = int(p.get("n", 1)), int(p.get("degree", 3)), float(p.get("eps", 0.05))
    rep = stability_trials(field, n, degree, eps, int(p.get("trials", 100)), cfg.seed)
    two_sided = max(rep.j_ratio_max, rep.j_ratio_inverse_max)
    rows = [{"trials": rep.trials, "j_ratio_max": rep.j_ratio_max, "j_ratio_inverse_max": rep.j_ratio_inverse_max,
             "one_sided_max": rep.one_sided_max, "gradient_constant": rep.gradient_constant}]
    checks = [Check("j_ratio", two_sided <= p.get("j_ratio_limit", 10.0), f"two-sided ratio={two_sided:.4g}")]
    return ExperimentResult(rows, {"two_sided_ratio": two_sided}, checks, {"C1_stability": two_sided}, degree, n)


def run_cover(field: NumberField, p: dict, cfg: ExperimentConfig) -> ExperimentResult:
    f = _poly(field, p["poly"])
    S = p.get("S", list(range(field.k)))
    rho = p.get("cutoff", [0.5, 1.0])
    psi = Cutoff.centered(f.dim, rho[0], rho[1])
    eps = float(p.get("eps", 0.05))
    cover = vitali_cover(f, S, psi, eps, p.get("resolution"))
    overlap = cover_overlap(f, cover, psi, float(p.get("dilation", 3 * eps)), int(p.get("probes", 4000)), cfg.seed)
    rows = [{"center": i, **{f"x{j}": float(v) for j, v in enumerate(c)}} for i, c in enumerate(cover.centers)]
    checks = [Check("cover_complete", cover.uncovered == 0, f"uncovered={cover.uncovered}")]
    return ExperimentResult(rows, {"centers": len(cover.centers), "overlap": overlap}, checks,
                            {"N_overlap": float(overlap)}, f.degree, f.n)


def run_fourier(field: NumberField, p: dict, cfg: ExperimentConfig) -> ExperimentResult:
    rng = np.random.default_rng(cfg.seed)
    rho = p.get("cutoff", [0.5, 1.0])
    psi = Cutoff.centered(field.k, rho[0], rho[1])
    T = trace_form_float(field)
    spread = float(p.get("scale", 3.0))
    rows, worst = [], 0.0
    for i in range(int(p.get("count", 50))):
        x = rng.uniform(-spread, spread, field.k)
        a = kb_fourier(field, psi, x, min(cfg.tol, 1e-9), threads=cfg.threads)
        b = radial_fourier(psi, T @ x)
        rel = abs(a - b) / max(abs(b), 1e-300)
        worst = max(worst, rel)
        rows.append({"sample": i, **{f"x{j}": float(v) for j, v in enumerate(x)},
                     "quadrature_re": a.real, "quadrature_im": a.imag, "radial_re": b.real, "radial_im": b.imag,
                     "relative_gap": rel})
    checks = [Check("fourier_identity", bool(worst <= p.get("rel_tol", 1e-6)), f"worst relative gap={worst:.3g}")]
    return ExperimentResult(rows, {"worst_relative_gap": worst}, checks, {}, 1, 1)


def run_tarry_sfrak(field: NumberField, p: dict, cfg: ExperimentConfig) -> ExperimentResult:
    n = int(p.get("n", 2))
    S = [int(s) for s in p["S"]]
    est = sfrak_measure(field, n, S, p["alpha"], int(p.get("samples", 20_000)), cfg.seed, p.get("box"),
                        threads=cfg.threads)
    rows = [dict(est._asdict())]
    return ExperimentResult(rows, dict(est._asdict()), [], {"sfrak_ratio": est.ratio}, 0, n)


def run_tarry_lq(field: NumberField, p: dict, cfg: ExperimentConfig) -> ExperimentResult:
    n = int(p.get("n", 2))
    qn = threshold_exponent(n)
    q_list = p.get("q_list", [qn - 1, qn + 1])
    rep = lq_tail_experiment(field, n, q_list, p.get("shell_radii"), cfg.seed, tol=min(cfg.tol, 1e-8),
                             threads=cfg.threads)
    checks = []
    for q in rep.q_list:
        if q > qn:
            checks.append(Check(f"convergent_q{q:g}", rep.trends[q] == "convergent", rep.trends[q]))
        elif q < qn:
            checks.append(Check(f"non_convergent_q{q:g}", rep.trends[q] == "non-convergent", rep.trends[q]))
    summary = {"threshold": qn, "trends": {str(q): t for q, t in rep.trends.items()},
               "ratios": {str(q): list(r) for q, r in rep.ratios.items()}}
    return ExperimentResult(rep.csv_rows(), summary, checks, {}, 0, n)


def sharpness_config_from(p: Mapping, seed: int, k: int) -> SharpnessConfig:
    keys = {"A", "m_min", "m_max", "a", "c1", "seed"}
    given = {key: p[key] for key in keys if key in p}
    given.setdefault("seed", seed)
    return SharpnessConfig(**given, k=k)


def run_tarry_sharpness(field: NumberField, p: dict, cfg: ExperimentConfig) -> ExperimentResult:
    n = int(p.get("n", 2))
    sc = sharpness_config_from(p, cfg.seed, field.k)
    rep = sharpness_experiment(sc, field, n, int(p.get("trials", 8)), min(cfg.tol, 1e-9))
    checks = [Check("product_spread", rep.spread_ok, f"max/min={rep.spread:.4g}"),
              Check("decay_slope", rep.slope_ok, f"slope={rep.slope:.4f} expected={-field.k}"),
              Check("recentering", rep.recentering_gap <= 1e-6 and rep.recentering_det <= 1e-9,
                    f"gap={rep.recentering_gap:.3g} det error={rep.recentering_det:.3g}")]
    summary = {"c_kb": rep.c_kb, "min_product": rep.min_product, "spread": rep.spread, "slope": rep.slope}
    return ExperimentResult(rep.csv_rows(), summary, checks, {"c_pin": rep.min_product}, 0, n)


EXPERIMENTS: dict[str, Callable[[NumberField, dict, ExperimentConfig], ExperimentResult]] = {
    "verify-main": run_verify_main,
    "sublevel": run_sublevel,
    "calibration": run_calibration,
    "stability": run_stability,
    "cover": run_cover,
    "fourier": run_fourier,
    "tarry-sfrak": run_tarry_sfrak,
    "tarry-lq": run_tarry_lq,
    "tarry-sharpness": run_tarry_sharpness,
}


# pinned constants

def pin_key(experiment: str, field: NumberField, degree: int, n: int) -> str:
    return f"{experiment}|{field_id(field)}|d={degree}|n={n}"


class PinnedConstants:
    """Human-readable JSON store of measured constants, keyed by experiment, field, degree and n."""

    def __init__(self, path: str | os.PathLike = PINNED_PATH):
        self.path = Path(path)
        self.entries: dict[str, dict] = json.loads(self.path.read_text()) if self.path.is_file() else {}

    def get(self, key: str) -> dict[str, float]:
        return dict(self.entries.get(key, {}).get("constants", {}))

    def drift(self, key: str, measured: Mapping[str, float]) -> list[tuple[str, float, float]]:
        """Constants whose measured value is more than 25% away from the pinned one."""
        out = []
        for name, pinned in self.get(key).items():
            if name in measured:
                value = measured[name]
                if not math.isfinite(value) or abs(value - pinned) > DRIFT_LIMIT * abs(pinned):
                    out.append((name, pinned, value))
        return out

    def record(self, key: str, constants: Mapping[str, float], seed: int, stamp: str | None = None) -> None:
        stamp = stamp or datetime.now(timezone.utc).replace(microsecond=0).isoformat()
        self.entries[key] = {"constants": {k: float(v) for k, v in sorted(constants.items())},
                             "seed": seed, "pinned_at": stamp}

    def save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.entries, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def compare_calibration_runs(runs: list[Mapping[str, float]]) -> dict[str, float]:
    """Values of the first run after checking every run agrees with it within 10%."""
    if len(runs) < 2:
        raise ValueError("need at least two calibration runs")
    first = runs[0]
    for other in runs[1:]:
        if set(other) != set(first):
            raise CalibrationUnstable("calibration runs report different constants")
        for name, value in first.items():
            if abs(other[name] - value) > REPIN_LIMIT * max(abs(value), 1e-300):
                raise CalibrationUnstable(f"{name} moved from {value:.6g} to {other[name]:.6g} between calibration runs")
    return dict(first)


# running

def format_value(v) -> str:
    if isinstance(v, bool) or v is None:
        return str(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        header = list(rows[0])
        for row in rows[1:]:
            header.extend(key for key in row if key not in header)
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(row.get(key, "")) for key in header])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


@dataclass(frozen=True)
class RunOutcome:
    status: int
    result: ExperimentResult
    csv_path: Path
    json_path: Path
    manifest_path: Path
    key: str


def execute(cfg: ExperimentConfig) -> tuple[NumberField, ExperimentResult]:
    cfg.validate()
    field = resolve_field(cfg.field)
    return field, EXPERIMENTS[cfg.experiment](field, dict(cfg.params), cfg)


def run(cfg: ExperimentConfig, pinned: PinnedConstants | None = None) -> RunOutcome:
    """Run one experiment, write CSV, JSON and manifest, then enforce checks and pinned constants."""
    field, result = execute(cfg)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    stem = cfg.experiment
    csv_text = rows_to_csv(result.rows)
    csv_path = out / f"{stem}.csv"
    csv_path.write_text(csv_text, encoding="utf-8")
    key = pin_key(cfg.experiment, field, result.degree, result.n)
    pinned = pinned if pinned is not None else PinnedConstants()
    drift = pinned.drift(key, result.constants)
    payload = {
        "experiment": cfg.experiment, "key": key, "summary": result.summary,
        "checks": [{"name": c.name, "passed": bool(c.passed), "detail": c.detail} for c in result.checks],
        "constants": result.constants, "pinned": pinned.get(key), "rows": result.rows,
    }
    json_path = out / f"{stem}.json"
    json_path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    config_dict = cfg.to_dict()
    manifest = {
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "tol": cfg.tol,
        "config_sha256": sha256_text(canonical_json(config_dict)),
        "field_spec": field_to_spec(field),
        "field_spec_sha256": sha256_text(canonical_json(field_to_spec(field))),
        "outputs": {csv_path.name: sha256_text(csv_text)},
        "versions": {"tracephase": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
    }
    manifest_path = out / f"{stem}.manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for name, was, now in drift:
        raise ExperimentFailed(name, f"pinned {was:.6g}, measured {now:.6g} (more than 25% drift)")
    for check in result.checks:
        if not check.passed:
            raise ExperimentFailed(check.name, check.detail)
    return RunOutcome(0, result, csv_path, json_path, manifest_path, key)


def pin_constants(cfg: ExperimentConfig, pinned: PinnedConstants | None = None,
                  thread_counts: tuple[int, ...] = (1, 2)) -> dict[str, float]:
    """Run a calibration twice with the same seed (varying the thread count) and record its constants."""
    pinned = pinned if pinned is not None else PinnedConstants()
    runs, key = [], None
    for threads in thread_counts:
        field, result = execute(replace(cfg, threads=threads))
        if any(not c.passed for c in result.checks):
            bad = next(c for c in result.checks if not c.passed)
            raise ExperimentFailed(bad.name, "calibration run did not pass its own checks: " + bad.detail)
        runs.append(result.constants)
        key = pin_key(cfg.experiment, field, result.degree, result.n)
    values = compare_calibration_runs(runs)
    if not values:
        raise ConfigInvalid(f"experiment {cfg.experiment!r} has no constants to pin")
    pinned.record(key, values, cfg.seed)
    pinned.save()
    return values
