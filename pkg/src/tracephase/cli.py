"""Command-line interface: ``tracephase <verb> ...``."""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .errors import CalibrationUnstable, ConfigInvalid, ExperimentFailed, TracePhaseError
from .functionals import (
    Cutoff,
    combined_H,
    cover_overlap,
    pointwise_H,
    pointwise_J,
    polydisc,
    uniform_H,
    vitali_cover,
)
from .harness import (
    DEFAULT_SEED,
    ENV_PREFIX,
    ExperimentConfig,
    PinnedConstants,
    load_config,
    pin_constants,
    resolve_field,
    rows_to_csv,
    run,
    sharpness_config_from,
)
from .numberfield import decompose, discriminant, trace_form
from .phases import eval_phase, eval_phase_embedded, grad_phase, parse_multi_index, polynomial_from_spec, univariate
from .quadrature import oscillatory_integral, verify_main_bound
from .sublevel import SublevelInstance, calibration_ratios, sublevel_measure
from .tarry import classify_eta, lq_tail_experiment, sfrak_measure, sharpness_experiment

EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_UNSTABLE = 3


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.replace(",", " ").split()]


def _sigma(text: str) -> int:
    """Embedding index: 'sigma2' is 1-based, a bare integer is 0-based."""
    text = text.strip().lower()
    if text.startswith("sigma"):
        return int(text[5:]) - 1
    return int(text)


def _embedding_set(text: str | None, k: int) -> list[int]:
    if not text or text.lower() == "all":
        return list(range(k))
    return [_sigma(s) for s in text.replace(",", " ").split()]


def _load_poly(field, text: str):
    path = Path(text)
    spec = json.loads(path.read_text()) if path.is_file() else json.loads(text)
    return polynomial_from_spec(field, spec)


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, default=_default))


def _default(o):
    if isinstance(o, complex):
        return {"re": o.real, "im": o.imag}
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    return str(o)


def _write_csv(args, name: str, rows: list[dict]) -> None:
    text = rows_to_csv(rows)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{name}.csv").write_text(text, encoding="utf-8")
        print(out / f"{name}.csv")
    else:
        sys.stdout.write(text)


# verbs

def cmd_field(args) -> int:
    field = resolve_field(args.field)
    dec = decompose(field)
    disc = discriminant(field)
    _emit({
        "degree": field.k, "real_embeddings": field.k1, "complex_pairs": field.k2,
        "minpoly": [str(c) for c in field.minpoly],
        "embeddings": [{"re": z.real, "im": z.imag} for z in field.embeddings],
        "trace_form": [[str(v) for v in row] for row in trace_form(field)],
        "discriminant": {"re": disc.real, "im": disc.imag},
        "class_dimensions": [b.shape[1] for b in dec.real_bases],
    })
    return 0


def cmd_phase(args) -> int:
    field = resolve_field(args.field)
    f = _load_poly(field, args.poly)
    x = np.array(_floats(args.x))
    if args.action == "eval":
        _emit({"algebra": float(np.real(eval_phase(f, x))), "embedding": float(np.real(eval_phase_embedded(f, x)))})
    elif args.action == "grad":
        _emit({"gradient": grad_phase(f, x).tolist()})
    else:
        u = f.embed_points(x[None, :])[0]
        _emit({"embedded_points": [[{"re": v.real, "im": v.imag} for v in row] for row in u],
               "values": [complex(f.embedded[j](u[j][None, :])[0]) for j in range(field.k)]})
    return 0


def _cutoff(args, dim: int) -> Cutoff:
    return Cutoff.centered(dim, args.rho1, args.rho2)


def cmd_hfunc(args) -> int:
    field = resolve_field(args.field)
    f = _load_poly(field, args.poly)
    if args.action == "point":
        v = pointwise_H(f, _sigma(args.sigma), np.array(_floats(args.x)))
        _emit({"H": v.value, "argmax": v.argmax})
    elif args.action == "uniform":
        v = uniform_H(f, _sigma(args.sigma), _cutoff(args, f.dim), args.resolution)
        _emit({"H": v.value, **v.meta()})
    else:
        _emit({"H": combined_H(f, _embedding_set(args.S, field.k), _cutoff(args, f.dim), args.resolution)})
    return 0


def cmd_jfunc(args) -> int:
    field = resolve_field(args.field)
    f = _load_poly(field, args.poly)
    v = pointwise_J(f, _sigma(args.sigma), np.array(_floats(args.x)))
    _emit({"J": v.value, "argmax": v.argmax})
    return 0


def cmd_polydisc(args) -> int:
    field = resolve_field(args.field)
    f = _load_poly(field, args.poly)
    P = polydisc(f, _embedding_set(args.S, field.k), np.array(_floats(args.x)), args.C)
    _emit({"center": P.center, "radii": P.radii, "infinite": P.infinite})
    return 0


def cmd_cover(args) -> int:
    field = resolve_field(args.field)
    f = _load_poly(field, args.poly)
    psi = _cutoff(args, f.dim)
    S = _embedding_set(args.S, field.k)
    cover = vitali_cover(f, S, psi, args.eps, args.resolution)
    overlap = cover_overlap(f, cover, psi, 3 * args.eps, args.probes, args.seed)
    _emit({"centers": len(cover.centers), "candidates": cover.candidates, "uncovered": cover.uncovered,
           "overlap": overlap})
    return 0


def cmd_integrate(args) -> int:
    field = resolve_field(args.field)
    f = _load_poly(field, args.poly)
    res = oscillatory_integral(f, _cutoff(args, f.dim), args.tol, coordinates=args.coordinates, threads=args.threads)
    _emit({"value": complex(res.value), "error_estimate": res.error_estimate, "panels": res.panels_used,
           "converged": res.converged})
    return 0


def cmd_verify_main(args) -> int:
    field = resolve_field(args.field)
    coeff = np.array(_floats(args.coeff))
    family = [(lam, univariate(field, {args.degree: lam * coeff})) for lam in _floats(args.lambdas)]
    psi = _cutoff(args, field.k)
    rep = verify_main_bound(family, _embedding_set(args.S, field.k), psi, args.tol, threads=args.threads)
    _write_csv(args, "verify-main", rep.csv_rows())
    return 0 if rep.passed and not rep.vacuous else EXIT_FAILED


def cmd_sublevel(args) -> int:
    if args.action == "calibrate":
        ratios = calibration_ratios(args.count, args.seed, args.max_degree)
        _emit({"max_ratio": float(ratios.max()), "median_ratio": float(np.median(ratios)), "count": len(ratios)})
        return 0
    field = resolve_field(args.field)
    f = _load_poly(field, args.poly)
    rows = []
    for eps in _floats(args.eps):
        inst = SublevelInstance.uniform(f, _embedding_set(args.S, field.k), parse_multi_index(args.alpha), eps, args.mu)
        m = sublevel_measure(inst, args.samples, args.seed, args.threads)
        rows.append({"eps": eps, **m._asdict()})
    _write_csv(args, "sublevel", rows)
    return 0


def cmd_tarry(args) -> int:
    field = resolve_field(args.field)
    if args.action == "classify":
        c = classify_eta(field, args.n, np.array(_floats(args.eta)))
        rows = [{"sigma": j + 1, "H": c.H[j], "in_S": j in c.S, "alpha": c.alpha.get(j, "")} for j in range(field.k)]
        _write_csv(args, "tarry-classify", rows)
    elif args.action == "sfrak":
        est = sfrak_measure(field, args.n, _embedding_set(args.S, field.k), _ints(args.alpha), args.samples,
                            args.seed, args.box, threads=args.threads)
        _write_csv(args, "tarry-sfrak", [est._asdict()])
    elif args.action == "lq":
        rep = lq_tail_experiment(field, args.n, _floats(args.q), _floats(args.shells) if args.shells else None,
                                 args.seed, threads=args.threads)
        _write_csv(args, "tarry-lq", rep.csv_rows())
    else:
        params = json.loads(Path(args.config).read_text()) if args.config else {}
        sc = sharpness_config_from(params, params.get("seed", args.seed), field.k)
        rep = sharpness_experiment(sc, field, args.n, args.trials)
        _write_csv(args, "tarry-sharpness", rep.csv_rows())
        return 0 if rep.spread_ok and rep.slope_ok else EXIT_FAILED
    return 0


def _config_with_overrides(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    updates = {}
    if args.seed_given:
        updates["seed"] = args.seed
    if args.threads_given:
        updates["threads"] = args.threads
    if args.tol_given:
        updates["tol"] = args.tol
    if args.out:
        updates["output"] = args.out
    return ExperimentConfig(**{**cfg.__dict__, **updates}).validate()


def cmd_run(args) -> int:
    outcome = run(_config_with_overrides(args))
    print(outcome.csv_path)
    return outcome.status


def cmd_pin(args) -> int:
    cfg = _config_with_overrides(args)
    store = PinnedConstants(args.store) if args.store else PinnedConstants()
    _emit(pin_constants(cfg, store))
    return 0


# parser

def _env(name: str, cast, default):
    raw = os.environ.get(ENV_PREFIX + name)
    return cast(raw) if raw not in (None, "") else default


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tracephase", description="Trace-phase oscillatory integral toolkit")
    p.add_argument("--seed", type=int, default=None, help="random seed (default 42)")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default 1)")
    p.add_argument("--tol", type=float, default=None, help="quadrature tolerance (default 1e-6)")
    p.add_argument("--out", default=None, help="output directory for CSV results")
    sub = p.add_subparsers(dest="verb", required=True)

    def with_field(sp, poly=False):
        sp.add_argument("--field", required=True, help="preset (Q, Q(i), Q(sqrt2), Q(cbrt2)), minpoly list or JSON path")
        if poly:
            sp.add_argument("--poly", required=True, help="polynomial spec as JSON text or path")
        return sp

    def with_cutoff(sp, rho1=0.5, rho2=1.0):
        sp.add_argument("--rho1", type=float, default=rho1)
        sp.add_argument("--rho2", type=float, default=rho2)
        return sp

    sp = with_field(sub.add_parser("field", help="field data"))
    sp.add_argument("action", choices=["info"])
    sp.set_defaults(func=cmd_field)

    sp = with_field(sub.add_parser("phase", help="trace phase values"), poly=True)
    sp.add_argument("action", choices=["eval", "grad", "embed"])
    sp.add_argument("--x", required=True)
    sp.set_defaults(func=cmd_phase)

    sp = with_cutoff(with_field(sub.add_parser("hfunc", help="H-functional"), poly=True))
    sp.add_argument("action", choices=["point", "uniform", "combined"])
    sp.add_argument("--sigma", default="sigma1")
    sp.add_argument("--x", default="0")
    sp.add_argument("--S", default="all")
    sp.add_argument("--resolution", type=int, default=None)
    sp.set_defaults(func=cmd_hfunc)

    sp = with_field(sub.add_parser("jfunc", help="J-functional"), poly=True)
    sp.add_argument("action", choices=["point"])
    sp.add_argument("--sigma", default="sigma1")
    sp.add_argument("--x", required=True)
    sp.set_defaults(func=cmd_jfunc)

    sp = with_field(sub.add_parser("polydisc", help="polydisc around a point"), poly=True)
    sp.add_argument("--x", required=True)
    sp.add_argument("--S", default="all")
    sp.add_argument("--C", type=float, default=1.0)
    sp.set_defaults(func=cmd_polydisc)

    sp = with_cutoff(with_field(sub.add_parser("cover", help="Vitali cover and overlap"), poly=True))
    sp.add_argument("--S", default="all")
    sp.add_argument("--eps", type=float, default=0.05)
    sp.add_argument("--probes", type=int, default=4000)
    sp.add_argument("--resolution", type=int, default=None)
    sp.set_defaults(func=cmd_cover)

    sp = with_cutoff(with_field(sub.add_parser("integrate", help="oscillatory integral"), poly=True))
    sp.add_argument("--coordinates", choices=["embedding", "standard"], default="embedding")
    sp.set_defaults(func=cmd_integrate)

    sp = with_cutoff(with_field(sub.add_parser("verify-main", help="decay along lambda * q x^d")), 0.15, 0.3)
    sp.add_argument("--coeff", required=True, help="B-coordinates of q")
    sp.add_argument("--degree", type=int, default=2)
    sp.add_argument("--lambdas", default="16 64 256 1024")
    sp.add_argument("--S", default="all")
    sp.set_defaults(func=cmd_verify_main)

    sp = sub.add_parser("sublevel", help="sublevel set measures and calibration")
    sp.add_argument("action", choices=["measure", "calibrate"])
    sp.add_argument("--field", default="Q")
    sp.add_argument("--poly", default='{"n": 1, "coeffs": {"(3)": 1}}')
    sp.add_argument("--S", default="all")
    sp.add_argument("--alpha", default="(3)")
    sp.add_argument("--mu", type=float, default=1.0)
    sp.add_argument("--eps", default="0.01")
    sp.add_argument("--samples", type=int, default=1_000_000)
    sp.add_argument("--count", type=int, default=500)
    sp.add_argument("--max-degree", type=int, default=6)
    sp.set_defaults(func=cmd_sublevel)

    sp = with_field(sub.add_parser("tarry", help="moment-curve experiments"))
    sp.add_argument("action", choices=["classify", "sfrak", "lq", "sharpness"])
    sp.add_argument("--n", type=int, default=2)
    sp.add_argument("--eta", default="0 0")
    sp.add_argument("--S", default="all")
    sp.add_argument("--alpha", default="3")
    sp.add_argument("--samples", type=int, default=20_000)
    sp.add_argument("--box", type=float, default=None)
    sp.add_argument("--q", default="3 5")
    sp.add_argument("--shells", default=None)
    sp.add_argument("--trials", type=int, default=8)
    sp.add_argument("--config", default=None, help="JSON with keys A, m_min, m_max, a, c1, seed")
    sp.set_defaults(func=cmd_tarry)

    for verb, func, helptext in (("run", cmd_run, "run an experiment config"),
                                 ("pin", cmd_pin, "calibrate and pin an experiment's constants")):
        sp = sub.add_parser(verb, help=helptext)
        sp.add_argument("--config", required=True)
        if verb == "pin":
            sp.add_argument("--store", default=None, help="pinned-constant file (default: packaged fixture)")
        sp.set_defaults(func=func)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    # precedence: command-line flag, then TRACEPHASE_* variable, then default
    args.seed_given = args.seed is not None
    args.threads_given = args.threads is not None
    args.tol_given = args.tol is not None
    args.seed = args.seed if args.seed_given else _env("SEED", int, DEFAULT_SEED)
    args.threads = args.threads if args.threads_given else _env("THREADS", int, 1)
    args.tol = args.tol if args.tol_given else _env("TOL", float, 1e-6)
    args.out = args.out or _env("OUT", str, None)
    try:
        return args.func(args)
    except ExperimentFailed as exc:
        print(f"experiment failed: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except CalibrationUnstable as exc:
        print(f"calibration unstable: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except (ConfigInvalid, TracePhaseError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
