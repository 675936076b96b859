"""Command-line interface: ``volqml {simulate,filter,fit,diagnose,mc}``.

Each command reads an optional JSON config (``--config``), applies flag
overrides, validates the result against a schema and writes its outputs under
the output directory (``--output-dir``, else the config's ``output_dir``, else
``$VOLQML_OUTPUT_DIR``, else the working directory).

Exit codes: 0 success, 2 config/input error, 3 numeric divergence, 4 fit failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from pathlib import Path

import jsonschema
import numpy as np

from volqml import __version__
from volqml.errors import (
    ConstraintError,
    CovarianceError,
    FitError,
    InputError,
    NumericError,
    UnsupportedError,
)
from volqml.filtering import FilterConfig, run_filter
from volqml.innovations import InnovationSpec, RngStream
from volqml.io import provenance, write_csv, write_json
from volqml.mc import ExperimentPlan, run_experiment
from volqml.models import CompactRegion, ModelSpec, check_theta, weak_stationarity_margin
from volqml.qmle import FitOptions, fit
from volqml.sre import (
    egarch_invertibility_check,
    lyapunov_agarch,
    scan_contraction,
    simulate_stationary,
    spectral_radius_C,
)

COMMANDS = ("simulate", "filter", "fit", "diagnose", "mc")
EXIT_OK, EXIT_INPUT, EXIT_DIVERGENCE, EXIT_FIT = 0, 2, 3, 4

_NUMBER_LIST = {"type": "array", "items": {"type": "number"}}
_THETA = {"oneOf": [_NUMBER_LIST, {"type": "object", "additionalProperties": {"type": "number"}}]}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "model": {
            "type": "object", "additionalProperties": False, "required": ["family"],
            "properties": {"family": {"enum": ["garch", "agarch", "egarch"]},
                           "p": {"type": "integer", "minimum": 0}, "q": {"type": "integer", "minimum": 0}},
        },
        "theta": _THETA,
        "innovation": {
            "type": "object", "additionalProperties": False,
            "properties": {"family": {"enum": ["normal", "student-t", "uniform", "rademacher"]},
                           "nu": {"type": "number"}},
        },
        "region": {
            "type": "object", "additionalProperties": False,
            "properties": {"lower": _NUMBER_LIST, "upper": _NUMBER_LIST,
                           "beta_cap": {"type": "number", "exclusiveMaximum": 1}},
        },
        "seed": {"type": "integer", "minimum": 0},
        "stream": {"type": "integer", "minimum": 0},
        "n": {"type": "integer", "minimum": 0},
        "burn_in": {"type": "integer", "minimum": 0},
        "input": {"type": "string"},
        "column": {"type": "string"},
        "output_dir": {"type": "string"},
        "threads": {"type": "integer", "minimum": 1},
        "filter": {
            "type": "object", "additionalProperties": False,
            "properties": {"init": {"oneOf": [{"type": "number"}, _NUMBER_LIST]},
                           "warmup_skip": {"type": "integer", "minimum": 0},
                           "order": {"enum": [0, 1, 2]}},
        },
        "fit": {
            "type": "object", "additionalProperties": False,
            "properties": {"gtol": {"type": "number", "exclusiveMinimum": 0},
                           "steptol": {"type": "number", "exclusiveMinimum": 0},
                           "maxiter": {"type": "integer", "minimum": 1},
                           "n_starts": {"type": "integer", "minimum": 1},
                           "hessian": {"enum": ["exact", "bfgs"]},
                           "frozen": {"type": "object", "additionalProperties": {"type": "number"}},
                           "init": _THETA},
        },
        "diagnose": {
            "type": "object", "additionalProperties": False,
            "properties": {"n_products": {"type": "integer", "minimum": 1},
                           "n_replications": {"type": "integer", "minimum": 2},
                           "n_samples": {"type": "integer", "minimum": 2},
                           "norm": {"enum": ["frobenius", "operator"]}},
        },
        "mc": {
            "type": "object", "additionalProperties": False, "required": ["kind"],
            "properties": {"kind": {"enum": ["consistency", "coverage", "decay", "region-scan", "equivalence"]},
                           "sizes": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                           "replications": {"type": "integer", "minimum": 1},
                           "n_starts": {"type": "integer", "minimum": 1},
                           "hessian": {"enum": ["exact", "bfgs"]},
                           "options": {"type": "object"}},
        },
    },
}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="volqml", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"volqml {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "simulate a stationary path (path.csv: t, X, sigma2, Z)",
        "filter": "run the volatility filter on observed data (filter.csv)",
        "fit": "quasi-maximum-likelihood fit (estimate.json, residuals.csv)",
        "diagnose": "stationarity / invertibility diagnostics (diagnose.json)",
        "mc": "Monte-Carlo experiment (rows.csv, aggregate.csv, plan.json)",
    }
    for name in COMMANDS:
        sp = sub.add_parser(name, help=helps[name], description=helps[name])
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--output-dir", help="directory for output files")
        sp.add_argument("--model", choices=["garch", "agarch", "egarch"], help="model family")
        sp.add_argument("--p", type=int, help="observation lag order")
        sp.add_argument("--q", type=int, help="volatility lag order")
        sp.add_argument("--theta", help="comma-separated coefficients in canonical order")
        sp.add_argument("--innovation", choices=["normal", "student-t", "uniform", "rademacher"],
                        help="innovation law")
        sp.add_argument("--nu", type=float, help="student-t degrees of freedom")
        sp.add_argument("--seed", type=int, help="base random seed")
        sp.add_argument("--threads", type=int, help="worker cap")
        if name in ("simulate",):
            sp.add_argument("--n", type=int, help="path length")
            sp.add_argument("--burn-in", type=int, help="discarded steps")
        if name in ("filter", "fit"):
            sp.add_argument("--input", help="observation CSV (column X, or a single headerless column)")
            sp.add_argument("--column", help="column to read from the input CSV")
            sp.add_argument("--warmup-skip", type=int, help="observations excluded from the likelihood")
        if name == "filter":
            sp.add_argument("--order", type=int, choices=[0, 1, 2], help="derivative order")
        if name == "mc":
            sp.add_argument("--kind", choices=["consistency", "coverage", "decay", "region-scan", "equivalence"],
                            help="experiment kind")
            sp.add_argument("--replications", type=int, help="replications per size")
            sp.add_argument("--sizes", help="comma-separated sample sizes")
    return ap


def _load_config(args) -> dict:
    cfg: dict = {}
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except OSError as exc:
            raise InputError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise InputError(f"config is not valid JSON: {exc.msg}", exc.lineno) from exc
        if not isinstance(cfg, dict):
            raise InputError("config must be a JSON object")
    if cfg.get("command", args.command) != args.command:
        raise InputError(f"config is for command {cfg['command']!r}, not {args.command!r}")
    cfg["command"] = args.command
    model = dict(cfg.get("model", {}))
    for key in ("p", "q"):
        if getattr(args, key) is not None:
            model[key] = getattr(args, key)
    if args.model:
        model["family"] = args.model
    if model:
        cfg["model"] = model
    if args.theta:
        try:
            cfg["theta"] = [float(v) for v in args.theta.split(",")]
        except ValueError as exc:
            raise InputError(f"--theta: {exc}") from exc
    if args.innovation or args.nu is not None:
        inn = dict(cfg.get("innovation", {}))
        if args.innovation:
            inn["family"] = args.innovation
        if args.nu is not None:
            inn["nu"] = args.nu
        cfg["innovation"] = inn
    simple = {"seed": "seed", "threads": "threads", "n": "n", "burn_in": "burn_in", "input": "input",
              "column": "column"}
    for attr, key in simple.items():
        v = getattr(args, attr, None)
        if v is not None:
            cfg[key] = v
    if getattr(args, "warmup_skip", None) is not None:
        cfg.setdefault("filter", {})["warmup_skip"] = args.warmup_skip
    if getattr(args, "order", None) is not None:
        cfg.setdefault("filter", {})["order"] = args.order
    if args.command == "mc":
        mc = dict(cfg.get("mc", {}))
        if args.kind:
            mc["kind"] = args.kind
        if args.replications is not None:
            mc["replications"] = args.replications
        if args.sizes:
            try:
                mc["sizes"] = [int(v) for v in args.sizes.split(",")]
            except ValueError as exc:
                raise InputError(f"--sizes: {exc}") from exc
        cfg["mc"] = mc
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise InputError(f"invalid config at {where}: {exc.message}") from None
    return cfg


def _output_dir(args, cfg) -> Path:
    out = args.output_dir or cfg.get("output_dir") or os.environ.get("VOLQML_OUTPUT_DIR") or "."
    return Path(out)


def _model(cfg) -> ModelSpec:
    if "model" not in cfg:
        raise InputError("a model is required (config 'model' or --model)")
    return ModelSpec.from_dict(cfg["model"])


def _theta(model: ModelSpec, spec, what="theta") -> np.ndarray:
    if spec is None:
        raise InputError(f"{what} is required")
    if isinstance(spec, dict):
        unknown = set(spec) - set(model.names)
        missing = [k for k in model.names if k not in spec]
        if unknown or missing:
            raise InputError(f"{what} keys must be exactly {model.names}")
        return np.array([spec[k] for k in model.names], dtype=float)
    return np.array(spec, dtype=float)


def _innovation(cfg) -> InnovationSpec:
    return InnovationSpec.from_dict(cfg.get("innovation", {}))


def _region(model, cfg) -> CompactRegion:
    r = cfg.get("region", {})
    return CompactRegion.default(model, beta_cap=r.get("beta_cap", 0.999), lower=r.get("lower"), upper=r.get("upper"))


def _config_without_output(cfg) -> dict:
    return {k: v for k, v in cfg.items() if k != "output_dir"}


def _read_data(cfg):
    from volqml.io import read_series

    if "input" not in cfg:
        raise InputError("an input CSV is required (config 'input' or --input)")
    return read_series(cfg["input"], cfg.get("column", "X"))


def cmd_simulate(cfg, out: Path) -> int:
    model = _model(cfg)
    theta = check_theta(model, _theta(model, cfg.get("theta")))
    seed = cfg.get("seed", 0)
    n = cfg.get("n", 1000)
    burn = cfg.get("burn_in", 1000)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        path = simulate_stationary(model, theta, _innovation(cfg), RngStream(seed, cfg.get("stream", 0)), n, burn)
    prov = provenance(_config_without_output(cfg), seed)
    rows = zip(range(1, n + 1), path.x, path.sigma2, path.z)
    write_csv(out / "path.csv", ["t", "X", "sigma2", "Z"], rows, prov)
    print(f"simulated {n} observations after {burn} burn-in steps; start-value gap {path.certificate_gap:.3g}")
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return EXIT_OK


def cmd_filter(cfg, out: Path) -> int:
    model = _model(cfg)
    theta = _theta(model, cfg.get("theta"))
    data = _read_data(cfg)
    if data.size < model.p:
        raise InputError(f"need at least p = {model.p} pre-sample observations, got {data.size}")
    fcfg = cfg.get("filter", {})
    order = fcfg.get("order", 0)
    config = FilterConfig(init=fcfg.get("init"), warmup_skip=fcfg.get("warmup_skip", 0))
    res = run_filter(model, theta, data, config, order=order, region=_region(model, cfg))
    names, table = res.table()
    prov = provenance(_config_without_output(cfg), cfg.get("seed"))
    write_csv(out / "filter.csv", names, [[int(r[0])] + list(r[1:]) for r in table], prov)
    print(f"filtered {res.n} observations (order {order}, clamp events {res.clamps}, "
          f"hessian asymmetry {res.symmetry_error():.3g})")
    return EXIT_OK


def cmd_fit(cfg, out: Path) -> int:
    model = _model(cfg)
    data = _read_data(cfg)
    fcfg = cfg.get("fit", {})
    options = FitOptions(
        gtol=fcfg.get("gtol", 1e-8), steptol=fcfg.get("steptol", 1e-10), maxiter=fcfg.get("maxiter", 500),
        n_starts=fcfg.get("n_starts", 5), hessian=fcfg.get("hessian", "exact"), frozen=fcfg.get("frozen", {}),
        threads=cfg.get("threads", 1),
        config=FilterConfig(init=cfg.get("filter", {}).get("init"),
                            warmup_skip=cfg.get("filter", {}).get("warmup_skip", 0)),
    )
    init = _theta(model, fcfg["init"], "fit.init") if "init" in fcfg else None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = fit(model, data, _region(model, cfg), init, options)
    prov = provenance(_config_without_output(cfg), cfg.get("seed"))
    write_json(out / "estimate.json", report.to_dict(), prov)
    skip = options.config.warmup_skip
    rows = zip(range(1 + skip, 1 + skip + report.residuals.size), report.residuals)
    write_csv(out / "residuals.csv", ["t", "residual"], rows, prov)
    width = max(len(n) for n in model.names)
    print(f"loglik {report.loglik:.10g}  converged {report.converged}  n {report.n}")
    for name, v, se in zip(model.names, report.theta_hat.values, report.std_errors):
        print(f"  {name:<{width}}  {v: .8g}  (se {se:.3g})")
    for note in report.warnings:
        print(f"warning: {note}", file=sys.stderr)
    return EXIT_OK


def diagnose(model: ModelSpec, theta, innovation: InnovationSpec, seed: int, opts: dict) -> dict:
    """Structured diagnostics report for one parameter point."""
    stream = RngStream(seed, 0)
    if model.family == "egarch":
        theta = check_theta(model, theta)
        diag = egarch_invertibility_check(theta, innovation, stream, opts.get("n_samples", 100_000))
        return {"invertibility": diag.to_dict()}
    theta = check_theta(model, theta, beta_cap=False)
    report = {}
    beta = theta[model.beta_slice]
    lyap = lyapunov_agarch(model, theta, innovation, stream, opts.get("n_products", 10_000),
                           opts.get("n_replications", 50), opts.get("norm", "frobenius"))
    report["lyapunov"] = lyap.to_dict()
    margin = weak_stationarity_margin(model, theta, innovation)
    report["weak_stationarity"] = {"margin": margin, "verdict": "finite variance" if margin > 0 else "infinite variance"}
    if beta.sum() < 1:
        best, diags = scan_contraction(model, theta)
        report["contraction"] = {"best": best.to_dict(), "scan": [d.to_dict() for d in diags],
                                 "note": "r chosen as the best of 1, 2, 4, ..., 64 (heuristic)"}
    if beta.size:
        radius, bound = spectral_radius_C(beta)
        report["spectral_radius"] = {"radius": radius, "bound": bound, "holds": radius <= bound * (1 + 1e-12)}
    return report


def cmd_diagnose(cfg, out: Path) -> int:
    model = _model(cfg)
    theta = _theta(model, cfg.get("theta"))
    seed = cfg.get("seed", 0)
    report = diagnose(model, theta, _innovation(cfg), seed, cfg.get("diagnose", {}))
    write_json(out / "diagnose.json", report, provenance(_config_without_output(cfg), seed))
    for section, body in report.items():
        if "verdict" in body:
            print(f"{section:<20} {body.get('estimate', body.get('margin', float('nan'))): .6g}  {body['verdict']}")
        elif "best" in body:
            b = body["best"]
            print(f"{section:<20} {b['estimate']: .6g}  r={b['r']}  {b['verdict']}")
        elif "radius" in body:
            print(f"{section:<20} {body['radius']: .6g}  bound {body['bound']:.6g}")
    return EXIT_OK


def cmd_mc(cfg, out: Path) -> int:
    model = _model(cfg)
    mc = cfg.get("mc")
    if not mc:
        raise InputError("an mc section with a kind is required")
    plan = ExperimentPlan(
        kind=mc["kind"], model=model, theta_true=tuple(_theta(model, cfg.get("theta"), "theta")),
        innovation=_innovation(cfg), sizes=tuple(mc.get("sizes", (500, 2000, 8000))),
        replications=mc.get("replications", 100), seed=cfg.get("seed", 0), output_dir=str(out),
        burn_in=cfg.get("burn_in", 1000), threads=cfg.get("threads", 1), n_starts=mc.get("n_starts", 5),
        hessian=mc.get("hessian", "exact"), options=mc.get("options", {}),
    )
    res = run_experiment(plan)
    for name, ok in res.checks.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    if not res.valid:
        print(f"experiment invalid: {len(res.failures)} of {len(res.rows)} fits failed", file=sys.stderr)
        return EXIT_FIT
    return EXIT_OK


HANDLERS = {"simulate": cmd_simulate, "filter": cmd_filter, "fit": cmd_fit, "diagnose": cmd_diagnose, "mc": cmd_mc}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        out = _output_dir(args, cfg)
        out.mkdir(parents=True, exist_ok=True)
        return HANDLERS[args.command](cfg, out)
    except (InputError, ConstraintError, UnsupportedError, CovarianceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericError as exc:
        print(f"error: numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except FitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for entry in exc.log:
            print(f"  start {entry.get('start')}: {entry.get('error') or entry.get('message')}", file=sys.stderr)
        return EXIT_FIT


if __name__ == "__main__":
    sys.exit(main())
