"""Monte-Carlo experiments: consistency, coverage, filter decay, region scans
and initialization equivalence.

Replication ``r`` at size index ``i`` draws from stream id ``i * 1_000_000 + r``
of the plan's base seed, so results do not depend on execution order.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import eigh

from volqml.errors import ConstraintError, CovarianceError, VolqmlError
from volqml.filtering import FilterConfig, filter_error_decay
from volqml.innovations import InnovationSpec, RngStream
from volqml.io import provenance, write_csv, write_json
from volqml.models import ModelSpec, check_theta, weak_stationarity_margin
from volqml.qmle import FitOptions, fit
from volqml.sre import (
    egarch_invertibility_check,
    lyapunov_agarch,
    simulate_from,
    simulate_stationary,
)

__all__ = [
    "ExperimentPlan",
    "ExperimentResult",
    "aggregate_rows",
    "run_consistency",
    "run_coverage",
    "run_decay",
    "run_equivalence",
    "run_experiment",
    "run_region_scan",
]

KINDS = ("consistency", "coverage", "decay", "region-scan", "equivalence")
STREAM_BLOCK = 1_000_000
MAX_FAILURE_RATE = 0.05


@dataclass(frozen=True)
class ExperimentPlan:
    kind: str
    model: ModelSpec
    theta_true: tuple
    innovation: InnovationSpec = InnovationSpec()
    sizes: tuple = (500, 2000, 8000)
    replications: int = 100
    seed: int = 0
    output_dir: str | None = None
    burn_in: int = 1000
    threads: int = 1
    n_starts: int = 5
    hessian: str = "exact"
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConstraintError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if self.replications < 1:
            raise ConstraintError("replications must be >= 1")
        sizes = tuple(int(s) for s in self.sizes)
        if not sizes or any(b <= a for a, b in zip(sizes, sizes[1:])) or sizes[0] < 0:
            raise ConstraintError("sample sizes must be non-negative and strictly increasing")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "theta_true", tuple(float(v) for v in self.theta_true))
        if self.innovation.two_point and self.kind in ("consistency", "coverage", "equivalence"):
            raise ConstraintError("a two-point innovation law violates identifiability; estimation is refused")
        beta_cap = self.kind != "region-scan"
        check_theta(self.model, np.array(self.theta_true), beta_cap=beta_cap)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "model": self.model.to_dict(), "theta_true": list(self.theta_true),
            "innovation": self.innovation.to_dict(), "sizes": list(self.sizes),
            "replications": self.replications, "seed": self.seed, "burn_in": self.burn_in,
            "n_starts": self.n_starts, "hessian": self.hessian, "options": self.options,
        }

    def stream(self, size_idx: int, rep: int) -> RngStream:
        return RngStream(self.seed, size_idx * STREAM_BLOCK + rep)

    def fit_options(self) -> FitOptions:
        return FitOptions(n_starts=self.n_starts, hessian=self.hessian, diagnostics=False)


@dataclass
class ExperimentResult:
    plan: ExperimentPlan
    columns: list[str]
    rows: list[dict]
    aggregate_columns: list[str]
    aggregate: list[dict]
    checks: dict
    valid: bool = True
    failures: list[dict] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.valid and all(self.checks.values())

    def write(self, output_dir=None) -> list[Path]:
        out = Path(output_dir or self.plan.output_dir or ".")
        paths = [
            write_csv(out / "rows.csv", self.columns, self.rows, self.provenance),
            write_csv(out / "aggregate.csv", self.aggregate_columns, self.aggregate, self.provenance),
            write_json(out / "plan.json", {"plan": self.plan.to_dict(), "checks": self.checks,
                                           "valid": self.valid, "failures": self.failures}, self.provenance),
        ]
        return paths


def _map(plan: ExperimentPlan, func, jobs):
    if plan.threads > 1:
        with ThreadPoolExecutor(plan.threads) as pool:
            return list(pool.map(func, jobs))
    return [func(j) for j in jobs]


def _gate(plan: ExperimentPlan):
    """Refuse parameters that fail the stationarity / invertibility diagnostics."""
    model, theta = plan.model, np.array(plan.theta_true)
    if model.family == "egarch":
        diag = egarch_invertibility_check(theta, plan.innovation, RngStream(plan.seed, 2**63), n_samples=20_000)
        if not diag.contractive:
            raise ConstraintError(f"theta_true is not certified invertible (estimate {diag.log_lambda_mean:.4g})")
        return
    est = lyapunov_agarch(model, theta, plan.innovation, RngStream(plan.seed, 2**63), 2000, 10)
    if est.verdict != "stationary":
        raise ConstraintError(f"theta_true is not certified stationary (Lyapunov estimate {est.rho_hat:.4g})")


def _fit_job(plan: ExperimentPlan, size_idx: int, rep: int, need_cov: bool):
    n = plan.sizes[size_idx]
    theta0 = np.array(plan.theta_true)
    row = {"size": n, "rep": rep, "stream": size_idx * STREAM_BLOCK + rep, "failed": 0, "error": ""}
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            path = simulate_stationary(plan.model, theta0, plan.innovation, plan.stream(size_idx, rep),
                                       n, plan.burn_in)
            rep_fit = fit(plan.model, path.data, options=plan.fit_options())
        row.update(rep_fit.flat_row())
        if need_cov:
            if rep_fit.V0 is None:
                raise CovarianceError("covariance unavailable")
            row["_V0"] = rep_fit.V0
    except (VolqmlError, np.linalg.LinAlgError) as exc:
        row["failed"] = 1
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def _fit_columns(model: ModelSpec) -> list[str]:
    return (["size", "rep", "stream"] + [f"theta_hat.{k}" for k in model.names]
            + [f"se.{k}" for k in model.names] + ["loglik", "converged", "n", "failed", "error"])


def aggregate_rows(plan: ExperimentPlan, rows: list[dict]) -> list[dict]:
    """Per size and coordinate: bias, RMSE and (when standard errors exist) coverage.

    A pure function of the rows, so emitted aggregates can be recomputed.
    """
    theta0 = np.array(plan.theta_true)
    out = []
    for n in plan.sizes:
        sub = [r for r in rows if r["size"] == n and not r["failed"]]
        n_failed = sum(1 for r in rows if r["size"] == n and r["failed"])
        for j, name in enumerate(plan.model.names):
            est = np.array([r[f"theta_hat.{name}"] for r in sub], dtype=float)
            se = np.array([r[f"se.{name}"] for r in sub], dtype=float)
            err = est - theta0[j]
            rec = {"size": n, "coordinate": name, "n_ok": len(sub), "n_failed": n_failed,
                   "bias": float(np.mean(err)) if sub else float("nan"),
                   "rmse": float(np.sqrt(np.mean(err * err))) if sub else float("nan")}
            if sub and np.all(np.isfinite(se)):
                rec["coverage"] = float(np.mean(np.abs(err) <= 1.959963984540054 * se))
            else:
                rec["coverage"] = float("nan")
            if sub and "z." + name in sub[0]:
                z = np.array([r["z." + name] for r in sub], dtype=float)
                rec["z_mean"] = float(np.mean(z))
                rec["z_var"] = float(np.var(z, ddof=1)) if z.size > 1 else float("nan")
            out.append(rec)
    return out


def _validity(plan, rows):
    failures = [{"size": r["size"], "rep": r["rep"], "error": r["error"]} for r in rows if r["failed"]]
    return len(failures) <= MAX_FAILURE_RATE * len(rows), failures


def _result(plan, columns, rows, agg_columns, agg, checks, valid=True, failures=()):
    clean = [{k: v for k, v in r.items() if not k.startswith("_")} for r in rows]
    res = ExperimentResult(plan, columns, clean, agg_columns, agg, checks, valid, list(failures),
                           provenance(plan.to_dict(), plan.seed))
    if plan.output_dir:
        res.write()
    return res


def run_consistency(plan: ExperimentPlan) -> ExperimentResult:
    """RMSE per coordinate over the size grid; checks monotone decrease (5% slack)."""
    _gate(plan)
    jobs = [(i, r) for i in range(len(plan.sizes)) for r in range(plan.replications)]
    rows = _map(plan, lambda j: _fit_job(plan, j[0], j[1], False), jobs)
    valid, failures = _validity(plan, rows)
    agg = aggregate_rows(plan, rows)
    checks = {}
    for name in plan.model.names:
        rmse = [a["rmse"] for a in agg if a["coordinate"] == name]
        checks[f"rmse_decreasing.{name}"] = all(b < 1.05 * a for a, b in zip(rmse, rmse[1:]))
        if len(rmse) > 1:
            checks[f"rmse_ratio.{name}"] = rmse[-1] / rmse[0] < plan.options.get("max_ratio", 0.5)
    cols = ["size", "coordinate", "n_ok", "n_failed", "bias", "rmse", "coverage"]
    return _result(plan, _fit_columns(plan.model), rows, cols, agg, checks, valid, failures)


def _inv_sqrt(V: np.ndarray) -> np.ndarray:
    w, U = eigh(0.5 * (V + V.T))
    if not np.all(w > 0):
        raise CovarianceError("V0-hat is not positive definite", w)
    return (U / np.sqrt(w)) @ U.T


def run_coverage(plan: ExperimentPlan) -> ExperimentResult:
    """95% interval coverage and standardized estimates sqrt(n) V0^{-1/2}(theta-hat - theta0)."""
    _gate(plan)
    theta0 = np.array(plan.theta_true)
    jobs = [(i, r) for i in range(len(plan.sizes)) for r in range(plan.replications)]

    def job(j):
        row = _fit_job(plan, j[0], j[1], True)
        if not row["failed"]:
            est = np.array([row[f"theta_hat.{k}"] for k in plan.model.names])
            try:
                z = math.sqrt(row["n"]) * (_inv_sqrt(row["_V0"]) @ (est - theta0))
            except CovarianceError as exc:
                row.update(failed=1, error=f"CovarianceError: {exc}")
                return row
            row.update({f"z.{k}": float(v) for k, v in zip(plan.model.names, z)})
        return row

    rows = _map(plan, job, jobs)
    valid, failures = _validity(plan, rows)
    agg = aggregate_rows(plan, rows)
    lo, hi = plan.options.get("coverage_band", (0.88, 0.99))
    checks = {}
    last = plan.sizes[-1]
    for a in agg:
        if a["size"] != last:
            continue
        name = a["coordinate"]
        checks[f"coverage.{name}"] = lo <= a["coverage"] <= hi
        checks[f"z_mean.{name}"] = abs(a["z_mean"]) < 0.15
        checks[f"z_var.{name}"] = 0.8 <= a["z_var"] <= 1.25
    cols = _fit_columns(plan.model)
    cols = cols[:-2] + [f"z.{k}" for k in plan.model.names] + cols[-2:]
    for r in rows:
        for k in plan.model.names:
            r.setdefault(f"z.{k}", float("nan"))
    agg_cols = ["size", "coordinate", "n_ok", "n_failed", "bias", "rmse", "coverage", "z_mean", "z_var"]
    return _result(plan, cols, rows, agg_cols, agg, checks, valid, failures)


def run_decay(plan: ExperimentPlan) -> ExperimentResult:
    """Filter error |h-hat_t(theta0) - sigma_t^2| from a mismatched start.

    ``options["init_offset"]`` (default 1e8; 1.0 in the log domain for EGARCH)
    is added to the true pre-window volatility state to form the filter start.
    The geometric rate is fitted per replication.
    """
    model = plan.model
    theta0 = np.array(plan.theta_true)
    egarch = model.family == "egarch"
    offset = float(plan.options.get("init_offset", 1.0 if egarch else 1e8))
    check_t = int(plan.options.get("check_t", 200))
    rows, agg = [], []
    for i, n in enumerate(plan.sizes):
        for r in range(plan.replications):
            path = simulate_stationary(model, theta0, plan.innovation, plan.stream(i, r), n, plan.burn_in)
            config = FilterConfig(init=path.state_pre + offset)
            rep = filter_error_decay(model, theta0, path, config)
            exact = filter_error_decay(model, theta0, path, FilterConfig(init=path.state_pre))
            for t, g in enumerate(rep.gap, start=1):
                rows.append({"size": n, "rep": r, "t": t, "gap": float(g), "gap_exact_init": float(exact.gap[t - 1])})
            gap_at = float(rep.gap[check_t - 1]) if n >= check_t else float("nan")
            agg.append({"size": n, "rep": r, "rate": rep.rate, "window": rep.window[1],
                        "gap_at_check": gap_at, "max_gap_exact_init": float(np.max(exact.gap, initial=0.0))})
    checks = {"exact_init_zero": all(a["max_gap_exact_init"] == 0.0 for a in agg)}
    if model.family == "garch" and model.p == 1 and model.q == 1:
        target = math.log(theta0[2])
        checks["rate_equals_log_beta"] = all(abs(a["rate"] - target) < 1e-9 for a in agg)
    if egarch:
        checks[f"gap_at_{check_t}_below_1e-10"] = all(a["gap_at_check"] < 1e-10 for a in agg)
    return _result(plan, ["size", "rep", "t", "gap", "gap_exact_init"], rows,
                   ["size", "rep", "rate", "window", "gap_at_check", "max_gap_exact_init"], agg, checks)


def run_region_scan(plan: ExperimentPlan) -> ExperimentResult:
    """Stationarity (or invertibility) verdicts on a grid of two coordinates.

    ``options["grid"]`` maps two coefficient names to lists of values; the
    remaining coordinates are taken from ``theta_true``. (A)GARCH points get a
    Lyapunov estimate and the second-moment margin; EGARCH points get the
    invertibility check.
    """
    model = plan.model
    grid = plan.options.get("grid")
    if not grid or len(grid) != 2:
        raise ConstraintError("region-scan needs options['grid'] with exactly two coordinates")
    (na, va), (nb, vb) = sorted(grid.items(), key=lambda kv: model.names.index(kv[0]))
    ia, ib = model.names.index(na), model.names.index(nb)
    n_products = int(plan.options.get("n_products", 2000))
    n_reps = int(plan.options.get("n_replications", 10))
    n_samples = int(plan.options.get("n_samples", 20_000))
    points = [(a, b) for a in va for b in vb]

    def job(k):
        a, b = points[k]
        th = np.array(plan.theta_true)
        th[ia], th[ib] = a, b
        row = {na: a, nb: b}
        stream = RngStream(plan.seed, k)
        if model.family == "egarch":
            d = egarch_invertibility_check(th, plan.innovation, stream, n_samples)
            row.update(estimate=d.log_lambda_mean, std_error=d.std_error, verdict=d.verdict, margin=float("nan"))
        else:
            e = lyapunov_agarch(model, th, plan.innovation, stream, n_products, n_reps)
            margin = weak_stationarity_margin(model, th, plan.innovation)
            row.update(estimate=e.rho_hat, std_error=e.std_error, verdict=e.verdict, margin=margin)
        return row

    rows = _map(plan, job, range(len(points)))
    checks = {}
    if model.family == "egarch":
        checks["delta_le_1_invertible"] = all(
            r["verdict"] == "invertible" for r in rows
            if plan.theta_true[1] == 0 and (r.get("delta", plan.theta_true[3]) <= 1))
    cols = [na, nb, "estimate", "std_error", "verdict", "margin"]
    agg = [{"points": len(rows), "negative": sum(1 for r in rows if r["estimate"] < 0)}]
    return _result(plan, cols, rows, ["points", "negative"], agg, checks)


def run_equivalence(plan: ExperimentPlan) -> ExperimentResult:
    """Fits on the burned-in path X and on X-tilde started fresh at the window.

    Both series share the innovations of the window; X-tilde starts from
    ``options["init"]`` with no burn-in. The default start is the unconditional
    variance when it exists, else alpha0/(1 - sum beta); for EGARCH
    alpha/(1 - beta). Checks the largest per-coordinate gap at
    the largest size against ``options["tolerance"]`` (default 1e-4).
    """
    _gate(plan)
    model = plan.model
    theta0 = np.array(plan.theta_true)
    tol = float(plan.options.get("tolerance", 1e-4))
    k = model.k
    if model.family == "egarch":
        default = theta0[0] / (1.0 - theta0[1])
    else:
        margin = weak_stationarity_margin(model, theta0, plan.innovation)
        denom = margin if margin > 0 else 1.0 - theta0[model.beta_slice].sum()
        default = theta0[0] / denom
    init_tilde = plan.options.get("init", default)
    jobs = [(i, r) for i in range(len(plan.sizes)) for r in range(plan.replications)]

    def job(j):
        i, r = j
        n = plan.sizes[i]
        row = {"size": n, "rep": r, "failed": 0, "error": ""}
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                path = simulate_stationary(model, theta0, plan.innovation, plan.stream(i, r), n, plan.burn_in)
                z_ext = path.meta["z_ext"]
                x_t, _ = simulate_from(model, theta0, z_ext[plan.burn_in:], init_tilde)
                data_tilde = x_t[k - model.p:]
                f1 = fit(model, path.data, options=plan.fit_options())
                f2 = fit(model, data_tilde, options=plan.fit_options())
            gap = np.abs(f1.theta_hat.values - f2.theta_hat.values)
            row.update({f"gap.{nm}": float(g) for nm, g in zip(model.names, gap)})
            row["max_gap"] = float(gap.max())
        except (VolqmlError, np.linalg.LinAlgError) as exc:
            row.update(failed=1, error=f"{type(exc).__name__}: {exc}", max_gap=float("nan"))
        return row

    rows = _map(plan, job, jobs)
    valid, failures = _validity(plan, rows)
    agg = []
    for n in plan.sizes:
        gaps = [r["max_gap"] for r in rows if r["size"] == n and not r["failed"]]
        agg.append({"size": n, "max_gap": float(np.max(gaps)) if gaps else float("nan"),
                    "mean_gap": float(np.mean(gaps)) if gaps else float("nan")})
    checks = {"largest_size_gap_below_tolerance": bool(agg[-1]["max_gap"] < tol)}
    cols = ["size", "rep"] + [f"gap.{nm}" for nm in model.names] + ["max_gap", "failed", "error"]
    return _result(plan, cols, rows, ["size", "max_gap", "mean_gap"], agg, checks, valid, failures)


RUNNERS = {
    "consistency": run_consistency,
    "coverage": run_coverage,
    "decay": run_decay,
    "region-scan": run_region_scan,
    "equivalence": run_equivalence,
}


def run_experiment(plan: ExperimentPlan) -> ExperimentResult:
    return RUNNERS[plan.kind](plan)
