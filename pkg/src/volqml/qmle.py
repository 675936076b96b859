"""Quasi-maximum-likelihood fitting, asymptotic covariance and residuals."""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from volqml.errors import ConstraintError, CovarianceError, FitError, NumericError, VolqmlError
from volqml.filtering import FilterConfig, run_filter
from volqml.innovations import InnovationSpec, RngStream
from volqml.likelihood import evaluate, information_pieces
from volqml.models import CompactRegion, ModelSpec, ThetaVector, check_theta
from volqml.optimize import minimize
from volqml.sre import egarch_invertibility_check, scan_contraction

__all__ = [
    "EstimateReport",
    "FitOptions",
    "covariance",
    "default_starts",
    "fit",
    "residuals",
]


@dataclass(frozen=True)
class FitOptions:
    """Optimizer settings.

    ``frozen`` maps coefficient names to fixed values; those coordinates are
    removed from the optimization. ``n_starts`` deterministic starting points
    are used when no start is given. ``hessian`` is "exact" or "bfgs".
    """

    gtol: float = 1e-8
    steptol: float = 1e-10
    maxiter: int = 500
    n_starts: int = 5
    hessian: str = "exact"
    frozen: dict = field(default_factory=dict)
    threads: int = 1
    diagnostics: bool = True
    config: FilterConfig = field(default_factory=FilterConfig)

    def __post_init__(self):
        if self.hessian not in ("exact", "bfgs"):
            raise ConstraintError("hessian must be 'exact' or 'bfgs'")
        if self.n_starts < 1:
            raise ConstraintError("n_starts must be >= 1")


@dataclass
class EstimateReport:
    model: ModelSpec
    theta_hat: ThetaVector
    loglik: float
    n: int
    V0: np.ndarray | None
    vcov: np.ndarray | None
    std_errors: np.ndarray
    residuals: np.ndarray
    converged: bool
    iterations: int
    active_constraints: list[str]
    diagnostics: dict
    starts: list[dict]
    warnings: list[str] = field(default_factory=list)
    std_errors_reliable: bool = True

    def to_dict(self) -> dict:
        names = self.model.names
        out = {
            "model": self.model.to_dict(),
            "n": self.n,
            "loglik": self.loglik,
            "converged": self.converged,
            "iterations": self.iterations,
            "theta_hat": dict(zip(names, self.theta_hat.values.tolist())),
            "se": dict(zip(names, [None if not math.isfinite(v) else v for v in self.std_errors.tolist()])),
            "std_errors_reliable": self.std_errors_reliable,
            "V0": None if self.V0 is None else self.V0.tolist(),
            "active_constraints": self.active_constraints,
            "diagnostics": self.diagnostics,
            "starts": self.starts,
            "warnings": self.warnings,
        }
        return out

    def flat_row(self) -> dict:
        row = {f"theta_hat.{k}": v for k, v in zip(self.model.names, self.theta_hat.values.tolist())}
        row.update({f"se.{k}": v for k, v in zip(self.model.names, self.std_errors.tolist())})
        row.update({"loglik": self.loglik, "converged": int(self.converged), "n": self.n})
        return row


def default_starts(model: ModelSpec, data, region: CompactRegion, count: int = 5) -> list[np.ndarray]:
    """Deterministic starting points; the first is the moment-style auto start.

    (A)GARCH: alpha0 = 0.1 var(X) * c, alpha spread to sum a, beta spread to
    sum b, gamma = g over a fixed table of (a, b, g, c). EGARCH analogously in
    the log domain. Points are projected into the region.
    """
    x = np.asarray(data, dtype=float)[model.p:]
    var = float(np.var(x)) if x.size else 1.0
    var = var if var > 0 else 1.0
    pts = []
    if model.family == "egarch":
        table = [(0.5, 0.0, 0.1), (0.8, 0.0, 0.2), (0.3, 0.0, 0.3), (0.9, -0.05, 0.1), (0.6, 0.05, 0.4)]
        for beta, gamma, delta in table[:count]:
            pts.append(np.array([math.log(var) * (1.0 - beta), beta, gamma, delta]))
    else:
        p, q = model.p, model.q
        table = [(0.1, 0.5, 0.0, 1.0), (0.05, 0.8, 0.1, 1.0), (0.2, 0.3, -0.1, 2.0), (0.15, 0.65, 0.2, 0.5),
                 (0.3, 0.1, -0.2, 3.0)]
        for a, bsum, gam, c in table[:count]:
            th = [0.1 * var * c]
            th += [a / p] * p if p else []
            th += [bsum / q] * q if q else []
            if model.family == "agarch":
                th.append(gam)
            pts.append(np.array(th, dtype=float))
    return [region.project(pt) for pt in pts]


def _names_to_index(model: ModelSpec, frozen: dict) -> dict[int, float]:
    idx = {}
    for name, value in frozen.items():
        if name not in model.names:
            raise ConstraintError(f"cannot freeze unknown coefficient {name!r}")
        idx[model.names.index(name)] = float(value)
    return idx


def _region_for_free(region: CompactRegion, free: np.ndarray, fixed: dict[int, float]):
    d = region.d
    xfix = np.zeros(d)
    for i, v in fixed.items():
        xfix[i] = v
    A = region.A[:, free]
    b = region.b - region.A @ xfix
    return region.lower[free], region.upper[free], A, b


def _single_start(model, data, region, options, start, free, fixed):
    d = model.d
    config = options.config

    def full(z):
        th = np.empty(d)
        th[free] = z
        for i, v in fixed.items():
            th[i] = v
        return th

    n_terms = max(np.asarray(data).size - model.p - config.warmup_skip, 1)

    def objective(z, order):
        lv = evaluate(model, full(z), data, config, order=order)
        f = -lv.loglik / n_terms
        g = None if lv.score is None else -lv.score[free] / n_terms
        H = None if lv.hessian is None else -lv.hessian[np.ix_(free, free)] / n_terms
        return f, g, H

    lo, hi, A, b = _region_for_free(region, free, fixed)
    z0 = start[free]
    f0 = objective(z0, 0)[0]
    res = minimize(objective, z0, lo, hi, A, b, gtol=options.gtol, steptol=options.steptol,
                   maxiter=options.maxiter, hessian=options.hessian)
    return res, full(res.x), -f0 * n_terms, -res.fun * n_terms


def _active_names(model, region, theta, free, tol=1e-9) -> list[str]:
    names = model.names
    out = []
    for i in free:
        span = 1.0 + abs(theta[i])
        if theta[i] - region.lower[i] <= tol * span:
            out.append(f"{names[i]}>=lower")
        elif region.upper[i] - theta[i] <= tol * span:
            out.append(f"{names[i]}<=upper")
    for k, (a, rhs) in enumerate(zip(region.A, region.b)):
        if rhs - a @ theta <= tol * (1.0 + abs(rhs)):
            terms = [f"{'+' if c > 0 else '-'}{names[i]}" for i, c in enumerate(a) if c != 0]
            out.append("".join(terms).lstrip("+") + f"<={rhs:g}")
    return out


def fit(model: ModelSpec, data, region: CompactRegion | None = None, init=None,
        options: FitOptions | None = None) -> EstimateReport:
    """Maximize the quasi-likelihood over the region.

    ``init`` is a coefficient vector or ``None``/"auto" for the deterministic
    multi-start. The best start (highest likelihood) is reported; the per-start
    table is kept in ``starts``. Raises :class:`FitError` if every start fails.
    """
    options = options or FitOptions()
    region = region or CompactRegion.default(model)
    if region.d != model.d:
        raise ConstraintError("region dimension does not match the model")
    data = np.asarray(data, dtype=float).reshape(-1)
    n_obs = data.size - model.p
    if n_obs < max(model.p, model.q) + 10 * model.d:
        raise ConstraintError(f"need at least {max(model.p, model.q) + 10 * model.d} observations to fit, got {n_obs}")
    fixed = _names_to_index(model, options.frozen)
    free = np.array([i for i in range(model.d) if i not in fixed], dtype=int)
    if init is None or (isinstance(init, str) and init == "auto"):
        starts = default_starts(model, data, region, options.n_starts)
    else:
        start = np.asarray(init.values if isinstance(init, ThetaVector) else init, dtype=float)
        if start.shape != (model.d,):
            raise ConstraintError(f"start needs {model.d} coefficients")
        starts = [region.project(start)]
    for i, v in fixed.items():
        for s in starts:
            s[i] = v
    starts = [region.project(s) for s in starts]
    for s in starts:
        # re-pin frozen values that projection may have moved
        for i, v in fixed.items():
            if s[i] != v:
                raise ConstraintError(f"frozen value {model.names[i]}={v} lies outside the region")

    def run(k):
        try:
            res, theta, l0, l1 = _single_start(model, data, region, options, starts[k], free, fixed)
            return {"start": k, "theta_start": starts[k].tolist(), "loglik_start": l0, "theta": theta,
                    "loglik": l1, "converged": bool(res.converged), "iterations": res.iterations,
                    "message": res.message, "pg_norm": res.pg_norm, "error": None}
        except (VolqmlError, np.linalg.LinAlgError, FloatingPointError) as exc:
            return {"start": k, "theta_start": starts[k].tolist(), "error": f"{type(exc).__name__}: {exc}"}

    if options.threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(options.threads) as pool:
            log = list(pool.map(run, range(len(starts))))
    else:
        log = [run(k) for k in range(len(starts))]
    ok = [e for e in log if e["error"] is None and math.isfinite(e["loglik"])]
    if not ok:
        raise FitError("every optimizer start failed", [{k: v for k, v in e.items() if k != "theta"} for e in log])
    best = max(ok, key=lambda e: (e["loglik"], -e["start"]))
    theta = np.minimum(np.maximum(best["theta"], region.lower), region.upper)
    notes = []
    active = _active_names(model, region, theta, free)
    reliable = True
    if active:
        reliable = False
        notes.append("estimate lies on the region boundary (" + ", ".join(active)
                     + "); standard errors assume an interior parameter and are unreliable")
    if not best["converged"]:
        notes.append(f"optimizer did not meet the convergence tolerance: {best['message']}")
    theta_vec = ThetaVector(model, theta)
    config = options.config
    try:
        V0, se = covariance(model, theta, data, config)
        vcov = V0 / _n_terms(model, data, config)
    except CovarianceError as exc:
        V0 = vcov = None
        se = np.full(model.d, np.nan)
        reliable = False
        notes.append(f"covariance unavailable: {exc}")
    if fixed:
        se = se.copy()
        se[list(fixed)] = 0.0
    resid = residuals(model, theta, data, config)
    diagnostics = _diagnose(model, theta) if options.diagnostics else {}
    for note in notes:
        warnings.warn(note, RuntimeWarning, stacklevel=2)
    table = [{k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in e.items()} for e in log]
    return EstimateReport(model, theta_vec, float(best["loglik"]), _n_terms(model, data, config), V0, vcov, se,
                          resid, bool(best["converged"]), int(best["iterations"]), active, diagnostics, table,
                          notes, reliable)


def _n_terms(model, data, config) -> int:
    return max(np.asarray(data).size - model.p - config.warmup_skip, 0)


def _diagnose(model: ModelSpec, theta: np.ndarray) -> dict:
    if model.family == "egarch":
        diag = egarch_invertibility_check(theta, InnovationSpec(), RngStream(0, 0), n_samples=100_000)
        return {"invertibility": diag.to_dict()}
    best, _ = scan_contraction(model, theta)
    return {"contraction": best.to_dict()}


def covariance(model: ModelSpec, theta_hat, data, config: FilterConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """V0-hat = kurt-hat * M-hat^{-1} and standard errors sqrt(diag(V0-hat) / n).

    The sandwich B^{-1} S B^{-1} with B = -M/2 and S = kurt M / 4 carries no
    leading 1/4; see the decisions ledger.
    """
    config = config or FilterConfig()
    M, kurt = information_pieces(model, theta_hat, data, config)
    V0 = kurt * np.linalg.inv(M)
    V0 = 0.5 * (V0 + V0.T)
    n = _n_terms(model, data, config)
    se = np.sqrt(np.maximum(np.diag(V0), 0.0) / n)
    return V0, se


def residuals(model: ModelSpec, theta_hat, data, config: FilterConfig | None = None) -> np.ndarray:
    """Z-hat_t = X_t / sqrt(h-hat_t(theta-hat)) for the likelihood terms."""
    config = config or FilterConfig()
    out = run_filter(model, theta_hat, data, config, order=0)
    x = np.asarray(data, dtype=float).reshape(-1)[model.p:]
    skip = min(config.warmup_skip, x.size)
    return x[skip:] / np.sqrt(out.h[skip:])
