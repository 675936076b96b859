"""Volatility filter h-hat_t(theta) with analytic first and second derivatives.

Data convention: a series of length ``N`` whose first ``p`` entries are
pre-sample observations X_{-p+1}, ..., X_0; the remaining ``n = N - p``
entries are X_1, ..., X_n, one likelihood term each.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from volqml import _kernels
from volqml.errors import ConstraintError, NumericError
from volqml.models import (
    CompactRegion,
    ModelSpec,
    check_theta,
    d2g,
    dg_ds,
    dg_dtheta,
    eval_g,
)

__all__ = [
    "DecayReport",
    "FilterConfig",
    "FilterOutput",
    "agarch_series_coefficients",
    "agarch_series_h",
    "filter_error_decay",
    "run_filter",
]


@dataclass(frozen=True)
class FilterConfig:
    """Filter initialization.

    ``init`` is h-hat_0, h-hat_-1, ... (a scalar is broadcast over the q lags).
    For EGARCH it is the log squared volatility log h-hat_0. ``None`` uses the
    sample variance of the data. ``lower`` is the clamp level for h-hat
    ((a)garch only); ``None`` takes the alpha0 lower bound of the default region.
    """

    init: object = None
    warmup_skip: int = 0
    lower: float | None = None

    def __post_init__(self):
        if self.warmup_skip < 0:
            raise ConstraintError("warmup_skip must be >= 0")
        if self.init is not None:
            arr = np.atleast_1d(np.asarray(self.init, dtype=float))
            if not np.all(np.isfinite(arr)):
                raise ConstraintError("filter initial value must be finite")


@dataclass
class FilterOutput:
    """Per-t filter values for t = 1..n.

    ``h`` is always in variance units. ``dh``/``d2h`` are derivatives of h.
    For EGARCH the log-domain quantities ``log_h``, ``dlog_h``, ``d2log_h``
    are the primary ones; the variance-unit arrays are derived from them.
    ``rel1 = h'/h`` and ``rel2 = h''/h`` are what the likelihood consumes.
    """

    model: ModelSpec
    order: int
    h: np.ndarray
    dh: np.ndarray | None = None
    d2h: np.ndarray | None = None
    log_h: np.ndarray | None = None
    dlog_h: np.ndarray | None = None
    d2log_h: np.ndarray | None = None
    clamps: int = 0
    init: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n(self) -> int:
        return self.h.size

    @property
    def rel1(self) -> np.ndarray:
        if self.model.family == "egarch":
            return self.dlog_h
        return self.dh / self.h[:, None]

    @property
    def rel2(self) -> np.ndarray:
        if self.model.family == "egarch":
            return self.d2log_h + self.dlog_h[:, :, None] * self.dlog_h[:, None, :]
        return self.d2h / self.h[:, None, None]

    def symmetry_error(self) -> float:
        if self.d2h is None or self.d2h.size == 0:
            return 0.0
        return float(np.max(np.abs(self.d2h - np.swapaxes(self.d2h, 1, 2))))

    def table(self) -> tuple[list[str], np.ndarray]:
        """Column names and a 2-D array for CSV export."""
        d = self.model.d
        names = ["t", "h"]
        cols = [np.arange(1, self.n + 1, dtype=float), self.h]
        if self.order >= 1:
            names += [f"dh_{i}" for i in range(1, d + 1)]
            cols += list(self.dh.T)
        if self.order >= 2:
            names += [f"d2h_{i}_{j}" for i in range(1, d + 1) for j in range(1, d + 1)]
            cols += list(self.d2h.reshape(self.n, d * d).T)
        return names, np.column_stack(cols) if self.n else np.zeros((0, len(names)))


def default_init(model: ModelSpec, data: np.ndarray) -> np.ndarray:
    obs = data[model.p:] if data.size > model.p else data
    var = float(np.var(obs)) if obs.size else 0.0
    if not var > 0:
        var = 1.0
    if model.family == "egarch":
        return np.array([math.log(var)])
    return np.full(model.q, var)


def resolve_init(model: ModelSpec, data: np.ndarray, config: FilterConfig) -> np.ndarray:
    if config.init is None:
        return default_init(model, data)
    arr = np.atleast_1d(np.asarray(config.init, dtype=float))
    size = 1 if model.family == "egarch" else model.q
    if arr.size == 1:
        arr = np.full(size, arr[0])
    if arr.size != size:
        raise ConstraintError(f"filter init needs {size} values, got {arr.size}")
    if model.family != "egarch" and np.any(arr < 0):
        raise ConstraintError("filter init must be >= 0")
    return arr


def _check_data(model: ModelSpec, data) -> np.ndarray:
    x = np.ascontiguousarray(np.asarray(data, dtype=float).reshape(-1))
    if x.size < model.p:
        raise ConstraintError(f"need at least p = {model.p} pre-sample observations, got {x.size}")
    if not np.all(np.isfinite(x)):
        bad = int(np.flatnonzero(~np.isfinite(x))[0])
        raise NumericError(f"observation {bad} is not finite", index=bad)
    return x


def run_filter(model: ModelSpec, theta, data, config: FilterConfig | None = None, order: int = 0,
               region: CompactRegion | None = None, engine: str = "compiled") -> FilterOutput:
    """Run the h-hat recursion (order 0), plus first (1) and second (2) derivatives.

    ``engine="reference"`` uses a slow pure-Python loop built from the
    :mod:`volqml.models` derivative functions; it exists as a cross-check.
    """
    if order not in (0, 1, 2):
        raise ConstraintError("order must be 0, 1 or 2")
    config = config or FilterConfig()
    theta = check_theta(model, theta, region)
    x = _check_data(model, data)
    init = resolve_init(model, x, config)
    if engine == "reference":
        return _reference_filter(model, theta, x, init, order, config, region)
    if engine != "compiled":
        raise ConstraintError(f"unknown filter engine {engine!r}")
    if model.family == "egarch":
        l, dl, d2l, bad = _kernels.egarch_filter(theta, x, init, order)
        if bad >= 0:
            raise NumericError(f"log-volatility filter left the finite range at t = {bad + 1}", index=bad + 1)
        h = np.exp(l)
        out = FilterOutput(model, order, h, log_h=l, init=init)
        if order >= 1:
            out.dlog_h = dl
            out.dh = h[:, None] * dl
        if order >= 2:
            out.d2log_h = d2l
            out.d2h = h[:, None, None] * (d2l + dl[:, :, None] * dl[:, None, :])
        return out
    lower = _lower(model, config, region)
    th = np.ascontiguousarray(model.to_agarch(theta))
    h, dh, d2h, clamps, bad = _kernels.agarch_filter(th, model.p, model.q, x, init, order, lower)
    if bad >= 0:
        raise NumericError(f"volatility filter produced a non-finite value at t = {bad + 1}", index=bad + 1)
    d = model.d
    out = FilterOutput(model, order, h, clamps=int(clamps), init=init)
    if order >= 1:
        out.dh = dh[:, :d]
    if order >= 2:
        out.d2h = d2h[:, :d, :d]
    return out


def _lower(model, config, region) -> float:
    if config.lower is not None:
        return float(config.lower)
    if region is not None:
        return region.g_lower(model)
    return float(CompactRegion.default(model).lower[0])


def _reference_filter(model, theta, x, init, order, config, region) -> FilterOutput:
    p, q, d = model.p, model.q, model.d
    n = x.size - p
    egarch = model.family == "egarch"
    lower = -np.inf if egarch else _lower(model, config, region)
    # lag buffers, most recent first
    s_lags = [float(v) for v in init]
    ds_lags = [np.zeros(d) for _ in range(len(init))]
    d2s_lags = [np.zeros((d, d)) for _ in range(len(init))]
    h = np.empty(n)
    dh = np.empty((n, d))
    d2h = np.empty((n, d, d))
    clamps = 0
    for t in range(n):
        xl = x[p + t - 1::-1][:p] if p else np.zeros(0)
        sl = np.array(s_lags)
        v = eval_g(model, theta, xl, sl)
        if not math.isfinite(v):
            raise NumericError(f"non-finite value at t = {t + 1}", index=t + 1)
        if v < lower:
            v = lower
            clamps += 1
        h[t] = v
        if order >= 1:
            gs = dg_ds(model, theta, xl, sl)
            dh[t] = dg_dtheta(model, theta, xl, sl) + sum(gs[j] * ds_lags[j] for j in range(len(gs)))
        if order >= 2:
            J = np.vstack([np.eye(d)] + [ds_lags[j][None, :] for j in range(len(gs))])
            d2h[t] = J.T @ d2g(model, theta, xl, sl) @ J + sum(gs[j] * d2s_lags[j] for j in range(len(gs)))
        if len(s_lags):
            s_lags = [v] + s_lags[:-1]
            if order >= 1:
                ds_lags = [dh[t].copy()] + ds_lags[:-1]
            if order >= 2:
                d2s_lags = [d2h[t].copy()] + d2s_lags[:-1]
    if egarch:
        hv = np.exp(h)
        out = FilterOutput(model, order, hv, log_h=h, init=init)
        if order >= 1:
            out.dlog_h, out.dh = dh, hv[:, None] * dh
        if order >= 2:
            out.d2log_h = d2h
            out.d2h = hv[:, None, None] * (d2h + dh[:, :, None] * dh[:, None, :])
        return out
    return FilterOutput(model, order, h, dh if order >= 1 else None, d2h if order >= 2 else None,
                        clamps=clamps, init=init)


def agarch_series_coefficients(model: ModelSpec, theta, L: int) -> tuple[float, np.ndarray]:
    """Intercept xi_0 = alpha0 / (1 - sum beta) and coefficients xi_1..xi_L.

    xi_l are the power-series coefficients of a(z)/b(z) with
    a(z) = sum alpha_i z^i and b(z) = 1 - sum beta_j z^j.
    """
    if model.family == "egarch":
        raise ConstraintError("the series representation applies to (a)garch models")
    th = model.to_agarch(check_theta(model, theta))
    p, q = model.p, model.q
    alpha, beta = th[1:1 + p], th[1 + p:1 + p + q]
    c = np.zeros(L + 1)
    for ell in range(1, L + 1):
        acc = alpha[ell - 1] if ell <= p else 0.0
        for j in range(1, min(ell, q) + 1):
            acc += beta[j - 1] * c[ell - j]
        c[ell] = acc
    return float(th[0] / (1.0 - beta.sum())), c[1:]


@dataclass(frozen=True)
class SeriesInfo:
    xi0: float
    xi: np.ndarray
    tail_bound: float
    n_truncated: int


def agarch_series_h(model: ModelSpec, theta, data, L: int, return_info: bool = False):
    """Stationary h_t(theta) from the truncated series in past observations.

    Terms reaching before the start of the data are dropped; ``n_truncated``
    counts the affected t. ``tail_bound`` bounds the neglected part for the
    remaining t by max_t u_t * sum_{l > L} xi_l (exact tail sum of the series).
    """
    if L < 1:
        raise ConstraintError("truncation L must be >= 1")
    x = _check_data(model, data)
    p = model.p
    th = model.to_agarch(check_theta(model, theta))
    xi0, xi = agarch_series_coefficients(model, theta, L)
    u = (np.abs(x) - th[-1] * x) ** 2
    n = x.size - p
    h = np.full(n, xi0)
    for t in range(1, n + 1):
        # X_{t-l} sits at index p - 1 + t - l
        top = p - 1 + t
        m = min(L, top)
        h[t - 1] = xi0 + float(np.dot(xi[:m], u[top - m:top][::-1]))
    if not return_info:
        return h
    beta_sum = th[1 + p:1 + p + model.q].sum()
    total = th[1:1 + p].sum() / (1.0 - beta_sum)
    tail = float(np.max(u, initial=0.0) * max(total - xi.sum(), 0.0))
    n_trunc = int(sum(1 for t in range(1, n + 1) if p - 1 + t < L))
    return h, SeriesInfo(xi0, xi, tail, n_trunc)


@dataclass(frozen=True)
class DecayReport:
    gap: np.ndarray
    rate: float
    window: tuple[int, int]


def filter_error_decay(model: ModelSpec, theta_true, path, config: FilterConfig | None = None,
                       floor: float = 1e-12, rel_floor: float = 1e-6) -> DecayReport:
    """Gap |h-hat_t(theta_0) - sigma_t^2| and its fitted geometric log-rate.

    The slope of log(gap) against t is fitted by least squares over the initial
    run of t where gap exceeds both ``floor`` and ``rel_floor * sigma_t^2``;
    below that level the gap is dominated by rounding.
    """
    out = run_filter(model, theta_true, path.data, config, order=0)
    gap = np.abs(out.h - path.sigma2)
    ok = (gap > floor) & (gap > rel_floor * path.sigma2)
    stop = int(np.argmin(ok)) if not ok.all() else gap.size
    if stop < 2:
        return DecayReport(gap, float("nan"), (0, stop))
    t = np.arange(1, stop + 1, dtype=float)
    slope = np.polyfit(t, np.log(gap[:stop]), 1)[0]
    return DecayReport(gap, float(slope), (0, stop))
