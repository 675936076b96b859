"""Volatility model families, their parameter regions and derivatives of g.

Coefficient layouts (canonical order, used everywhere including config files):

* ``garch(p, q)``:  (alpha0, alpha_1..alpha_p, beta_1..beta_q)
* ``agarch(p, q)``: (alpha0, alpha_1..alpha_p, beta_1..beta_q, gamma)
* ``egarch(1, 1)``: (alpha, beta, gamma, delta)

For the (A)GARCH families ``g`` maps lagged observations ``x`` (most recent
first) and lagged squared volatilities ``s`` to the next squared volatility.
EGARCH is handled in the log domain: ``s`` holds the lagged *log* squared
volatility and ``g`` returns the next log squared volatility.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from volqml.errors import ConstraintError
from volqml.innovations import InnovationSpec, RngStream, moment_z_abs_z

__all__ = [
    "CompactRegion",
    "ModelSpec",
    "ThetaVector",
    "check_theta",
    "d2g",
    "dg_ds",
    "dg_dtheta",
    "eval_g",
    "weak_stationarity_margin",
]

FAMILIES = ("garch", "agarch", "egarch")


@dataclass(frozen=True)
class ModelSpec:
    family: str
    p: int = 1
    q: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConstraintError(f"unknown model family {self.family!r}; expected one of {FAMILIES}")
        if self.p < 0 or self.q < 0:
            raise ConstraintError("orders p and q must be non-negative")
        if self.family == "egarch" and (self.p, self.q) != (1, 1):
            raise ConstraintError("egarch is supported with p = q = 1 only")

    @property
    def d(self) -> int:
        if self.family == "egarch":
            return 4
        return 1 + self.p + self.q + (self.family == "agarch")

    @property
    def k(self) -> int:
        """Dimension of the volatility state used for simulation."""
        return max(self.p, self.q, 1)

    @property
    def names(self) -> list[str]:
        if self.family == "egarch":
            return ["alpha", "beta", "gamma", "delta"]
        names = ["alpha0"]
        names += [f"alpha{i}" for i in range(1, self.p + 1)]
        names += [f"beta{j}" for j in range(1, self.q + 1)]
        if self.family == "agarch":
            names.append("gamma")
        return names

    @property
    def beta_slice(self) -> slice:
        if self.family == "egarch":
            return slice(1, 2)
        return slice(1 + self.p, 1 + self.p + self.q)

    def to_agarch(self, theta) -> np.ndarray:
        """Embed a garch coefficient vector into the agarch layout (gamma = 0)."""
        theta = _values(theta)
        if self.family == "garch":
            return np.append(theta, 0.0)
        if self.family == "agarch":
            return theta
        raise ConstraintError("egarch has no agarch embedding")

    def to_dict(self) -> dict:
        return {"family": self.family, "p": self.p, "q": self.q}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(d["family"], int(d.get("p", 1)), int(d.get("q", 1)))


def _values(theta) -> np.ndarray:
    if isinstance(theta, ThetaVector):
        return theta.values
    return np.asarray(theta, dtype=float)


@dataclass(frozen=True)
class CompactRegion:
    """Parameter box plus linear caps ``A @ theta <= b``.

    For (A)GARCH the only linear cap is sum(beta) <= beta_cap; for EGARCH the
    caps encode delta >= |gamma|. ``lower``/``upper`` are per-coordinate bounds.
    """

    lower: np.ndarray
    upper: np.ndarray
    A: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    b: np.ndarray = field(default_factory=lambda: np.zeros(0))
    beta_cap: float = 0.999

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        A = np.asarray(self.A, dtype=float).reshape(-1, lower.size) if np.size(self.A) else np.zeros((0, lower.size))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        if lower.shape != upper.shape or np.any(lower > upper):
            raise ConstraintError("region needs lower <= upper per coordinate")
        if A.shape[0] != b.size:
            raise ConstraintError("linear cap rows and right-hand sides differ in number")
        if not self.beta_cap < 1:
            raise ConstraintError("beta cap must be < 1")

    @classmethod
    def default(cls, model: ModelSpec, beta_cap: float = 0.999, alpha0_lower: float = 1e-8,
                lower=None, upper=None) -> "CompactRegion":
        if model.family == "egarch":
            lo = np.array([-50.0, 0.0, -5.0, 0.0])
            hi = np.array([50.0, beta_cap, 5.0, 5.0])
            # gamma - delta <= 0 and -gamma - delta <= 0
            A = np.array([[0.0, 0.0, 1.0, -1.0], [0.0, 0.0, -1.0, -1.0]])
            b = np.zeros(2)
        else:
            p, q = model.p, model.q
            lo = np.concatenate([[alpha0_lower], np.zeros(p), np.zeros(q)])
            hi = np.concatenate([[1e8], np.full(p, 10.0), np.full(q, beta_cap)])
            if model.family == "agarch":
                lo = np.append(lo, -1.0)
                hi = np.append(hi, 1.0)
            if q > 0:
                A = np.zeros((1, model.d))
                A[0, model.beta_slice] = 1.0
                b = np.array([beta_cap])
            else:
                A, b = np.zeros((0, model.d)), np.zeros(0)
        if lower is not None:
            lo = np.asarray(lower, dtype=float)
        if upper is not None:
            hi = np.asarray(upper, dtype=float)
        if model.family != "egarch" and not lo[0] > 0:
            raise ConstraintError("the alpha0 lower bound must be strictly positive")
        return cls(lo, hi, A, b, beta_cap)

    @property
    def d(self) -> int:
        return self.lower.size

    def violation(self, theta) -> float:
        """Largest constraint violation (0 for members)."""
        theta = _values(theta)
        v = max(0.0, float(np.max(self.lower - theta, initial=0.0)), float(np.max(theta - self.upper, initial=0.0)))
        if self.A.shape[0]:
            v = max(v, float(np.max(self.A @ theta - self.b)))
        return v

    def contains(self, theta, tol: float = 0.0) -> bool:
        return self.violation(theta) <= tol

    def project(self, theta, iterations: int = 2000) -> np.ndarray:
        """Euclidean projection onto the region (Dykstra's alternating projections)."""
        x = np.clip(_values(theta).astype(float), self.lower, self.upper)
        if not self.A.shape[0] or self.contains(x):
            return x
        sets = self.A.shape[0] + 1
        incr = np.zeros((sets, x.size))
        for _ in range(iterations):
            x_prev = x.copy()
            for s in range(sets):
                y = x + incr[s]
                if s == 0:
                    z = np.clip(y, self.lower, self.upper)
                else:
                    a, rhs = self.A[s - 1], self.b[s - 1]
                    excess = a @ y - rhs
                    z = y - max(excess, 0.0) / (a @ a) * a
                incr[s] = y - z
                x = z
            if np.max(np.abs(x - x_prev)) < 1e-15:
                break
        x = np.clip(x, self.lower, self.upper)
        # rounding can leave a linear cap violated by a few ulps
        for a, rhs in zip(self.A, self.b):
            excess = a @ x - rhs
            if excess > 0:
                x = np.clip(x - (excess * (1 + 1e-12) + 1e-300) / (a @ a) * a, self.lower, self.upper)
        return x

    def g_lower(self, model: ModelSpec) -> float:
        """Uniform lower bound of g over the region.

        (A)GARCH: the alpha0 lower bound. EGARCH: m = inf alpha / (1 - beta),
        a bound in the log domain.
        """
        if model.family != "egarch":
            return float(self.lower[0])
        a_lo, b_lo, b_hi = self.lower[0], self.lower[1], self.upper[1]
        return float(a_lo / (1.0 - (b_hi if a_lo < 0 else b_lo)))

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist(), "beta_cap": self.beta_cap}


def check_theta(model: ModelSpec, theta, region: CompactRegion | None = None, tol: float = 0.0,
                beta_cap: bool = True) -> np.ndarray:
    """Validate the model's intrinsic constraints (and region membership).

    ``beta_cap=False`` drops the requirements sum(beta) < 1 (and beta < 1 for
    EGARCH); diagnostics that probe the non-stationary region use it.
    """
    theta = _values(theta)
    if theta.shape != (model.d,):
        raise ConstraintError(f"{model.family}({model.p},{model.q}) needs {model.d} coefficients, got {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise ConstraintError("coefficients must be finite")
    if model.family == "egarch":
        _, beta, gamma, delta = theta
        if not 0 <= beta or (beta_cap and not beta < 1):
            raise ConstraintError(f"egarch needs 0 <= beta < 1, got beta={beta}")
        if delta < abs(gamma) - tol:
            raise ConstraintError(f"egarch needs delta >= |gamma|, got gamma={gamma}, delta={delta}")
    else:
        p, q = model.p, model.q
        if not theta[0] > 0:
            raise ConstraintError("alpha0 must be > 0")
        if np.any(theta[1:1 + p] < -tol):
            raise ConstraintError("alpha_i must be >= 0")
        beta = theta[model.beta_slice]
        if np.any(beta < -tol) or (beta_cap and beta.sum() >= 1):
            raise ConstraintError("beta_j must be >= 0 with sum(beta) < 1")
        if model.family == "agarch" and abs(theta[-1]) > 1 + tol:
            raise ConstraintError("agarch needs |gamma| <= 1")
    if region is not None and not region.contains(theta, tol=tol):
        raise ConstraintError(f"theta lies outside the compact region (violation {region.violation(theta):.3g})")
    return theta


@dataclass(frozen=True)
class ThetaVector:
    """A coefficient vector bound to its model; validated on construction."""

    model: ModelSpec
    values: np.ndarray
    region: CompactRegion | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        check_theta(self.model, values, self.region)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.model.names, self.values.tolist()))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def _prepare(model, theta, x_lags, s_lags, region):
    theta = check_theta(model, theta, region)
    x = np.asarray(x_lags, dtype=float).reshape(-1)
    s = np.asarray(s_lags, dtype=float).reshape(-1)
    if x.size != model.p or s.size != model.q:
        raise ConstraintError(f"expected {model.p} observation lags and {model.q} volatility lags")
    return theta, x, s


def eval_g(model: ModelSpec, theta, x_lags, s_lags, region: CompactRegion | None = None) -> float:
    theta, x, s = _prepare(model, theta, x_lags, s_lags, region)
    if model.family == "egarch":
        alpha, beta, gamma, delta = theta
        return float(alpha + beta * s[0] + (gamma * x[0] + delta * abs(x[0])) * math.exp(-s[0] / 2.0))
    a = model.to_agarch(theta)
    p, q = model.p, model.q
    u = np.abs(x) - a[-1] * x
    return float(a[0] + np.dot(a[1:1 + p], u * u) + np.dot(a[1 + p:1 + p + q], s))


def dg_dtheta(model: ModelSpec, theta, x_lags, s_lags, region: CompactRegion | None = None) -> np.ndarray:
    theta, x, s = _prepare(model, theta, x_lags, s_lags, region)
    if model.family == "egarch":
        e = math.exp(-s[0] / 2.0)
        return np.array([1.0, s[0], x[0] * e, abs(x[0]) * e])
    a = model.to_agarch(theta)
    p = model.p
    r = np.abs(x) - a[-1] * x
    out = np.concatenate([[1.0], r * r, s, [-2.0 * np.dot(a[1:1 + p], x * r)]])
    return out[:model.d]


def dg_ds(model: ModelSpec, theta, x_lags, s_lags, region: CompactRegion | None = None) -> np.ndarray:
    theta, x, s = _prepare(model, theta, x_lags, s_lags, region)
    if model.family == "egarch":
        _, beta, gamma, delta = theta
        w = gamma * x[0] + delta * abs(x[0])
        return np.array([beta - 0.5 * w * math.exp(-s[0] / 2.0)])
    return theta[model.beta_slice].copy()


def d2g(model: ModelSpec, theta, x_lags, s_lags, region: CompactRegion | None = None) -> np.ndarray:
    """Second partials of g in (theta, s), a (d+q) x (d+q) symmetric matrix."""
    theta, x, s = _prepare(model, theta, x_lags, s_lags, region)
    d, q = model.d, model.q
    H = np.zeros((d + q, d + q))
    if model.family == "egarch":
        _, _, gamma, delta = theta
        e = math.exp(-s[0] / 2.0)
        w = gamma * x[0] + delta * abs(x[0])
        mixed = np.array([0.0, 1.0, -0.5 * x[0] * e, -0.5 * abs(x[0]) * e])
        H[:d, d] = mixed
        H[d, :d] = mixed
        H[d, d] = 0.25 * w * e
        return H
    p = model.p
    for j in range(q):
        H[1 + p + j, d + j] = H[d + j, 1 + p + j] = 1.0
    if model.family == "agarch":
        gamma = theta[-1]
        r = np.abs(x) - gamma * x
        H[d - 1, d - 1] = 2.0 * np.dot(theta[1:1 + p], x * x)
        H[1:1 + p, d - 1] = H[d - 1, 1:1 + p] = -2.0 * x * r
    return H


def weak_stationarity_margin(model: ModelSpec, theta, innovation: InnovationSpec,
                             stream: RngStream | None = None) -> float:
    """1 - [sum alpha_i E(|Z| - gamma Z)^2 + sum beta_j].

    Positive means a stationary solution with finite variance exists.
    """
    if model.family == "egarch":
        raise ConstraintError("the second-moment margin is defined for (a)garch only")
    a = model.to_agarch(check_theta(model, theta, beta_cap=False))
    p, q = model.p, model.q
    gamma = a[-1]
    mixed, _ = moment_z_abs_z(innovation, stream)
    second = 1.0 + gamma * gamma - 2.0 * gamma * mixed
    return float(1.0 - (a[1:1 + p].sum() * second + a[1 + p:1 + p + q].sum()))
