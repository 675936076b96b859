"""Stochastic recurrence iteration, stationary simulation and contraction diagnostics."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from volqml import _kernels
from volqml.errors import ConstraintError, DivergenceError, NumericError
from volqml.innovations import InnovationSpec, RngStream, draw, sample
from volqml.models import ModelSpec, check_theta

__all__ = [
    "ContractionDiagnostic",
    "LyapunovEstimate",
    "PathSample",
    "backward_iterate",
    "companion_matrix",
    "egarch_invertibility_check",
    "estimate_contraction",
    "forward_iterate",
    "lyapunov_agarch",
    "scan_contraction",
    "simulate_from",
    "simulate_stationary",
    "spectral_radius_C",
]

DIVERGENCE_LEVEL = _kernels.DIVERGENCE_LEVEL
CERTIFICATE_TOL = 1e-8


# ---------------------------------------------------------------------------
# generic iteration

def _as_state(z) -> np.ndarray:
    return np.atleast_1d(np.asarray(z, dtype=float))


def forward_iterate(map_seq: Callable[[int, np.ndarray], np.ndarray], initial, steps: int) -> np.ndarray:
    """Forward iterates phi_{t-1} o ... o phi_0(z) for t = 1..steps.

    ``map_seq(t, state)`` applies phi_t. Returns an array of shape (steps, k).
    """
    if steps < 0:
        raise ConstraintError("steps must be >= 0")
    state = _as_state(initial)
    out = np.empty((steps, state.size))
    for t in range(steps):
        state = _as_state(map_seq(t, state))
        if not np.all(np.isfinite(state)) or np.any(np.abs(state) > DIVERGENCE_LEVEL):
            raise NumericError(f"iterate left the finite range at step {t + 1}", index=t + 1)
        out[t] = state
    return out


def backward_iterate(map_seq: Callable[[int, np.ndarray], np.ndarray], t: int, m: int, initial) -> np.ndarray:
    """Backward iterate phi_{t-1} o ... o phi_{t-m}(z)."""
    if m < 0:
        raise ConstraintError("m must be >= 0")
    state = _as_state(initial)
    for s in range(t - m, t):
        state = _as_state(map_seq(s, state))
        if not np.all(np.isfinite(state)) or np.any(np.abs(state) > DIVERGENCE_LEVEL):
            raise NumericError(f"iterate left the finite range at step {s}", index=s)
    return state


# ---------------------------------------------------------------------------
# simulation

@dataclass
class PathSample:
    """A simulated window X_1..X_n with its volatilities and innovations.

    ``x_pre`` holds the p observations preceding the window and ``state_pre``
    the q volatility states preceding it (most recent first; log scale for
    EGARCH). Together they let a filter be initialized exactly:
    ``run_filter(model, theta, path.data, FilterConfig(init=path.state_pre))``
    reproduces ``sigma2``.
    """

    model: ModelSpec
    theta: np.ndarray
    x: np.ndarray
    sigma2: np.ndarray
    z: np.ndarray
    x_pre: np.ndarray
    state_pre: np.ndarray
    init: np.ndarray
    burn_in: int
    certificate_gap: float = float("nan")
    innovation: InnovationSpec | None = None
    stream: RngStream | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.x.size

    @property
    def data(self) -> np.ndarray:
        """Observations with the p pre-sample values prepended."""
        return np.concatenate([self.x_pre, self.x])


def _default_sim_init(model: ModelSpec, theta: np.ndarray) -> float:
    if model.family == "egarch":
        return float(theta[0] / (1.0 - theta[1]))
    beta_sum = theta[model.beta_slice].sum()
    return float(theta[0] / (1.0 - beta_sum))


def _run_kernel(model: ModelSpec, theta: np.ndarray, z: np.ndarray, init: np.ndarray):
    if model.family == "egarch":
        return _kernels.egarch_simulate(np.ascontiguousarray(theta), z, init)
    th = np.ascontiguousarray(model.to_agarch(theta))
    return _kernels.agarch_simulate(th, model.p, model.q, z, init)


def simulate_from(model: ModelSpec, theta, z, init) -> tuple[np.ndarray, np.ndarray]:
    """Run the model recursion over innovations ``z`` from a given start.

    The first k = max(p, q, 1) entries of ``z`` belong to the initial state,
    whose volatilities are ``init`` (scalar or length k, oldest first).
    Returns extended arrays (x, state); state is log sigma^2 for EGARCH.
    """
    theta = check_theta(model, theta)
    z = np.ascontiguousarray(np.asarray(z, dtype=float))
    k = model.k
    if z.size < k:
        raise ConstraintError(f"need at least k = {k} innovations")
    init = np.atleast_1d(np.asarray(init, dtype=float))
    init = np.full(k, init[0]) if init.size == 1 else init
    if init.size != k:
        raise ConstraintError(f"initial state needs {k} values")
    x, s, bad = _run_kernel(model, theta, z, np.ascontiguousarray(init))
    if bad >= 0:
        raise DivergenceError(f"simulated volatility exceeded 1e300 at step {bad - k + 1}", index=bad - k + 1)
    return x, s


def simulate_stationary(model: ModelSpec, theta_true, innovation: InnovationSpec, stream: RngStream,
                        n: int, burn_in: int = 1000, init=None, certificate: bool = True) -> PathSample:
    """Approximate draw from the stationary solution by burn-in.

    The recursion starts at ``init`` (default alpha0/(1 - sum beta), or
    alpha/(1 - beta) in the log domain for EGARCH) and the first ``burn_in``
    steps are discarded. With ``certificate`` a second run from a different
    start records the gap at the end of burn-in; a gap above 1e-8 warns.
    """
    theta = check_theta(model, theta_true)
    if n < 0 or burn_in < 0:
        raise ConstraintError("n and burn_in must be >= 0")
    k = model.k
    z = draw(innovation, stream, k + burn_in + n)
    s0 = _default_sim_init(model, theta) if init is None else init
    x_ext, s_ext = simulate_from(model, theta, z, s0)
    gap = float("nan")
    if certificate:
        s1 = np.atleast_1d(np.asarray(s0, dtype=float))
        alt = s1 + 1.0 if model.family == "egarch" else 2.0 * s1 + 1.0
        _, s_alt = simulate_from(model, theta, z, alt)
        gap = float(np.max(np.abs(s_alt[burn_in:k + burn_in] - s_ext[burn_in:k + burn_in])))
        if not gap < CERTIFICATE_TOL:
            warnings.warn(f"burn-in certificate failed: start-value gap {gap:.3g} after {burn_in} steps",
                          RuntimeWarning, stacklevel=2)
    w = k + burn_in
    state = s_ext[w:]
    sigma2 = np.exp(state) if model.family == "egarch" else state.copy()
    state_pre = s_ext[w - model.q:w][::-1].copy() if model.q else np.zeros(0)
    return PathSample(
        model=model, theta=theta.copy(), x=x_ext[w:].copy(), sigma2=sigma2, z=z[w:].copy(),
        x_pre=x_ext[w - model.p:w].copy(), state_pre=state_pre,
        init=np.atleast_1d(np.asarray(s0, dtype=float)), burn_in=burn_in, certificate_gap=gap,
        innovation=innovation, stream=stream,
        meta={"z_ext": z, "x_ext": x_ext, "state_ext": s_ext},
    )


# ---------------------------------------------------------------------------
# Lyapunov exponent of the AGARCH companion SRE

@dataclass(frozen=True)
class LyapunovEstimate:
    rho_hat: float
    std_error: float
    n_products: int
    n_replications: int
    norm: str = "frobenius"

    @property
    def verdict(self) -> str:
        if self.rho_hat + 3 * self.std_error < 0:
            return "stationary"
        if self.rho_hat - 3 * self.std_error > 0:
            return "non-stationary"
        return "inconclusive"

    def to_dict(self) -> dict:
        return {"estimate": self.rho_hat, "std_error": self.std_error, "n": self.n_products,
                "replications": self.n_replications, "norm": self.norm, "verdict": self.verdict}


def _padded(model: ModelSpec, theta: np.ndarray):
    th = model.to_agarch(theta)
    p, q = model.p, model.q
    alpha = th[1:1 + p] if p else np.zeros(1)
    beta = th[1 + p:1 + p + q] if q else np.zeros(1)
    return alpha, beta, th[-1]


def companion_matrices(alpha: np.ndarray, beta: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Random matrices A_t of the AGARCH companion SRE, one per entry of ``u``.

    ``u`` holds (|Z_t| - gamma Z_t)^2; the state is
    (sigma_t^2..sigma_{t-q+1}^2, u_{t-1}..u_{t-p+1}).
    """
    p, q = alpha.size, beta.size
    m = q + p - 1
    A = np.zeros((u.size, m, m))
    A[:, 0, 0] = alpha[0] * u + beta[0]
    A[:, 0, 1:q] = beta[1:]
    A[:, 0, q:] = alpha[1:]
    for i in range(1, q):
        A[:, i, i - 1] = 1.0
    if p > 1:
        A[:, q, 0] = u
        for i in range(q + 1, m):
            A[:, i, i - 1] = 1.0
    return A


def lyapunov_agarch(model: ModelSpec, theta, innovation: InnovationSpec, stream: RngStream,
                    n_products: int = 10_000, n_replications: int = 50, norm: str = "frobenius") -> LyapunovEstimate:
    """Top Lyapunov exponent of the companion matrices, by Monte Carlo.

    Each replication returns (1/n) log ||A_1 ... A_n||. The running product is
    renormalized every step and the log norms accumulated, so nothing over- or
    underflows. When the state is scalar the product is a plain sum of logs.
    """
    if model.family == "egarch":
        raise ConstraintError("lyapunov_agarch needs an (a)garch model")
    if n_products < 1 or n_replications < 1:
        raise ConstraintError("n_products and n_replications must be >= 1")
    if norm not in ("frobenius", "operator"):
        raise ConstraintError("norm must be 'frobenius' or 'operator'")
    theta = check_theta(model, theta, beta_cap=False)
    alpha, beta, gamma = _padded(model, theta)
    m = alpha.size + beta.size - 1
    est = np.empty(n_replications)
    for r in range(n_replications):
        z = draw(innovation, stream.child(_rep_stream(stream, r)), n_products)
        u = (np.abs(z) - gamma * z) ** 2
        if m == 1:
            with np.errstate(divide="ignore"):
                logs = np.log(alpha[0] * u + beta[0])
            est[r] = math.fsum(logs) / n_products
            continue
        A = companion_matrices(alpha, beta, u)
        P = np.eye(m)
        acc = 0.0
        for t in range(n_products):
            P = P @ A[t]
            s = math.sqrt(float(np.sum(P * P)))
            if s == 0.0:
                acc = -math.inf
                break
            acc += math.log(s)
            P /= s
        if norm == "operator" and math.isfinite(acc):
            acc += math.log(np.linalg.norm(P, 2))
        est[r] = acc / n_products
    # identical replications (deterministic products) are reported without averaging noise
    rho = float(est[0]) if np.all(est == est[0]) else float(np.mean(est))
    se = float(np.std(est, ddof=1) / math.sqrt(n_replications)) if n_replications > 1 and np.all(np.isfinite(est)) else 0.0
    return LyapunovEstimate(rho, se, n_products, n_replications, norm)


def _rep_stream(stream: RngStream, r: int) -> int:
    # replication streams live in a block reserved for the caller's stream id
    return (int(stream.stream_id) * 1_000_003 + r) % 2**64


# ---------------------------------------------------------------------------
# companion matrix of the beta polynomial

def companion_matrix(beta) -> np.ndarray:
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    q = beta.size
    C = np.zeros((q, q))
    C[0] = beta
    C[np.arange(1, q), np.arange(q - 1)] = 1.0
    return C


def spectral_radius_C(beta) -> tuple[float, float]:
    """Spectral radius of the companion matrix of beta and the bound (sum beta)^(1/q).

    The bound is strict unless all mass sits on the last lag (always the case
    for q = 1), where the two coincide.
    """
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    if np.any(beta < 0):
        raise ConstraintError("beta_j must be >= 0")
    if beta.size == 0:
        return 0.0, 0.0
    radius = float(np.max(np.abs(np.linalg.eigvals(companion_matrix(beta)))))
    return radius, float(beta.sum() ** (1.0 / beta.size))


# ---------------------------------------------------------------------------
# contraction diagnostics

@dataclass(frozen=True)
class ContractionDiagnostic:
    log_lambda_mean: float
    r: int
    std_error: float
    n: int = 0
    norm: str = "operator"
    note: str = ""
    tail_bound: float = 0.0

    @property
    def contractive(self) -> bool:
        return self.log_lambda_mean + 3 * self.std_error < 0

    @property
    def verdict(self) -> str:
        return "invertible" if self.contractive else "not certified"

    def to_dict(self) -> dict:
        return {"estimate": self.log_lambda_mean, "std_error": self.std_error, "r": self.r, "n": self.n,
                "norm": self.norm, "verdict": self.verdict, "note": self.note, "tail_bound": self.tail_bound}


def egarch_truncation(beta: float, eps: float = 1e-12) -> int:
    if beta == 0:
        return 0
    return max(0, math.ceil(math.log(eps * (1.0 - beta)) / math.log(beta)))


def egarch_invertibility_check(theta, innovation: InnovationSpec, stream: RngStream,
                               n_samples: int = 100_000, eps: float = 1e-12,
                               chunk: int = 2_000_000) -> ContractionDiagnostic:
    """Monte-Carlo estimate of E log max{beta, exp(S/2) w_0 / 2 - beta}.

    Here w = gamma Z + delta |Z| and S = sum_{k=0}^{K} beta^k w_{-k-1}, with K
    chosen so that beta^(K+1) / (1 - beta) < eps. ``tail_bound`` bounds the
    expected neglected part of S by (|gamma| + delta) beta^(K+1) / (1 - beta).
    When beta = 0 and gamma = +-delta the integrand is -inf with positive
    probability; the estimate is then -inf with standard error 0.
    """
    model = ModelSpec("egarch")
    theta = check_theta(model, theta)
    _, beta, gamma, delta = theta
    if n_samples < 2:
        raise ConstraintError("n_samples must be >= 2")
    K = egarch_truncation(beta, eps)
    weights = beta ** np.arange(K + 1)
    rng = stream.generator()
    rows = max(1, chunk // (K + 2))
    vals = []
    done = 0
    while done < n_samples:
        m = min(rows, n_samples - done)
        z = sample(innovation, rng, (m, K + 2))
        w = gamma * z + delta * np.abs(z)
        S = w[:, 1:] @ weights
        with np.errstate(divide="ignore"):
            vals.append(np.log(np.maximum(beta, 0.5 * np.exp(0.5 * S) * w[:, 0] - beta)))
        done += m
    v = np.concatenate(vals)
    tail = float((abs(gamma) + delta) * beta ** (K + 1) / (1.0 - beta)) if beta > 0 else 0.0
    if np.any(np.isneginf(v)):
        return ContractionDiagnostic(-math.inf, 1, 0.0, n_samples, "lipschitz", "integrand is -inf with positive probability", tail)
    return ContractionDiagnostic(float(v.mean()), 1, float(v.std(ddof=1) / math.sqrt(v.size)), n_samples,
                                 "lipschitz", f"series truncated after {K + 1} terms", tail)


def estimate_contraction(model: ModelSpec, theta, path: PathSample | None = None, r: int = 1,
                         innovation: InnovationSpec | None = None, stream: RngStream | None = None,
                         n_samples: int = 100_000) -> ContractionDiagnostic:
    """Contraction diagnostic of order r.

    (A)GARCH: the deterministic bound log ||C^r||_op / r. EGARCH (r = 1 only):
    the mean of log Lambda(phi_t) with Lambda(phi_t) =
    max(beta, exp(-alpha / (2 (1 - beta))) (gamma X_t + delta |X_t|) / 2 - beta)
    over the observations of ``path``; without a path the Monte-Carlo check
    in terms of innovations is used instead.
    """
    if r < 1:
        raise ConstraintError("r must be >= 1")
    theta = check_theta(model, theta)
    if model.family == "egarch":
        if r != 1:
            raise ConstraintError("the egarch diagnostic is available for r = 1 only")
        if path is None:
            return egarch_invertibility_check(theta, innovation or InnovationSpec(), stream or RngStream(0), n_samples)
        alpha, beta, gamma, delta = theta
        x = path.x
        lam = np.maximum(beta, 0.5 * math.exp(-alpha / (2.0 * (1.0 - beta))) * (gamma * x + delta * np.abs(x)) - beta)
        with np.errstate(divide="ignore"):
            v = np.log(lam)
        if np.any(np.isneginf(v)):
            return ContractionDiagnostic(-math.inf, 1, 0.0, x.size, "lipschitz", "Lipschitz coefficient vanishes on the path")
        return ContractionDiagnostic(float(v.mean()), 1, float(v.std(ddof=1) / math.sqrt(max(v.size, 1))),
                                     x.size, "lipschitz", "empirical mean over the path")
    beta = theta[model.beta_slice]
    if beta.size == 0:
        return ContractionDiagnostic(-math.inf, r, 0.0, note="no volatility lags: the map is constant in s")
    C = companion_matrix(beta)
    P = np.eye(beta.size)
    acc = 0.0
    note = ""
    for _ in range(r):
        P = P @ C
        s = np.linalg.norm(P, 2)
        if s == 0.0:
            return ContractionDiagnostic(-math.inf, r, 0.0, note="C is nilpotent")
        acc += math.log(s)
        P /= s
    if acc / r < -700:
        note = "clamped to avoid underflow"
    return ContractionDiagnostic(acc / r, r, 0.0, note=note)


def scan_contraction(model: ModelSpec, theta, rs=(1, 2, 4, 8, 16, 32, 64), **kwargs) -> tuple[ContractionDiagnostic, list]:
    """Evaluate the diagnostic over several r and report the smallest (heuristic choice)."""
    if model.family == "egarch":
        diag = estimate_contraction(model, theta, r=1, **kwargs)
        return diag, [diag]
    diags = [estimate_contraction(model, theta, r=r) for r in rs]
    return min(diags, key=lambda d: d.log_lambda_mean), diags
