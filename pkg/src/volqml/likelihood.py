"""Gaussian quasi-log-likelihood with analytic score and Hessian.

The additive constant -(n/2) log(2 pi) is omitted throughout; add it back when
comparing with likelihoods from other software.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from volqml.errors import CovarianceError
from volqml.filtering import FilterConfig, FilterOutput, run_filter
from volqml.models import CompactRegion, ModelSpec

__all__ = [
    "LikelihoodValue",
    "evaluate",
    "hessian",
    "information_pieces",
    "loglik",
    "score",
]


@dataclass(frozen=True)
class LikelihoodValue:
    loglik: float
    score: np.ndarray | None
    hessian: np.ndarray | None
    n_terms: int
    clamps: int = 0


def _terms(model: ModelSpec, data, config: FilterConfig | None, out: FilterOutput):
    config = config or FilterConfig()
    x = np.asarray(data, dtype=float).reshape(-1)[model.p:]
    skip = min(config.warmup_skip, x.size)
    return x[skip:] ** 2, skip


def _weighted_sums(a: np.ndarray, w: np.ndarray) -> np.ndarray:
    """sum_t a[..., t] w[t], one contiguous dot product per entry.

    Entry-wise reductions keep each entry's rounding independent of the
    number of parameters, so nested models give bit-identical shared entries.
    """
    flat = a.reshape(int(np.prod(a.shape[:-1])), a.shape[-1])
    return np.array([np.dot(row, w) for row in flat]).reshape(a.shape[:-1])


def _gram(rt: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Symmetric sum_t w[t] r_t r_t^T from the (d, n) array of rows."""
    d = rt.shape[0]
    G = np.empty((d, d))
    for i in range(d):
        wi = rt[i] * w
        for j in range(i, d):
            G[i, j] = G[j, i] = np.dot(wi, rt[j])
    return G


def evaluate(model: ModelSpec, theta, data, config: FilterConfig | None = None, order: int = 2,
             region: CompactRegion | None = None, filtered: FilterOutput | None = None) -> LikelihoodValue:
    """Log-likelihood and, up to ``order``, its gradient and Hessian in theta.

    Per term, with r = h'/h and R = h''/h:
    l_t = -(x^2/h + log h)/2, l'_t = -r (1 - x^2/h)/2,
    l''_t = -(r r^T (2 x^2/h - 1) + R (1 - x^2/h))/2.
    """
    out = filtered or run_filter(model, theta, data, config, order=order, region=region)
    x2, skip = _terms(model, data, config, out)
    h = out.h[skip:]
    n = h.size
    if model.family == "egarch":
        log_h = out.log_h[skip:]
    else:
        log_h = np.log(h)
    ratio = x2 / h
    value = -0.5 * float(np.sum(ratio + log_h))
    grad = hess = None
    if order >= 1:
        rt = np.ascontiguousarray(out.rel1[skip:].T)
        grad = -0.5 * _weighted_sums(rt, 1.0 - ratio)
    if order >= 2:
        Rt = np.ascontiguousarray(np.moveaxis(out.rel2[skip:], 0, -1))
        hess = -0.5 * (_gram(rt, 2.0 * ratio - 1.0) + _weighted_sums(Rt, 1.0 - ratio))
    return LikelihoodValue(value, grad, hess, n, out.clamps)


def loglik(model: ModelSpec, theta, data, config: FilterConfig | None = None,
           region: CompactRegion | None = None) -> LikelihoodValue:
    return evaluate(model, theta, data, config, order=0, region=region)


def score(model: ModelSpec, theta, data, config: FilterConfig | None = None,
          region: CompactRegion | None = None) -> np.ndarray:
    return evaluate(model, theta, data, config, order=1, region=region).score


def hessian(model: ModelSpec, theta, data, config: FilterConfig | None = None,
            region: CompactRegion | None = None) -> np.ndarray:
    return evaluate(model, theta, data, config, order=2, region=region).hessian


def information_pieces(model: ModelSpec, theta, data, config: FilterConfig | None = None,
                       region: CompactRegion | None = None, cond_limit: float = 1e12) -> tuple[np.ndarray, float]:
    """M-hat = (1/n) sum h' h'^T / h^2 and kurt-hat = (1/n) sum (Z-hat^4 - 1).

    Raises :class:`CovarianceError` when M-hat is singular (condition number
    above ``cond_limit``); the eigenvalues are attached for diagnosis.
    """
    out = run_filter(model, theta, data, config, order=1, region=region)
    x2, skip = _terms(model, data, config, out)
    n = x2.size
    if n == 0:
        raise CovarianceError("no likelihood terms", np.zeros(0))
    rt = np.ascontiguousarray(out.rel1[skip:].T)
    M = _gram(rt, np.ones(n)) / n
    zhat2 = x2 / out.h[skip:]
    kurt = float(np.mean(zhat2 * zhat2 - 1.0))
    eig = np.linalg.eigvalsh(M)
    if not eig[0] > 0 or eig[-1] / eig[0] > cond_limit:
        raise CovarianceError("information matrix is singular or nearly so; the model may be over-parameterized", eig)
    return M, kurt
