"""Active-set projected Newton / quasi-Newton minimizer for box plus linear caps.

Minimizes a smooth ``f`` subject to ``lower <= x <= upper`` and ``A x <= b``.
Iterates stay feasible: steps are computed in the null space of the working
set of active constraints, cut by a ratio test and an Armijo backtracking
search. A constraint is released when the iterate is stationary on the current
face and its Lagrange multiplier has the wrong sign.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import null_space

from volqml.errors import NumericError, VolqmlError

__all__ = ["OptimizeResult", "minimize"]


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    converged: bool
    iterations: int
    active: list[int]
    message: str
    pg_norm: float
    trace: list = field(default_factory=list)


def _constraint_rows(lower, upper, A, b):
    d = lower.size
    eye = np.eye(d)
    rows = [eye, -eye]
    rhs = [upper, -lower]
    if A.size:
        rows.append(A)
        rhs.append(b)
    return np.vstack(rows), np.concatenate(rhs)


def _independent(N: np.ndarray, row: np.ndarray) -> bool:
    if N.shape[0] == 0:
        return bool(np.any(row != 0))
    stacked = np.vstack([N, row])
    return np.linalg.matrix_rank(stacked, tol=1e-10) > np.linalg.matrix_rank(N, tol=1e-10)


def _modified_inverse_solve(H: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Solve (H+) p = -g with H+ the eigenvalue-floored version of H."""
    w, V = np.linalg.eigh(0.5 * (H + H.T))
    scale = max(1.0, float(np.max(np.abs(w)))) if w.size else 1.0
    floor = 1e-8 * scale
    w = np.maximum(np.abs(w), floor)
    return -(V @ ((V.T @ g) / w))


def minimize(fun: Callable[[np.ndarray, int], tuple], x0, lower, upper, A=None, b=None,
             gtol: float = 1e-8, steptol: float = 1e-10, maxiter: int = 500,
             hessian: str = "exact", gtol_scale: Callable[[float], float] | None = None) -> OptimizeResult:
    """Minimize ``fun`` over the polyhedron.

    ``fun(x, order)`` returns ``(f, g, H)`` with ``g``/``H`` present up to
    ``order`` (H may be None when ``hessian="bfgs"``). ``x0`` must be feasible.
    Convergence: infinity norm of the projected gradient below
    ``gtol * gtol_scale(f)`` with non-negative multipliers. The run also stops
    when the accepted step is below ``steptol`` relative to ``x``.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    d = lower.size
    A = np.zeros((0, d)) if A is None or np.size(A) == 0 else np.asarray(A, dtype=float).reshape(-1, d)
    b = np.zeros(0) if b is None or np.size(b) == 0 else np.asarray(b, dtype=float).reshape(-1)
    G, h = _constraint_rows(lower, upper, A, b)
    x = np.asarray(x0, dtype=float).copy()
    feas_tol = 1e-12 * (1.0 + np.abs(h))
    if np.any(G @ x - h > 1e-9 * (1.0 + np.abs(h))):
        raise VolqmlError("starting point is infeasible")
    use_exact = hessian == "exact"
    order = 2 if use_exact else 1
    f, g, H = fun(x, order)
    if not use_exact:
        H = np.eye(d)
    # start with every constraint active at x0 (independent ones only)
    W: list[int] = []
    for i in np.flatnonzero(np.abs(G @ x - h) <= feas_tol):
        if _independent(G[W], G[i]):
            W.append(int(i))
    scale = gtol_scale or (lambda v: max(1.0, abs(v)))
    trace = []
    message = "maximum iterations reached"
    converged = False
    pg_norm = math.inf
    it = 0
    for it in range(1, maxiter + 1):
        N = G[W]
        Z = null_space(N) if W else np.eye(d)
        tol = gtol * scale(f)
        gz = Z.T @ g
        pg = Z @ gz
        pg_norm = float(np.max(np.abs(pg))) if d else 0.0
        trace.append((it, float(f), pg_norm, len(W)))
        if pg_norm < tol:
            if W:
                lam = np.linalg.lstsq(N.T, -g, rcond=None)[0]
                j = int(np.argmin(lam))
                if lam[j] < -tol:
                    W.pop(j)
                    continue
            converged = True
            message = "projected gradient below tolerance"
            break
        if Z.shape[1] == 0:
            converged = pg_norm < tol
            message = "vertex reached"
            break
        Hz = Z.T @ H @ Z
        dz = _modified_inverse_solve(Hz, gz)
        dx = Z @ dz
        slope = float(g @ dx)
        if not slope < 0:
            dx = -pg
            slope = float(g @ dx)
        # ratio test against inactive constraints
        Gd = G @ dx
        slack = h - G @ x
        alpha_max = math.inf
        block = -1
        for i in range(G.shape[0]):
            if i in W or Gd[i] <= 1e-14 * np.max(np.abs(G[i])) * np.max(np.abs(dx)):
                continue
            a = max(slack[i], 0.0) / Gd[i]
            if a < alpha_max:
                alpha_max, block = a, i
        alpha = min(1.0, alpha_max)
        accepted = False
        f_new = g_new = H_new = None
        while alpha > 0:
            x_try = x + alpha * dx
            try:
                f_try, g_try, H_try = fun(x_try, order)
            except (NumericError, FloatingPointError, ValueError):
                f_try = math.inf
            if math.isfinite(f_try) and f_try <= f + 1e-4 * alpha * slope:
                accepted = True
                f_new, g_new, H_new = f_try, g_try, H_try
                break
            alpha *= 0.5
            if alpha * float(np.max(np.abs(dx))) < 1e-3 * steptol * (1.0 + float(np.max(np.abs(x)))):
                break
        if not accepted:
            if block >= 0 and alpha_max == 0.0 and _independent(N, G[block]):
                W.append(block)
                continue
            message = "line search failed"
            converged = pg_norm < 10 * tol
            break
        step = alpha * dx
        x_new = x + step
        if alpha == alpha_max and block >= 0:
            # land exactly on the blocking constraint
            if block < d:
                x_new[block] = upper[block]
            elif block < 2 * d:
                x_new[block - d] = lower[block - d]
            if _independent(N, G[block]):
                W.append(block)
        x_new = np.minimum(np.maximum(x_new, lower), upper)
        if not use_exact:
            s = x_new - x
            y = g_new - g
            sy = float(s @ y)
            if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
                Hs = H @ s
                H = H - np.outer(Hs, Hs) / float(s @ Hs) + np.outer(y, y) / sy
        else:
            H = H_new
        small = float(np.max(np.abs(step))) < steptol * (1.0 + float(np.max(np.abs(x))))
        x, f, g = x_new, f_new, g_new
        if small:
            N = G[W]
            Z = null_space(N) if W else np.eye(d)
            pg_norm = float(np.max(np.abs(Z @ (Z.T @ g)))) if Z.shape[1] else 0.0
            if pg_norm < gtol * scale(f):
                continue
            converged = pg_norm < 1e3 * gtol * scale(f)
            message = "step below tolerance"
            break
    return OptimizeResult(x, float(f), g, converged, it, sorted(W), message, pg_norm, trace)
