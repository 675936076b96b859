"""Compiled inner loops for the volatility recursions.

All (A)GARCH kernels take coefficients in the agarch layout
(alpha0, alpha_1..alpha_p, beta_1..beta_q, gamma); garch callers pass gamma = 0.
Observation arrays are extended arrays: lags of position ``i`` live at
``i - 1, i - 2, ...``. Filter and simulation share ``_agarch_g`` / ``_egarch_g``
so that an exactly initialized filter reproduces a simulated path bit for bit.
"""

import math

import numpy as np
from numba import njit

DIVERGENCE_LEVEL = 1e300
LOG_DIVERGENCE_LEVEL = math.log(1e300)


@njit(cache=True)
def _agarch_g(th, p, q, x, ix, s, is_):
    gamma = th[p + q + 1]
    out = th[0]
    for i in range(p):
        xi = x[ix - 1 - i]
        u = abs(xi) - gamma * xi
        out += th[1 + i] * (u * u)
    for j in range(q):
        out += th[1 + p + j] * s[is_ - 1 - j]
    return out


@njit(cache=True)
def _egarch_g(th, x, ix, s, is_):
    xl = x[ix - 1]
    sl = s[is_ - 1]
    return th[0] + th[1] * sl + (th[2] * xl + th[3] * abs(xl)) * math.exp(-sl / 2.0)


@njit(cache=True)
def agarch_simulate(th, p, q, z, init):
    """Run the volatility SRE over extended innovations ``z``.

    ``init`` holds the first ``k`` squared volatilities (oldest first).
    Returns (x, s, index of divergence or -1).
    """
    m = z.size
    k = init.size
    x = np.empty(m)
    s = np.empty(m)
    for i in range(k):
        s[i] = init[i]
        x[i] = math.sqrt(init[i]) * z[i]
    for i in range(k, m):
        v = _agarch_g(th, p, q, x, i, s, i)
        if not (v <= DIVERGENCE_LEVEL):
            return x, s, i
        s[i] = v
        x[i] = math.sqrt(v) * z[i]
    return x, s, -1


@njit(cache=True)
def egarch_simulate(th, z, init):
    """EGARCH in the log domain; ``s`` holds log squared volatilities."""
    m = z.size
    k = init.size
    x = np.empty(m)
    s = np.empty(m)
    for i in range(k):
        s[i] = init[i]
        x[i] = math.exp(init[i] / 2.0) * z[i]
    for i in range(k, m):
        v = _egarch_g(th, x, i, s, i)
        if not (abs(v) <= LOG_DIVERGENCE_LEVEL):
            return x, s, i
        s[i] = v
        x[i] = math.exp(v / 2.0) * z[i]
    return x, s, -1


@njit(cache=True)
def agarch_filter(th, p, q, x, init, order, lower):
    """h-hat recursion with first/second derivatives in the full agarch layout.

    ``x`` has ``p`` pre-sample values followed by ``n`` observations; ``init``
    holds h-hat_0, h-hat_-1, ... (length q). Returns
    (h, dh, d2h, clamp count, first non-finite index or -1).
    """
    n = x.size - p
    d = p + q + 2
    gamma = th[d - 1]
    h_ext = np.empty(q + n)
    for j in range(q):
        h_ext[q - 1 - j] = init[j]
    dh_ext = np.zeros((q + n, d if order >= 1 else 0))
    d2h_ext = np.zeros((q + n, d if order >= 2 else 0, d if order >= 2 else 0))
    g1 = np.zeros(d)
    clamps = 0
    for t in range(n):
        ix = p + t
        it = q + t
        v = _agarch_g(th, p, q, x, ix, h_ext, it)
        if not math.isfinite(v):
            return h_ext[q:], dh_ext[q:], d2h_ext[q:], clamps, t
        if v < lower:
            v = lower
            clamps += 1
        h_ext[it] = v
        if order == 0:
            continue
        # first partials of g in theta
        g1[0] = 1.0
        cross = 0.0
        for i in range(p):
            xi = x[ix - 1 - i]
            r = abs(xi) - gamma * xi
            g1[1 + i] = r * r
            cross += th[1 + i] * xi * r
        for j in range(q):
            g1[1 + p + j] = h_ext[it - 1 - j]
        g1[d - 1] = -2.0 * cross
        for a in range(d):
            acc = g1[a]
            for j in range(q):
                acc += th[1 + p + j] * dh_ext[it - 1 - j, a]
            dh_ext[it, a] = acc
        if not np.all(np.isfinite(dh_ext[it])):
            return h_ext[q:], dh_ext[q:], d2h_ext[q:], clamps, t
        if order == 1:
            continue
        gg = 0.0
        for i in range(p):
            xi = x[ix - 1 - i]
            gg += th[1 + i] * xi * xi
        gg *= 2.0
        for a in range(d):
            for b in range(a, d):
                acc = 0.0
                for j in range(q):
                    acc += th[1 + p + j] * d2h_ext[it - 1 - j, a, b]
                # mixed theta / s terms: d2g / d beta_j d s_j = 1
                if 1 + p <= a < 1 + p + q:
                    acc += dh_ext[it - 1 - (a - 1 - p), b]
                if 1 + p <= b < 1 + p + q:
                    acc += dh_ext[it - 1 - (b - 1 - p), a]
                if b == d - 1:
                    if a == d - 1:
                        acc += gg
                    elif 1 <= a < 1 + p:
                        xi = x[ix - 1 - (a - 1)]
                        acc += -2.0 * xi * (abs(xi) - gamma * xi)
                d2h_ext[it, a, b] = acc
                d2h_ext[it, b, a] = acc
        if not np.all(np.isfinite(d2h_ext[it])):
            return h_ext[q:], dh_ext[q:], d2h_ext[q:], clamps, t
    return h_ext[q:], dh_ext[q:], d2h_ext[q:], clamps, -1


@njit(cache=True)
def egarch_filter(th, x, init, order):
    """Log-volatility recursion l_t = log h-hat_t with derivatives of l_t.

    ``x`` has one pre-sample value; ``init`` is the scalar l_0 in a length-1 array.
    Returns (l, dl, d2l, first non-finite index or -1).
    """
    n = x.size - 1
    alpha, beta, gamma, delta = th[0], th[1], th[2], th[3]
    l_ext = np.empty(1 + n)
    l_ext[0] = init[0]
    dl = np.zeros((1 + n, 4 if order >= 1 else 0))
    d2l = np.zeros((1 + n, 4 if order >= 2 else 0, 4 if order >= 2 else 0))
    g1 = np.zeros(4)
    gm = np.zeros(4)
    for t in range(n):
        it = 1 + t
        v = _egarch_g(th, x, it, l_ext, it)
        if not (abs(v) <= LOG_DIVERGENCE_LEVEL):
            return l_ext[1:], dl[1:], d2l[1:], t
        l_ext[it] = v
        if order == 0:
            continue
        xl = x[it - 1]
        sl = l_ext[it - 1]
        e = math.exp(-sl / 2.0)
        w = gamma * xl + delta * abs(xl)
        gs = beta - 0.5 * w * e
        g1[0] = 1.0
        g1[1] = sl
        g1[2] = xl * e
        g1[3] = abs(xl) * e
        for a in range(4):
            dl[it, a] = g1[a] + gs * dl[it - 1, a]
        if not np.all(np.isfinite(dl[it])):
            return l_ext[1:], dl[1:], d2l[1:], t
        if order == 1:
            continue
        gss = 0.25 * w * e
        gm[0] = 0.0
        gm[1] = 1.0
        gm[2] = -0.5 * xl * e
        gm[3] = -0.5 * abs(xl) * e
        for a in range(4):
            for b in range(a, 4):
                pa = dl[it - 1, a]
                pb = dl[it - 1, b]
                acc = gm[a] * pb + gm[b] * pa + gss * pa * pb + gs * d2l[it - 1, a, b]
                d2l[it, a, b] = acc
                d2l[it, b, a] = acc
        if not np.all(np.isfinite(d2l[it])):
            return l_ext[1:], dl[1:], d2l[1:], t
    return l_ext[1:], dl[1:], d2l[1:], -1
