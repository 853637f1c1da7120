"""Compiled fixed-step loop for the closed-loop right-hand side.

Mirrors ``sim.ClosedLoop.derivative`` exactly; the pure-numpy class remains
the reference and handles every step that needs halving.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

OK = 0
BREACH = 1
NONFINITE = 2


@njit(cache=True)
def _project(theta, rate, b2, eps):
    tt = 0.0
    inner = 0.0
    for i in range(theta.shape[0]):
        tt += theta[i] * theta[i]
        inner += theta[i] * rate[i]
    f = ((1.0 + eps) * tt - b2) / (eps * b2)
    if f <= 0.0 or inner <= 0.0:
        return rate
    c = f * inner / tt
    return rate - c * theta


@njit(cache=True)
def _signals(y, r, n, m, xa_bar, aux_thr, u_bar):
    x = y[:n]
    xr = y[n : 2 * n]
    nr = math.sqrt(np.dot(xr, xr))
    if nr < aux_thr:
        e = x - xr
    else:
        e = x - xr * (xa_bar / nr)
    kx = y[2 * n : 2 * n + m * n].reshape((n, m))
    kr = y[2 * n + m * n :].reshape((m, m))
    v = np.dot(x, kx) + np.dot(r, kr)
    nv = math.sqrt(np.dot(v, v))
    u = v.copy()
    if nv > u_bar:
        u = v * (u_bar / nv)
    return x, xr, e, nv, u


@njit(cache=True)
def _rhs(y, r, d, has_d, n, m, lin, e_stack, blf, xp2, guard, u_bar, xa_bar, aux_thr, bx2, br2, eps):
    x, xr, e, nv, u = _signals(y, r, n, m, xa_bar, aux_thr, u_bar)
    w = np.dot(e_stack, e)
    s = -1.0
    if blf:
        q = np.dot(e, w[:n])
        if q >= guard:
            return np.empty(0), BREACH
        s = -1.0 / (xp2 - q)
    z = np.concatenate((x, xr, u, r))
    out = np.empty(y.shape[0])
    out[: 2 * n] = np.dot(lin, z)
    if has_d:
        out[:n] += d
    ax = s * w[n : n + m]
    ar = s * w[n + m :]
    rate_x = np.empty(n * m)
    for j in range(n):
        for i in range(m):
            rate_x[j * m + i] = x[j] * ax[i]
    rate_r = np.empty(m * m)
    for j in range(m):
        for i in range(m):
            rate_r[j * m + i] = r[j] * ar[i]
    i_kx = 2 * n
    i_kr = 2 * n + m * n
    out[i_kx:i_kr] = _project(y[i_kx:i_kr], rate_x, bx2, eps)
    out[i_kr:] = _project(y[i_kr:], rate_r, br2, eps)
    return out, OK


@njit(cache=True)
def integrate(
    Y, MON, k0, k_end, h, R, D, has_d, n, m, lin, e_stack, blf, xp2, guard,
    u_bar, xa_bar, aux_thr, bx, br, eps, P,
):
    """Advance rows ``Y[k0] -> Y[k_end]``; stop early on breach or non-finite values.

    ``MON[k]`` receives (|x|, |u|, |v|, |e|, e'Pe, clamp). Returns (k, status)
    where ``k`` is the last row successfully written.
    """
    bx2 = bx * bx
    br2 = br * br
    i_kx = 2 * n
    i_kr = 2 * n + m * n
    for k in range(k0, k_end):
        y = Y[k]
        a = 2 * k
        k1, st = _rhs(y, R[a], D[a], has_d, n, m, lin, e_stack, blf, xp2, guard, u_bar, xa_bar, aux_thr, bx2, br2, eps)
        if st != OK:
            return k, st
        if not np.isfinite(k1.sum()):
            return k, NONFINITE
        k2, st = _rhs(y + 0.5 * h * k1, R[a + 1], D[a + 1], has_d, n, m, lin, e_stack, blf, xp2, guard, u_bar, xa_bar, aux_thr, bx2, br2, eps)
        if st != OK:
            return k, st
        if not np.isfinite(k2.sum()):
            return k, NONFINITE
        k3, st = _rhs(y + 0.5 * h * k2, R[a + 1], D[a + 1], has_d, n, m, lin, e_stack, blf, xp2, guard, u_bar, xa_bar, aux_thr, bx2, br2, eps)
        if st != OK:
            return k, st
        if not np.isfinite(k3.sum()):
            return k, NONFINITE
        k4, st = _rhs(y + h * k3, R[a + 2], D[a + 2], has_d, n, m, lin, e_stack, blf, xp2, guard, u_bar, xa_bar, aux_thr, bx2, br2, eps)
        if st != OK:
            return k, st
        if not np.isfinite(k4.sum()):
            return k, NONFINITE
        y1 = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        clamp = 0.0
        nb = math.sqrt(np.dot(y1[i_kx:i_kr], y1[i_kx:i_kr]))
        if nb > bx:
            y1[i_kx:i_kr] *= bx / nb
            clamp = 1.0
        nb = math.sqrt(np.dot(y1[i_kr:], y1[i_kr:]))
        if nb > br:
            y1[i_kr:] *= br / nb
            clamp = 1.0
        x, xr, e, nv, u = _signals(y1, R[a + 2], n, m, xa_bar, aux_thr, u_bar)
        q = np.dot(e, np.dot(P, e))
        if blf and q >= guard:
            return k, BREACH
        Y[k + 1] = y1
        MON[k + 1, 0] = math.sqrt(np.dot(x, x))
        MON[k + 1, 1] = math.sqrt(np.dot(u, u))
        MON[k + 1, 2] = nv
        MON[k + 1, 3] = math.sqrt(np.dot(e, e))
        MON[k + 1, 4] = q
        MON[k + 1, 5] = clamp
    return k_end, OK
