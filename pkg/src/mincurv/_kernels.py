"""Compiled inner loops shared by the geometry, solver and simulator modules.

Bodies reach this module as a *constraint encoding*: ``m`` quadratic
constraints ``x^T Q_j x + g_j . x - c_j <= tol`` grouped into pieces by the
pointer array ``ptr`` (piece ``p`` owns constraints ``ptr[p]:ptr[p+1]``).  A
point is inside the body when it satisfies every constraint of at least one
piece.  ``mode`` selects the exit algorithm:

* 0 -- one piece, all constraints linear (polytopes);
* 1 -- every piece convex (balls, unions of convex bodies);
* 2 -- general quadrics (non-convex implicit bodies).
"""

from __future__ import annotations

import numpy as np
from numba import njit

INSIDE = np.inf


@njit(cache=True)
def _quad_coeffs(Q, g, c, lin, j, x, s, tol):
    k = x.shape[0]
    gs = 0.0
    gx = 0.0
    for i in range(k):
        gs += g[j, i] * s[i]
        gx += g[j, i] * x[i]
    if lin[j]:
        return 0.0, gs, gx - c[j] - tol
    sQs = 0.0
    xQs = 0.0
    xQx = 0.0
    for i in range(k):
        qs = 0.0
        qx = 0.0
        for l in range(k):
            qs += Q[j, i, l] * s[l]
            qx += Q[j, i, l] * x[l]
        sQs += s[i] * qs
        xQs += x[i] * qs
        xQx += x[i] * qx
    return sQs, 2.0 * xQs + gs, xQx + gx - c[j] - tol


@njit(cache=True)
def point_inside(Q, g, c, lin, ptr, x, tol):
    zero = np.zeros_like(x)
    for p in range(ptr.shape[0] - 1):
        ok = True
        for j in range(ptr[p], ptr[p + 1]):
            a, b, c0 = _quad_coeffs(Q, g, c, lin, j, x, zero, tol)
            if c0 > 0.0:
                ok = False
                break
        if ok:
            return True
    return False


@njit(cache=True)
def _convex_interval(Q, g, c, lin, j0, j1, x, s, tol):
    lo = -np.inf
    hi = np.inf
    for j in range(j0, j1):
        a, b, c0 = _quad_coeffs(Q, g, c, lin, j, x, s, tol)
        if abs(a) <= 1e-300:
            if abs(b) <= 1e-300:
                if c0 > 0.0:
                    return 1.0, -1.0
                continue
            r = -c0 / b
            if b > 0.0:
                if r < hi:
                    hi = r
            else:
                if r > lo:
                    lo = r
        else:
            disc = b * b - 4.0 * a * c0
            if disc < 0.0:
                return 1.0, -1.0
            sq = np.sqrt(disc)
            qq = -0.5 * (b + sq) if b >= 0.0 else -0.5 * (b - sq)
            r1 = qq / a
            r2 = c0 / qq if qq != 0.0 else r1
            if r1 > r2:
                r1, r2 = r2, r1
            if r1 > lo:
                lo = r1
            if r2 < hi:
                hi = r2
        if lo > hi:
            return lo, hi
    return lo, hi


@njit(cache=True)
def segment_exit(Q, g, c, lin, ptr, mode, x, s, tol):
    """First ``t`` in ``[0, 1)`` at which ``x + t s`` leaves the body.

    Returns ``INSIDE`` (``inf``) when the whole segment stays inside.  The
    start point is assumed to be inside; if it is not, ``0.0`` is returned.
    """
    if mode == 0:
        t = np.inf
        for j in range(ptr[0], ptr[1]):
            a, b, c0 = _quad_coeffs(Q, g, c, lin, j, x, s, tol)
            if c0 > 0.0:
                return 0.0
            if b > 0.0:
                r = -c0 / b
                if r < t:
                    t = r
        return t if t < 1.0 else INSIDE
    if mode == 1:
        npieces = ptr.shape[0] - 1
        los = np.empty(npieces)
        his = np.empty(npieces)
        reach = -np.inf
        for p in range(npieces):
            lo, hi = _convex_interval(Q, g, c, lin, ptr[p], ptr[p + 1], x, s, tol)
            los[p] = lo
            his[p] = hi
            if lo <= 0.0 <= hi and hi > reach:
                reach = hi
        if reach == -np.inf:
            return 0.0
        grown = True
        while grown and reach < 1.0:
            grown = False
            for p in range(npieces):
                if los[p] <= reach and his[p] > reach:
                    reach = his[p]
                    grown = True
        return reach if reach < 1.0 else INSIDE
    # general quadrics: split [0, 1] at every root and test sub-interval midpoints
    m = c.shape[0]
    roots = np.empty(2 * m + 2)
    nr = 0
    for j in range(m):
        a, b, c0 = _quad_coeffs(Q, g, c, lin, j, x, s, tol)
        if abs(a) <= 1e-300:
            if abs(b) > 1e-300:
                r = -c0 / b
                if 0.0 < r < 1.0:
                    roots[nr] = r
                    nr += 1
        else:
            disc = b * b - 4.0 * a * c0
            if disc >= 0.0:
                sq = np.sqrt(disc)
                qq = -0.5 * (b + sq) if b >= 0.0 else -0.5 * (b - sq)
                r1 = qq / a
                r2 = c0 / qq if qq != 0.0 else r1
                if 0.0 < r1 < 1.0:
                    roots[nr] = r1
                    nr += 1
                if 0.0 < r2 < 1.0:
                    roots[nr] = r2
                    nr += 1
    roots[nr] = 1.0
    nr += 1
    rs = np.sort(roots[:nr])
    if not point_inside(Q, g, c, lin, ptr, x, tol):
        return 0.0
    prev = 0.0
    z = np.empty_like(x)
    for i in range(nr):
        mid = 0.5 * (prev + rs[i])
        if rs[i] - prev > 0.0:
            for l in range(x.shape[0]):
                z[l] = x[l] + mid * s[l]
            if not point_inside(Q, g, c, lin, ptr, z, tol):
                return prev
        prev = rs[i]
    for l in range(x.shape[0]):
        z[l] = x[l] + s[l]
    if not point_inside(Q, g, c, lin, ptr, z, tol):
        return 1.0 - 1e-15
    return INSIDE


@njit(cache=True)
def segment_exit_many(Q, g, c, lin, ptr, mode, X, S, tol):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        out[i] = segment_exit(Q, g, c, lin, ptr, mode, X[i], S[i], tol)
    return out


@njit(cache=True)
def inside_many(Q, g, c, lin, ptr, X, tol):
    n = X.shape[0]
    out = np.empty(n, dtype=np.bool_)
    for i in range(n):
        out[i] = point_inside(Q, g, c, lin, ptr, X[i], tol)
    return out
