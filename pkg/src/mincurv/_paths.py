"""Compiled path loops for the martingale simulator.

Fields reach this module packed: ``nf`` fields share flat node arrays, field
``f`` owning nodes ``off[f]:off[f] + prod(shape[f])``.  Gradients and Hessians
are stored per node, padded to three components.  Field ``f`` lives in the
local frame ``x = base[f] + y @ basis[f, :k[f]]``.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from ._kernels import segment_exit

ISOTROPIC, ROTATION, SEGMENT, KERNEL = 0, 1, 2, 3
NORMAL, FALLBACK, CRITICAL = 0, 1, 2


@njit(cache=True, inline="always")
def _cell(n, o, h, y):
    t = (y - o) / h
    i = int(np.floor(t))
    if i < 0:
        i = 0
    elif i > n - 2:
        i = n - 2
    return i, t - i


@njit(cache=True, inline="always")
def field_derivs(f, y, k, orig, h, shape, off, grads, hess, g, M):
    """Multilinear interpolation of the stored gradient and Hessian at ``y``."""
    for a in range(3):
        g[a] = 0.0
        for b in range(3):
            M[a, b] = 0.0
    hh = h[f]
    if k[f] == 2:
        i0, t0 = _cell(shape[f, 0], orig[f, 0], hh, y[0])
        i1, t1 = _cell(shape[f, 1], orig[f, 1], hh, y[1])
        n1 = shape[f, 1]
        for c0 in range(2):
            w0 = t0 if c0 else 1.0 - t0
            for c1 in range(2):
                w = w0 * (t1 if c1 else 1.0 - t1)
                node = off[f] + (i0 + c0) * n1 + i1 + c1
                for a in range(2):
                    g[a] += w * grads[node, a]
                    for b in range(2):
                        M[a, b] += w * hess[node, a, b]
    else:
        i0, t0 = _cell(shape[f, 0], orig[f, 0], hh, y[0])
        i1, t1 = _cell(shape[f, 1], orig[f, 1], hh, y[1])
        i2, t2 = _cell(shape[f, 2], orig[f, 2], hh, y[2])
        n1 = shape[f, 1]
        n2 = shape[f, 2]
        for c0 in range(2):
            w0 = t0 if c0 else 1.0 - t0
            for c1 in range(2):
                w1 = w0 * (t1 if c1 else 1.0 - t1)
                for c2 in range(2):
                    w = w1 * (t2 if c2 else 1.0 - t2)
                    node = off[f] + ((i0 + c0) * n1 + i1 + c1) * n2 + i2 + c2
                    for a in range(3):
                        g[a] += w * grads[node, a]
                        for b in range(3):
                            M[a, b] += w * hess[node, a, b]


@njit(cache=True)
def _eig2(a, b, c):
    """Eigen-pairs of ``[[a, b], [b, c]]``: (hi, lo, v_hi), ``v_lo`` is ``v_hi`` rotated."""
    mean = 0.5 * (a + c)
    rad = np.sqrt(0.25 * (a - c) * (a - c) + b * b)
    hi = mean + rad
    lo = mean - rad
    if rad == 0.0:
        return hi, lo, 1.0, 0.0
    if a >= c:
        vx, vy = hi - c, b
    else:
        vx, vy = b, hi - a
    n = np.sqrt(vx * vx + vy * vy)
    return hi, lo, vx / n, vy / n


@njit(cache=True)
def kernel_dirs(g, M, k, rank_tol, grad_tol, V, W):
    """Orthonormal columns ``V[:, :m]`` with ``a = V V^T / m``; returns ``(m, flag)``.

    ``flag`` is ``NORMAL`` when the kernel of ``H = P M P / 2 + I`` is found,
    ``FALLBACK`` when ``H`` is numerically nonsingular (the top tangent
    eigenvector of ``M`` is used) and ``CRITICAL`` below the gradient threshold
    (rotation plane of the two top eigenvectors of ``M``).  ``W`` is a
    ``(3, 4)`` scratch array.
    """
    gn = 0.0
    for a in range(k):
        gn += g[a] * g[a]
    gn = np.sqrt(gn)
    if gn < grad_tol:
        if k == 2:
            V[0, 0], V[1, 0], V[0, 1], V[1, 1] = 1.0, 0.0, 0.0, 1.0
            return 2, CRITICAL
        _, E = np.linalg.eigh(0.5 * (M[:3, :3] + M[:3, :3].T))
        for a in range(3):
            V[a, 0] = E[a, 2]
            V[a, 1] = E[a, 1]
        return 2, CRITICAL
    # Householder reflection mapping g onto an axis; its other columns span g-perp
    v = W[:, 0]
    Q = W[:, 1:3]
    for a in range(k):
        v[a] = g[a] / gn
    v[0] += 1.0 if v[0] >= 0.0 else -1.0
    vn = 0.0
    for a in range(k):
        vn += v[a] * v[a]
    for a in range(k):
        for j in range(1, k):
            Q[a, j - 1] = (1.0 if a == j else 0.0) - 2.0 * v[a] * v[j] / vn
    r00 = 0.0
    r01 = 0.0
    r11 = 0.0
    for a in range(k):
        for b in range(k):
            r00 += Q[a, 0] * M[a, b] * Q[b, 0]
            if k == 3:
                r01 += Q[a, 0] * M[a, b] * Q[b, 1]
                r11 += Q[a, 1] * M[a, b] * Q[b, 1]
    if k == 2:
        lam = 1.0 + 0.5 * r00
        scale = max(1.0, abs(lam))
        for a in range(2):
            V[a, 0] = Q[a, 0]
        return 1, NORMAL if abs(lam) <= rank_tol * scale else FALLBACK
    hi, lo, ex, ey = _eig2(r00, r01, r11)
    lam_hi = 1.0 + 0.5 * hi
    lam_lo = 1.0 + 0.5 * lo
    scale = max(1.0, max(abs(lam_hi), abs(lam_lo)))
    null_hi = abs(lam_hi) <= rank_tol * scale
    null_lo = abs(lam_lo) <= rank_tol * scale
    m = 0
    if null_hi or not null_lo:
        for a in range(3):
            V[a, m] = Q[a, 0] * ex + Q[a, 1] * ey
        m += 1
    if null_lo:
        for a in range(3):
            V[a, m] = -Q[a, 0] * ey + Q[a, 1] * ex
        m += 1
    return m, NORMAL if (null_hi or null_lo) else FALLBACK


@njit(cache=True, inline="always")
def _rotation_dirs(x, lc, w1, w2, Vamb):
    # S r = w1 (w2 . r) - w2 (w1 . r) with r = x - centre
    d = x.shape[0]
    p1 = 0.0
    p2 = 0.0
    for a in range(d):
        p1 += w1[a] * (x[a] - lc[a])
        p2 += w2[a] * (x[a] - lc[a])
    nr = np.sqrt(p1 * p1 + p2 * p2)
    if nr == 0.0:
        for a in range(d):
            Vamb[a, 0] = w1[a]
            Vamb[a, 1] = w2[a]
        return 2, CRITICAL
    for a in range(d):
        Vamb[a, 0] = (w1[a] * p2 - w2[a] * p1) / nr
    return 1, NORMAL


@njit(cache=True, inline="always")
def _inside(Q, g, c, lin, ptr, x, s, tol):
    """Whether ``x + s`` satisfies every constraint of some piece."""
    k = x.shape[0]
    for p in range(ptr.shape[0] - 1):
        ok = True
        for j in range(ptr[p], ptr[p + 1]):
            v = -c[j] - tol
            for i in range(k):
                v += g[j, i] * (x[i] + s[i])
            if not lin[j]:
                for i in range(k):
                    qi = 0.0
                    for l in range(k):
                        qi += Q[j, i, l] * (x[l] + s[l])
                    v += (x[i] + s[i]) * qi
            if v > 0.0:
                ok = False
                break
        if ok:
            return True
    return False


@njit(cache=True)
def euler_path(gen, law, x0, dt, max_steps, stride, lc, w1, w2,
               k, orig, h, shape, off, grads, hess, base, basis, rank_tol, grad_tol,
               Q, gq, c, lin, ptr, mode, tol, rec, rect):
    """One Euler path of a single law in ambient coordinates.

    Records every ``stride``-th state into ``rec``/``rect`` while room remains.
    Returns ``(n_recorded, exit_time, exit_point, exited, fallbacks, criticals, qv)``.
    """
    d = x0.shape[0]
    x = x0.copy()
    step = np.empty(d)
    Vamb = np.zeros((d, max(d, 3)))
    Vloc = np.zeros((3, 3))
    y = np.zeros(3)
    g = np.zeros(3)
    M = np.zeros((3, 3))
    W = np.zeros((3, 4))
    nrec = 0
    if rec.shape[0] > 0:
        rec[0] = x
        rect[0] = 0.0
        nrec = 1
    fallbacks = 0
    criticals = 0
    qv = 0.0
    t = 0.0
    countdown = stride
    m, flag = d, NORMAL
    if law == ISOTROPIC:
        for a in range(d):
            Vamb[a, a] = 1.0
    elif law == SEGMENT:
        m = 1
        for a in range(d):
            Vamb[a, 0] = lc[a]
    kf = k[0]
    for n in range(max_steps):
        if law == ROTATION:
            m, flag = _rotation_dirs(x, lc, w1, w2, Vamb)
        elif law == KERNEL:
            for j in range(kf):
                s = 0.0
                for a in range(d):
                    s += (x[a] - base[0, a]) * basis[0, j, a]
                y[j] = s
            field_derivs(0, y, k, orig, h, shape, off, grads, hess, g, M)
            m, flag = kernel_dirs(g, M, kf, rank_tol, grad_tol, Vloc, W)
            for i in range(m):
                for a in range(d):
                    s = 0.0
                    for j in range(kf):
                        s += Vloc[j, i] * basis[0, j, a]
                    Vamb[a, i] = s
        if flag == FALLBACK:
            fallbacks += 1
        elif flag == CRITICAL:
            criticals += 1
        sc = np.sqrt(dt / m)
        for a in range(d):
            step[a] = 0.0
        for i in range(m):
            xi = gen.standard_normal() * sc
            for a in range(d):
                step[a] += Vamb[a, i] * xi
        if not _inside(Q, gq, c, lin, ptr, x, step, tol):
            te = min(segment_exit(Q, gq, c, lin, ptr, mode, x, step, tol), 1.0)
            for a in range(d):
                x[a] += te * step[a]
                qv += (te * step[a]) ** 2
            t += te * dt
            if nrec < rec.shape[0]:
                rec[nrec] = x
                rect[nrec] = t
                nrec += 1
            return nrec, t, x, True, fallbacks, criticals, qv
        for a in range(d):
            x[a] += step[a]
            qv += step[a] * step[a]
        t = (n + 1) * dt
        countdown -= 1
        if countdown == 0 and nrec < rec.shape[0]:
            countdown = stride
            rec[nrec] = x
            rect[nrec] = t
            nrec += 1
    return nrec, t, x, False, fallbacks, criticals, qv


@njit(cache=True)
def _lookup(masks, key):
    lo = 0
    hi = masks.shape[0] - 1
    while lo <= hi:
        mid = (lo + hi) // 2
        if masks[mid] == key:
            return mid
        if masks[mid] < key:
            lo = mid + 1
        else:
            hi = mid - 1
    return -1


@njit(cache=True)
def cascade_path(gen, x0, f0, dt, max_steps,
                 k, orig, h, shape, off, grads, hess, base, basis, rank_tol, grad_tol,
                 rptr, rg, rc, A, b, atol, masks, mask_field):
    """One face-cascade path through a polytope.

    The state lives in the current face's local frame.  A step leaving the
    face (through one of its rows ``rptr[f]:rptr[f+1]``) is cut at the crossing,
    the body's active set there picks the next face, and the path ends once that
    face has no field (dimension at most one).
    Returns ``(exit_time, exit_point, exited, fallbacks, criticals, switches)``.
    """
    d = x0.shape[0]
    f = f0
    kf = k[f]
    y = np.zeros(3)
    for j in range(kf):
        s = 0.0
        for a in range(d):
            s += (x0[a] - base[f, a]) * basis[f, j, a]
        y[j] = s
    z = np.empty(d)
    step = np.zeros(3)
    V = np.zeros((3, 3))
    g = np.zeros(3)
    M = np.zeros((3, 3))
    W = np.zeros((3, 4))
    fallbacks = 0
    criticals = 0
    switches = 0
    t = 0.0
    for n in range(max_steps):
        field_derivs(f, y, k, orig, h, shape, off, grads, hess, g, M)
        m, flag = kernel_dirs(g, M, kf, rank_tol, grad_tol, V, W)
        if flag == FALLBACK:
            fallbacks += 1
        elif flag == CRITICAL:
            criticals += 1
        sc = np.sqrt(dt / m)
        for a in range(3):
            step[a] = 0.0
        for i in range(m):
            xi = gen.standard_normal() * sc
            for a in range(kf):
                step[a] += V[a, i] * xi
        te = 1.0
        for r in range(rptr[f], rptr[f + 1]):
            gy = 0.0
            gs = 0.0
            for a in range(kf):
                gy += rg[r, a] * y[a]
                gs += rg[r, a] * step[a]
            if gs > 0.0:
                frac = (rc[r] - gy) / gs
                if frac < 0.0:
                    frac = 0.0
                if frac < te:
                    te = frac
        if te >= 1.0:
            for a in range(kf):
                y[a] += step[a]
            t += dt
            continue
        for a in range(kf):
            y[a] += te * step[a]
        t += te * dt
        for a in range(d):
            s = base[f, a]
            for j in range(kf):
                s += y[j] * basis[f, j, a]
            z[a] = s
        key = np.int64(0)
        for i in range(A.shape[0]):
            s = -b[i]
            for a in range(d):
                s += A[i, a] * z[a]
            if abs(s) <= atol[i]:
                key |= np.int64(1) << i
        slot = _lookup(masks, key)
        nxt = -1 if slot < 0 else mask_field[slot]
        if nxt < 0:
            return t, z, True, fallbacks, criticals, switches
        f = nxt
        kf = k[f]
        switches += 1
        for j in range(3):
            y[j] = 0.0
        for j in range(kf):
            s = 0.0
            for a in range(d):
                s += (z[a] - base[f, a]) * basis[f, j, a]
            y[j] = s
    for a in range(d):
        s = base[f, a]
        for j in range(kf):
            s += y[j] * basis[f, j, a]
        z[a] = s
    return t, z, False, fallbacks, criticals, switches
