"""Compiled Jacobi sweep of the dynamic-programming operator.

Fields live on a regular lattice in ``k = 2`` or ``3`` local coordinates and
are stored flat in C order.  Boundary data for steps that leave the body come
from *face fields*: lower-dimensional lattices packed into one flat array,
each with an affine map from the solve frame to its own frame.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

from .._kernels import segment_exit

SLACK = 1e-13


@njit(cache=True, inline="always")
def interp(vals, off, shape, k, origin, h, y):
    """Multilinear interpolation with weights clamped to the lattice."""
    if k == 1:
        f0 = (y[0] - origin[0]) / h
        i0 = min(max(int(np.floor(f0)), 0), shape[0] - 2)
        t0 = min(max(f0 - i0, 0.0), 1.0)
        return (1 - t0) * vals[off + i0] + t0 * vals[off + i0 + 1]
    if k == 2:
        n1 = shape[1]
        f0 = (y[0] - origin[0]) / h
        f1 = (y[1] - origin[1]) / h
        i0 = min(max(int(np.floor(f0)), 0), shape[0] - 2)
        i1 = min(max(int(np.floor(f1)), 0), shape[1] - 2)
        t0 = min(max(f0 - i0, 0.0), 1.0)
        t1 = min(max(f1 - i1, 0.0), 1.0)
        b = off + i0 * n1 + i1
        return ((1 - t0) * ((1 - t1) * vals[b] + t1 * vals[b + 1])
                + t0 * ((1 - t1) * vals[b + n1] + t1 * vals[b + n1 + 1]))
    n1 = shape[1]
    n2 = shape[2]
    f0 = (y[0] - origin[0]) / h
    f1 = (y[1] - origin[1]) / h
    f2 = (y[2] - origin[2]) / h
    i0 = min(max(int(np.floor(f0)), 0), shape[0] - 2)
    i1 = min(max(int(np.floor(f1)), 0), shape[1] - 2)
    i2 = min(max(int(np.floor(f2)), 0), shape[2] - 2)
    t0 = min(max(f0 - i0, 0.0), 1.0)
    t1 = min(max(f1 - i1, 0.0), 1.0)
    t2 = min(max(f2 - i2, 0.0), 1.0)
    s1 = n2
    s0 = n1 * n2
    b = off + i0 * s0 + i1 * s1 + i2
    c00 = (1 - t2) * vals[b] + t2 * vals[b + 1]
    c01 = (1 - t2) * vals[b + s1] + t2 * vals[b + s1 + 1]
    c10 = (1 - t2) * vals[b + s0] + t2 * vals[b + s0 + 1]
    c11 = (1 - t2) * vals[b + s0 + s1] + t2 * vals[b + s0 + s1 + 1]
    return (1 - t0) * ((1 - t1) * c00 + t1 * c01) + t0 * ((1 - t1) * c10 + t1 * c11)


@njit(cache=True)
def boundary_value(z, encg, encc, row2field, ft0, fT, forig, fh, fshape, fk, foff, fvals):
    """Face-field value at a boundary point ``z`` of a polytope.

    Exactly one active constraint means ``z`` is in the relative interior of
    the facet owning that row.  Anything else (an edge or vertex of a 3-d
    body, or a 2-d body whose facets are edges) carries zero data.
    """
    if ft0.shape[0] == 0:
        return 0.0
    k = z.shape[0]
    cnt = 0
    jj = -1
    for j in range(encc.shape[0]):
        v = -encc[j]
        for l in range(k):
            v += encg[j, l] * z[l]
        if abs(v) <= 1e-9 * (1.0 + abs(encc[j])):
            cnt += 1
            jj = j
    if cnt != 1:
        return 0.0
    f = row2field[jj]
    if f < 0:
        return 0.0
    kf = fk[f]
    y = np.empty(kf)
    for a in range(kf):
        acc = ft0[f, a]
        for l in range(k):
            acc += z[l] * fT[f, l, a]
        y[a] = acc
    return interp(fvals, foff[f], fshape[f], kf, forig[f], fh[f], y)


@njit(cache=True, inline="always")
def step_value(U, shape, k, origin, h, x, d, sgn, eps, deep,
               encQ, encg, encc, enclin, encptr, encmode,
               row2field, ft0, fT, forig, fh, fshape, fk, foff, fvals, buf, step):
    """Extended field at ``x + sgn * eps * d``: interpolated inside, face data at an exit."""
    for l in range(k):
        step[l] = sgn * eps * d[l]
        buf[l] = x[l] + step[l]
    if not deep:
        t = segment_exit(encQ, encg, encc, enclin, encptr, encmode, x, step, 0.0)
        if t < np.inf:
            for l in range(k):
                buf[l] = x[l] + t * step[l]
            return boundary_value(buf, encg, encc, row2field, ft0, fT, forig, fh, fshape, fk, foff, fvals)
    return interp(U, 0, shape, k, origin, h, buf)


@njit(cache=True, inline="always")
def _interp2s(U, n0, n1, o0, o1, h, y0, y1):
    f0 = (y0 - o0) / h
    f1 = (y1 - o1) / h
    i0 = min(max(int(np.floor(f0)), 0), n0 - 2)
    i1 = min(max(int(np.floor(f1)), 0), n1 - 2)
    t0 = min(max(f0 - i0, 0.0), 1.0)
    t1 = min(max(f1 - i1, 0.0), 1.0)
    b = i0 * n1 + i1
    return ((1 - t0) * ((1 - t1) * U[b] + t1 * U[b + 1])
            + t0 * ((1 - t1) * U[b + n1] + t1 * U[b + n1 + 1]))


@njit(cache=True, inline="always")
def _interp3s(U, n0, n1, n2, o0, o1, o2, h, y0, y1, y2):
    f0 = (y0 - o0) / h
    f1 = (y1 - o1) / h
    f2 = (y2 - o2) / h
    i0 = min(max(int(np.floor(f0)), 0), n0 - 2)
    i1 = min(max(int(np.floor(f1)), 0), n1 - 2)
    i2 = min(max(int(np.floor(f2)), 0), n2 - 2)
    t0 = min(max(f0 - i0, 0.0), 1.0)
    t1 = min(max(f1 - i1, 0.0), 1.0)
    t2 = min(max(f2 - i2, 0.0), 1.0)
    s0 = n1 * n2
    b = i0 * s0 + i1 * n2 + i2
    c00 = (1 - t2) * U[b] + t2 * U[b + 1]
    c01 = (1 - t2) * U[b + n2] + t2 * U[b + n2 + 1]
    c10 = (1 - t2) * U[b + s0] + t2 * U[b + s0 + 1]
    c11 = (1 - t2) * U[b + s0 + n2] + t2 * U[b + s0 + n2 + 1]
    return (1 - t0) * ((1 - t1) * c00 + t1 * c01) + t0 * ((1 - t1) * c10 + t1 * c11)


@njit(cache=True, inline="always")
def _deep_value(U, shape, k, origin, h, x, dirs, j, s):
    """Interpolated field at ``x + s * dirs[j]`` for a step known to stay inside."""
    if k == 2:
        return _interp2s(U, shape[0], shape[1], origin[0], origin[1], h,
                         x[0] + s * dirs[j, 0], x[1] + s * dirs[j, 1])
    return _interp3s(U, shape[0], shape[1], shape[2], origin[0], origin[1], origin[2], h,
                     x[0] + s * dirs[j, 0], x[1] + s * dirs[j, 1], x[2] + s * dirs[j, 2])


@njit(cache=True, inline="always")
def _nearest_flat(shape, k, origin, h, x, dirs, j, s):
    idx = 0
    for l in range(k):
        q = int(np.floor((x[l] + s * dirs[j, l] - origin[l]) / h + 0.5))
        q = min(max(q, 0), shape[l] - 1)
        idx = idx * shape[l] + q
    return idx


@njit(cache=True, inline="always")
def _inside_convex(encQ, encg, encc, enclin, y):
    """Membership in a single convex piece."""
    k = y.shape[0]
    for j in range(encc.shape[0]):
        v = -encc[j]
        for l in range(k):
            v += encg[j, l] * y[l]
        if not enclin[j]:
            for l in range(k):
                for m in range(k):
                    v += encQ[j, l, m] * y[l] * y[m]
        if v > 0.0:
            return False
    return True


@njit(cache=True, inline="always")
def _convex_value(U, shape, k, origin, h, x, dirs, j, s, deep, buf, step,
                  encQ, encg, encc, enclin, encptr, encmode,
                  row2field, ft0, fT, forig, fh, fshape, fk, foff, fvals):
    """``(value, interpolant)`` of a step on a convex body.

    The interpolant at the endpoint is returned even when the step exits, since
    cluster bounds are built from it.
    """
    iv = _deep_value(U, shape, k, origin, h, x, dirs, j, s)
    if deep:
        return iv, iv
    for l in range(k):
        step[l] = s * dirs[j, l]
        buf[l] = x[l] + step[l]
    if _inside_convex(encQ, encg, encc, enclin, buf):
        return iv, iv
    if ft0.shape[0] == 0:
        return 0.0, iv
    t = segment_exit(encQ, encg, encc, enclin, encptr, encmode, x, step, 0.0)
    if t == np.inf:
        t = 1.0
    for l in range(k):
        buf[l] = x[l] + t * step[l]
    return boundary_value(buf, encg, encc, row2field, ft0, fT, forig, fh, fshape, fk, foff, fvals), iv


@njit(parallel=True, cache=True)
def sweep(U, Unew, G, shape, k, origin, h, eps, nodes, flat, deep, bestdir,
          dirs, members, cptr, crep, chord,
          encQ, encg, encc, enclin, encptr, encmode,
          row2field, ft0, fT, forig, fh, fshape, fk, foff, fvals, convex, bmax, prune, evals):
    """One Jacobi sweep ``Unew = eps^2 + max_sigma min(U~(x + eps sigma), U~(x - eps sigma))``.

    On convex bodies ``G`` bounds the interpolant's Lipschitz constant near
    each node, which bounds every step of a direction cluster by the
    interpolant at the cluster representative plus ``G * eps * chord``, or
    by ``bmax`` (the largest boundary datum) for steps that exit.  Clusters
    whose bound cannot beat the running maximum are skipped, so the result is
    the exact maximum over the direction set.  Non-convex bodies enumerate
    every direction.  ``evals[i]`` receives the number of steps evaluated at
    node ``i``.  Returns the sup-norm change.
    """
    n = nodes.shape[0]
    nc = cptr.shape[0] - 1
    change = np.zeros(n)
    e2 = eps * eps
    for i in prange(n):
        x = np.empty(k)
        for l in range(k):
            x[l] = origin[l] + nodes[i, l] * h
        buf = np.empty(k)
        step = np.empty(k)
        cnt = 0
        best = -np.inf
        bj = -1
        pb = bestdir[i]
        dp = deep[i]
        if convex:
            if pb >= 0:
                a, _ = _convex_value(U, shape, k, origin, h, x, dirs, pb, eps, dp, buf, step,
                                     encQ, encg, encc, enclin, encptr, encmode,
                                     row2field, ft0, fT, forig, fh, fshape, fk, foff, fvals)
                b, _ = _convex_value(U, shape, k, origin, h, x, dirs, pb, -eps, dp, buf, step,
                                     encQ, encg, encc, enclin, encptr, encmode,
                                     row2field, ft0, fT, forig, fh, fshape, fk, foff, fvals)
                best = min(a, b)
                bj = pb
                cnt += 2
            cb = np.full(nc, np.inf)
            if prune:
                for c in range(nc):
                    r = crep[c]
                    a, ia = _convex_value(U, shape, k, origin, h, x, dirs, r, eps, dp, buf, step,
                                          encQ, encg, encc, enclin, encptr, encmode,
                                          row2field, ft0, fT, forig, fh, fshape, fk, foff, fvals)
                    cnt += 1
                    ua = ia + G[_nearest_flat(shape, k, origin, h, x, dirs, r, eps)] * eps * chord[c]
                    if not dp:
                        ua = max(ua, bmax)
                    if ua + SLACK <= best:
                        cb[c] = -np.inf
                        continue
                    b, ib = _convex_value(U, shape, k, origin, h, x, dirs, r, -eps, dp, buf, step,
                                          encQ, encg, encc, enclin, encptr, encmode,
                                          row2field, ft0, fT, forig, fh, fshape, fk, foff, fvals)
                    cnt += 1
                    ub = ib + G[_nearest_flat(shape, k, origin, h, x, dirs, r, -eps)] * eps * chord[c]
                    if not dp:
                        ub = max(ub, bmax)
                    v = min(a, b)
                    if v > best:
                        best = v
                        bj = r
                    cb[c] = min(ua, ub)
            for c in range(nc):
                if cb[c] + SLACK <= best:
                    continue
                for q in range(cptr[c], cptr[c + 1]):
                    j = members[q]
                    a, _ = _convex_value(U, shape, k, origin, h, x, dirs, j, eps, dp, buf, step,
                                         encQ, encg, encc, enclin, encptr, encmode,
                                         row2field, ft0, fT, forig, fh, fshape, fk, foff, fvals)
                    cnt += 1
                    if a <= best:
                        continue
                    b, _ = _convex_value(U, shape, k, origin, h, x, dirs, j, -eps, dp, buf, step,
                                         encQ, encg, encc, enclin, encptr, encmode,
                                         row2field, ft0, fT, forig, fh, fshape, fk, foff, fvals)
                    cnt += 1
                    v = min(a, b)
                    if v > best:
                        best = v
                        bj = j
        else:
            for jj in range(-1, dirs.shape[0]):
                j = pb if jj < 0 else jj
                if j < 0:
                    continue
                a = step_value(U, shape, k, origin, h, x, dirs[j], 1.0, eps, dp, encQ, encg, encc, enclin,
                               encptr, encmode, row2field, ft0, fT, forig, fh, fshape, fk, foff, fvals, buf, step)
                cnt += 1
                if a <= best:
                    continue
                b = step_value(U, shape, k, origin, h, x, dirs[j], -1.0, eps, dp, encQ, encg, encc, enclin,
                               encptr, encmode, row2field, ft0, fT, forig, fh, fshape, fk, foff, fvals, buf, step)
                cnt += 1
                v = min(a, b)
                if v > best:
                    best = v
                    bj = j
        f = flat[i]
        Unew[f] = e2 + best
        bestdir[i] = bj
        evals[i] = cnt
        change[i] = abs(Unew[f] - U[f])
    return change.max() if n > 0 else 0.0
