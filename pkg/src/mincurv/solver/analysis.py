"""Finite-difference residuals and level sets of solved fields."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from skimage import measure

from ..nonlinearity import eval_F_many
from .grid import INTERIOR, ValueField


def _stencil_ok(mask: np.ndarray, step: int = 1) -> np.ndarray:
    """Nodes whose ``3^k`` neighbourhood at offsets ``{-step, 0, step}`` is interior."""
    k = mask.ndim
    inner = mask == INTERIOR
    ok = np.zeros_like(inner)
    if any(n <= 2 * step for n in mask.shape):
        return ok
    core = tuple(slice(step, -step) for _ in range(k))
    acc = np.ones(tuple(n - 2 * step for n in mask.shape), dtype=bool)
    for off in np.ndindex(*(3,) * k):
        sl = tuple(slice(o * step, o * step + n - 2 * step) for o, n in zip(off, mask.shape))
        acc &= inner[sl]
    ok[core] = acc
    return ok


def derivatives(values: np.ndarray, h: float, step: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradient and Hessian with spacing ``step * h``.

    Returns arrays of shape ``shape + (k,)`` and ``shape + (k, k)``; entries
    within ``step`` nodes of the grid edge are NaN.
    """
    u = np.asarray(values, dtype=float)
    k = u.ndim
    grad = np.full(u.shape + (k,), np.nan)
    hess = np.full(u.shape + (k, k), np.nan)
    if any(n <= 2 * step for n in u.shape):
        return grad, hess
    core = tuple(slice(step, -step) for _ in range(k))
    d = step * h

    def shifted(offs):
        return u[tuple(slice(step * (1 + o), u.shape[a] - step * (1 - o)) for a, o in enumerate(offs))]

    c = shifted((0,) * k)
    for a in range(k):
        e = [0] * k
        e[a] = 1
        p = shifted(tuple(e))
        m = shifted(tuple(-v for v in e))
        grad[core + (a,)] = (p - m) / (2 * d)
        hess[core + (a, a)] = (p - 2 * c + m) / (d * d)
        for b in range(a + 1, k):
            pp, pm, mp, mm = ([0] * k for _ in range(4))
            pp[a], pp[b] = 1, 1
            pm[a], pm[b] = 1, -1
            mp[a], mp[b] = -1, 1
            mm[a], mm[b] = -1, -1
            v = (shifted(tuple(pp)) - shifted(tuple(pm)) - shifted(tuple(mp)) + shifted(tuple(mm))) / (4 * d * d)
            hess[core + (a, b)] = v
            hess[core + (b, a)] = v
    return grad, hess


def residual_step(h: float) -> int:
    """Difference spacing, in nodes, matching the default game step ``sqrt(h)``.

    The scheme only sees its solution through ``eps``-wide differences, and the
    lattice-scale remainder it leaves behind is O(h^2), which spacing-``h``
    second differences turn into an O(1) error.
    """
    return max(1, int(round(1.0 / math.sqrt(h))))


def residual_field(fld: ValueField, grad_threshold: float = 0.0, step: int | None = None) -> np.ndarray:
    """``F(grad u, hess u) - 1`` at nodes with an interior stencil, NaN elsewhere.

    Differences use spacing ``step * h`` (default :func:`residual_step`).
    Nodes with ``|grad u| <= grad_threshold`` are also NaN.
    """
    g = fld.grid
    s = residual_step(g.h) if step is None else int(step)
    grad, hess = derivatives(fld.values, g.h, s)
    ok = _stencil_ok(g.mask, s) & (np.linalg.norm(np.nan_to_num(grad), axis=-1) > grad_threshold)
    out = np.full(g.shape, np.nan)
    if np.any(ok):
        out[ok] = eval_F_many(grad[ok], hess[ok]) - 1.0
    return out


def residual(fld: ValueField, node: tuple[int, ...], step: int | None = None) -> float:
    """Residual at one grid node (an index tuple)."""
    g = fld.grid
    s = residual_step(g.h) if step is None else int(step)
    node = tuple(int(i) for i in node)
    if any(i < s or i > n - 1 - s for i, n in zip(node, g.shape)):
        raise IndexError("stencil leaves the grid")
    sl = tuple(slice(i - s, i + s + 1) for i in node)
    if not _stencil_ok(g.mask[sl], s)[(s,) * g.dim]:
        raise ValueError("stencil touches non-interior nodes")
    grad, hess = derivatives(fld.values[sl], g.h, s)
    centre = (s,) * g.dim
    return float(eval_F_many(grad[centre][None], hess[centre][None])[0] - 1.0)


def residual_stats(fld: ValueField, grad_threshold: float | None = None) -> dict:
    """Median and 90th percentile of ``|residual|`` over non-critical interior nodes.

    The default threshold is ``sqrt(h)``: on an O(h)-accurate field, smaller
    difference gradients cannot be told apart from a critical point.
    """
    thr = np.sqrt(fld.grid.h) if grad_threshold is None else grad_threshold
    r = residual_field(fld, thr)
    vals = np.abs(r[np.isfinite(r)])
    if vals.size == 0:
        return {"median": None, "p90": None, "count": 0, "grad_threshold": thr}
    return {"median": float(np.median(vals)), "p90": float(np.percentile(vals, 90)),
            "count": int(vals.size), "grad_threshold": thr}


@dataclass
class Contour:
    """Level set ``{u = t}``: polylines for 2-d fields, a triangle mesh for 3-d ones.

    Coordinates are ambient.
    """

    level: float
    polylines: list[np.ndarray] = field(default_factory=list)
    vertices: np.ndarray | None = None
    triangles: np.ndarray | None = None


def extract_levelset(fld: ValueField, t: float) -> Contour:
    """Marching-squares / marching-cubes contour of the field at level ``t``."""
    g = fld.grid
    vmax = float(np.max(fld.values))
    if t > vmax:
        raise ValueError(f"level {t} exceeds the field maximum {vmax}")
    if t < 0:
        raise ValueError("levels must be nonnegative")
    if t >= vmax - 1e-12:
        peak = np.array(np.unravel_index(np.argmax(fld.values), g.shape), dtype=float)
        p = g.frame.to_ambient(g.origin + peak * g.h)
        if g.dim == 2:
            return Contour(t, polylines=[p[None, :]])
        return Contour(t, vertices=p[None, :], triangles=np.zeros((0, 3), np.int64))
    level = max(t, 1e-12)
    if g.dim == 2:
        lines = measure.find_contours(fld.values, level)
        return Contour(t, polylines=[g.frame.to_ambient(g.origin + ln * g.h) for ln in lines])
    verts, tris, _, _ = measure.marching_cubes(fld.values, level)
    return Contour(t, vertices=g.frame.to_ambient(g.origin + verts * g.h), triangles=tris.astype(np.int64))
