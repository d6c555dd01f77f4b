"""Monotone fixed-point solve of the dynamic programming principle.

One step of the scheme at an interior node ``x`` is::

    u(x) = eps^2 + max_sigma min( u~(x + eps sigma), u~(x - eps sigma) )

over a finite set of antipodal direction pairs.  ``u~`` interpolates the
current field inside the body; a step that leaves the body takes the
boundary datum at its first crossing.  Polytopes carry face fields on their
facets (solved one dimension lower) and zero on faces of dimension at most
one.  Iteration starts from the enclosing-ball bound ``r^2 - |x - c|^2`` and
runs Jacobi sweeps until the sup-norm update falls below ``fp_tol``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from numba import njit, prange
from scipy.ndimage import maximum_filter

from .. import _kernels
from ..geometry import Body, Face, GeometryError, enclosing_ball, encode, face_of, faces, make_body
from . import _sweep
from .directions import DirectionSet, make_directions
from .grid import BOUNDARY, INTERIOR, OUTSIDE, Grid, ValueField, build_grid

log = logging.getLogger(__name__)


def default_n_dirs(k: int, eps: float) -> int:
    """Direction pairs used when the config leaves ``n_dirs`` unset.

    In two dimensions the value lost to a finite direction set scales like
    ``1 / (eps * n)``; taking ``n = 16 / eps^2`` makes that loss vanish like
    ``eps`` under refinement.  Three-dimensional sets are Fibonacci points on
    a hemisphere.
    """
    if k == 2:
        return max(32, 2 * int(math.ceil(8.0 / eps ** 2)))
    if k == 3:
        return max(128, 2 * int(math.ceil(8.0 / eps ** 2)))
    return 1


@dataclass(frozen=True)
class SchemeConfig:
    """Discretisation parameters.

    ``eps`` defaults to ``sqrt(h)``, ``fp_tol`` to ``1e-8 + 1e-4 eps^2`` and
    ``max_sweeps`` to ``10 r^2 / eps^2`` for an enclosing ball of radius ``r``.
    """

    h: float
    eps: float | None = None
    n_dirs: int | None = None
    fp_tol: float | None = None
    max_sweeps: int | None = None
    prune: bool = True

    def __post_init__(self) -> None:
        if not self.h > 0:
            raise ValueError("h must be positive")
        if self.eps is not None and self.eps < self.h:
            raise ValueError("eps must be at least h")
        if self.n_dirs is not None and self.n_dirs < 1:
            raise ValueError("n_dirs must be positive")
        if self.fp_tol is not None and not self.fp_tol > 0:
            raise ValueError("fp_tol must be positive")
        if self.max_sweeps is not None and self.max_sweeps < 1:
            raise ValueError("max_sweeps must be positive")

    @property
    def step(self) -> float:
        return float(self.eps) if self.eps is not None else math.sqrt(self.h)

    @property
    def tol(self) -> float:
        return self.fp_tol if self.fp_tol is not None else 1e-8 + 1e-4 * self.step ** 2

    def dirs_for(self, k: int) -> int:
        n = self.n_dirs if self.n_dirs is not None else default_n_dirs(k, self.step)
        if n < k:
            raise ValueError(f"n_dirs={n} is below the dimension {k}")
        return n

    def sweeps_for(self, r2: float) -> int:
        if self.max_sweeps is not None:
            return self.max_sweeps
        return max(10, int(math.ceil(10.0 * r2 / self.step ** 2)))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SolveReport:
    sweeps: int
    final_change: float
    converged: bool
    wall_time: float
    h: float
    eps: float
    n_dirs: int
    n_interior: int
    r2: float
    residual_median: float | None = None
    residual_p90: float | None = None
    faces_solved: int = 1
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


class ZeroField:
    """The identically zero field carried by faces of dimension at most one."""

    def __init__(self, face: Face | None = None):
        self.face = face

    def __call__(self, x):
        X = np.asarray(x, dtype=float)
        return 0.0 if X.ndim == 1 else np.zeros(X.shape[0])


class SolveError(RuntimeError):
    pass


# ---------------------------------------------------------------- packing


@dataclass
class _FaceData:
    row2field: np.ndarray
    t0: np.ndarray
    T: np.ndarray
    orig: np.ndarray
    h: np.ndarray
    shape: np.ndarray
    k: np.ndarray
    off: np.ndarray
    vals: np.ndarray

    @property
    def arrays(self) -> tuple:
        return self.row2field, self.t0, self.T, self.orig, self.h, self.shape, self.k, self.off, self.vals

    @property
    def vmax(self) -> float:
        return float(self.vals.max()) if self.vals.size else 0.0


def _empty_face_data(m: int) -> _FaceData:
    return _FaceData(np.full(m, -1, np.int64), np.zeros((0, 3)), np.zeros((0, 3, 3)), np.zeros((0, 3)),
                     np.zeros(0), np.zeros((0, 3), np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64),
                     np.zeros(0))


def _pack_face_data(body: Body, grid: Grid, enc, facet_fields: Mapping[Face, object] | None) -> _FaceData:
    m = enc.c.shape[0]
    data = _empty_face_data(m)
    if not facet_fields or not body.is_polytope:
        return data
    top = face_of(body, body.vertices.mean(axis=0))
    fields = [(f, v) for f, v in facet_fields.items() if isinstance(v, ValueField)]
    if not fields:
        return data
    n = len(fields)
    t0 = np.zeros((n, 3))
    T = np.zeros((n, 3, 3))
    orig = np.zeros((n, 3))
    hs = np.zeros(n)
    shp = np.ones((n, 3), np.int64)
    ks = np.zeros(n, np.int64)
    offs = np.zeros(n, np.int64)
    chunks = []
    off = 0
    Bg, base_g = grid.frame.basis, grid.frame.base
    for i, (f, fld) in enumerate(fields):
        fr = fld.grid.frame
        extra = f.active_indices - top.active_indices
        if len(extra) != 1:
            raise SolveError("face fields must live on facets of the body")
        (hidx,) = tuple(extra)
        rows = np.flatnonzero(enc.source == hidx)
        data.row2field[rows] = i
        kf = fr.dim
        ks[i] = kf
        t0[i, :kf] = (base_g - fr.base) @ fr.basis.T
        T[i, :grid.dim, :kf] = Bg @ fr.basis.T
        orig[i, :kf] = fld.grid.origin
        hs[i] = fld.grid.h
        shp[i, :kf] = fld.grid.shape
        offs[i] = off
        chunks.append(np.ascontiguousarray(fld.values.ravel()))
        off += chunks[-1].size
    data.t0, data.T, data.orig, data.h, data.shape, data.k, data.off = t0, T, orig, hs, shp, ks, offs
    data.vals = np.concatenate(chunks)
    return data


@njit(cache=True)
def _boundary_values(Y, encg, encc, row2field, ft0, fT, forig, fh, fshape, fk, foff, fvals):
    out = np.empty(Y.shape[0])
    for i in range(Y.shape[0]):
        out[i] = _sweep.boundary_value(Y[i], encg, encc, row2field, ft0, fT, forig, fh, fshape, fk, foff, fvals)
    return out


@njit(parallel=True, cache=True)
def _deep_flags(X, dirs, eps, encQ, encg, encc, enclin, encptr, encmode):
    n = X.shape[0]
    k = X.shape[1]
    out = np.ones(n, dtype=np.bool_)
    for i in prange(n):
        s = np.empty(k)
        for j in range(dirs.shape[0]):
            for sg in (1.0, -1.0):
                for l in range(k):
                    s[l] = sg * eps * dirs[j, l]
                if _kernels.segment_exit(encQ, encg, encc, enclin, encptr, encmode, X[i], s, 0.0) < np.inf:
                    out[i] = False
                    break
            if not out[i]:
                break
    return out


# ---------------------------------------------------------------- problem


class _Problem:
    """Everything a sweep needs, prepared once per solve."""

    def __init__(self, body: Body, grid: Grid, cfg: SchemeConfig,
                 facet_fields: Mapping[Face, object] | None = None):
        self.body, self.grid, self.cfg = body, grid, cfg
        k = grid.dim
        self.k = k
        self.eps = cfg.step
        self.dirset: DirectionSet = make_directions(k, cfg.dirs_for(k))
        self.enc = encode(body, grid.frame)
        self.fd = _pack_face_data(body, grid, self.enc, facet_fields)
        self.convex = self.enc.mode == 0 or (self.enc.mode == 1 and self.enc.ptr.size == 2)
        self.center, r = enclosing_ball(body)
        self.r2 = r * r
        self.shape = np.array(grid.shape, np.int64)
        mask = grid.mask.ravel()
        self.flat = np.flatnonzero(mask == INTERIOR).astype(np.int64)
        self.nodes = np.ascontiguousarray(np.argwhere(grid.mask == INTERIOR).astype(np.int64))
        Y = grid.local_points().reshape(-1, k)
        self.Y = Y
        X = np.ascontiguousarray(Y[self.flat])
        self.deep = _deep_flags(X, self.dirset.dirs, self.eps, *self.enc.arrays)
        self.bestdir = np.full(self.flat.size, -1, np.int64)
        chord_max = float(self.dirset.chord.max()) if self.dirset.chord.size else 0.0
        self.window = int(math.ceil(self.eps * chord_max / grid.h + 2.5))

    def boundary_field(self) -> np.ndarray:
        """Fixed values at boundary and outside nodes; interior entries are zero."""
        g = self.grid
        out = np.zeros(g.mask.size)
        if self.fd.t0.shape[0] == 0:
            return out
        mask = g.mask.ravel()
        bnd = np.flatnonzero(mask == BOUNDARY)
        out[bnd] = _boundary_values(np.ascontiguousarray(self.Y[bnd]), self.enc.g, self.enc.c, *self.fd.arrays)
        outs = np.flatnonzero(mask == OUTSIDE)
        if outs.size:
            # radial projection from an interior point onto the boundary
            p0 = g.frame.to_local(self.body.vertices.mean(axis=0))
            S = np.ascontiguousarray(self.Y[outs] - p0)
            P0 = np.ascontiguousarray(np.broadcast_to(p0, S.shape))
            t = _kernels.segment_exit_many(*self.enc.arrays, P0, S, 0.0)
            t = np.where(np.isfinite(t), t, 1.0)
            Z = np.ascontiguousarray(P0 + t[:, None] * S)
            out[outs] = _boundary_values(Z, self.enc.g, self.enc.c, *self.fd.arrays)
        return out

    def initial(self) -> np.ndarray:
        u = self.boundary_field()
        X = self.grid.frame.to_ambient(self.Y[self.flat])
        u[self.flat] = np.maximum(self.r2 - np.sum((X - self.center) ** 2, axis=1), 0.0)
        return u

    def lipschitz(self, U: np.ndarray) -> np.ndarray:
        Ug = U.reshape(self.grid.shape)
        E = np.zeros_like(Ug)
        for ax in range(self.k):
            d = np.abs(np.diff(Ug, axis=ax))
            lo = [slice(None)] * self.k
            hi = [slice(None)] * self.k
            lo[ax] = slice(0, -1)
            hi[ax] = slice(1, None)
            E[tuple(lo)] = np.maximum(E[tuple(lo)], d)
            E[tuple(hi)] = np.maximum(E[tuple(hi)], d)
        G = maximum_filter(E, size=2 * self.window + 1, mode="nearest")
        return np.ascontiguousarray(G.ravel() * (math.sqrt(self.k) / self.grid.h))

    def apply(self, U: np.ndarray, out: np.ndarray, prune: bool | None = None) -> float:
        prune = self.cfg.prune if prune is None else prune
        G = self.lipschitz(U) if prune else np.zeros(1)
        ds = self.dirset
        self.evals = np.zeros(self.flat.size, np.int64)
        return _sweep.sweep(
            U, out, G, self.shape, self.k, self.grid.origin, self.grid.h, self.eps,
            self.nodes, self.flat, self.deep, self.bestdir,
            ds.dirs, ds.members, ds.cptr, ds.crep, ds.chord,
            *self.enc.arrays, *self.fd.arrays, self.convex, self.fd.vmax, prune, self.evals,
        )


# ---------------------------------------------------------------- public API


def dpp_operator(field: ValueField, cfg: SchemeConfig,
                 boundary: Mapping[Face, object] | None = None) -> ValueField:
    """One application of the scheme operator to ``field``.

    Interior nodes are updated; boundary and outside nodes keep their values.
    ``boundary`` maps facets of a polytope body to their solved fields.
    """
    if field.body is None:
        raise ValueError("field has no body attached")
    prob = _Problem(field.body, field.grid, cfg, boundary)
    U = np.ascontiguousarray(field.values.ravel(), dtype=float)
    out = U.copy()
    prob.apply(U, out, prune=False)
    return ValueField(field.grid, out.reshape(field.grid.shape), field.face, field.body)


def solve_body(body: Body, cfg: SchemeConfig, facet_fields: Mapping[Face, object] | None = None,
               face: Face | None = None) -> tuple[ValueField, SolveReport]:
    """Fixed point of the scheme on ``body``, iterated down from the enclosing-ball bound.

    ``facet_fields`` supplies boundary data on a polytope's facets (see
    :func:`solve_hierarchical`); without it all boundary data are zero.
    Non-convergence within ``max_sweeps`` is flagged in the report, not raised.
    """
    t_start = time.perf_counter()
    grid = build_grid(body, cfg.h)
    prob = _Problem(body, grid, cfg, facet_fields)
    U = prob.initial()
    out = U.copy()
    tol = cfg.tol
    max_sweeps = cfg.sweeps_for(prob.r2)
    change = np.inf
    sweeps = 0
    while sweeps < max_sweeps:
        change = prob.apply(U, out)
        U, out = out, U
        sweeps += 1
        if change <= tol:
            break
    converged = change <= tol
    if not converged:
        log.warning("no convergence after %d sweeps (last change %.3e > %.3e)", sweeps, change, tol)
    field_ = ValueField(grid, U.reshape(grid.shape).copy(), face, body,
                        meta={"eps": prob.eps, "n_dirs": len(prob.dirset), "r2": prob.r2})
    report = SolveReport(
        sweeps=sweeps, final_change=float(change), converged=bool(converged),
        wall_time=time.perf_counter() - t_start, h=cfg.h, eps=prob.eps, n_dirs=len(prob.dirset),
        n_interior=int(prob.flat.size), r2=prob.r2,
    )
    log.info("solved %s on %s nodes in %d sweeps (%.1fs)", body.kind, grid.shape, sweeps, report.wall_time)
    return field_, report


def _vertex_key(points: np.ndarray) -> frozenset:
    return frozenset(tuple(np.round(p, 9)) for p in points)


def solve_hierarchical(body: Body, cfg: SchemeConfig) -> tuple[dict[Face, object], SolveReport]:
    """Solve every face of a polytope in increasing dimension.

    Faces of dimension at most one get :class:`ZeroField`.  Each higher face is
    solved in its own affine hull with its facets' fields as boundary data.
    The returned report belongs to the top-level solve, with the total wall
    time and the number of faces solved.
    """
    if not body.is_polytope:
        raise GeometryError("hierarchical solves need a polytope")
    t_start = time.perf_counter()
    solved: dict[Face, object] = {}
    by_vertices: dict[frozenset, Face] = {}
    report = None
    count = 0
    for f in faces(body):
        pts = body.vertices[list(f.vertex_ids)]
        by_vertices[_vertex_key(pts)] = f
        if f.dim <= 1:
            solved[f] = ZeroField(f)
            continue
        sub = body if f.dim == body.dim else make_body({"kind": "polytope", "vertices": pts.tolist()})
        data = {}
        for g in faces(sub):
            if g.dim == sub.dim - 1 and g.dim >= 2:
                data[g] = solved[by_vertices[_vertex_key(sub.vertices[list(g.vertex_ids)])]]
        fld, rep = solve_body(sub, cfg, data, face=f)
        solved[f] = fld
        report = rep
        count += 1
        if not rep.converged:
            log.warning("face %s did not converge", f.key)
    if report is None:
        raise GeometryError("polytope has no face of dimension two or more")
    report.faces_solved = count
    report.wall_time = time.perf_counter() - t_start
    return solved, report


def solve(body: Body, cfg: SchemeConfig) -> tuple[ValueField, SolveReport]:
    """Top-level field of any body, going through the face hierarchy for polytopes."""
    if body.is_polytope and body.dim >= 3:
        fields, report = solve_hierarchical(body, cfg)
        top = max((f for f in fields if isinstance(fields[f], ValueField)), key=lambda f: f.dim)
        return fields[top], report
    return solve_body(body, cfg)


@dataclass
class RefineRow:
    h: float
    values: list[float]
    diffs: list[float] | None
    sweeps: int
    wall_time: float


def refine_study(body: Body, h_list: Sequence[float], probes: Sequence[Sequence[float]],
                 cfg: SchemeConfig | None = None) -> list[RefineRow]:
    """Solve at each ``h`` (decreasing) and tabulate probe values and successive differences.

    ``cfg`` supplies every parameter except ``h``; ``eps`` is reset to ``sqrt(h)``
    unless the template sets it.
    """
    hs = list(h_list)
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise ValueError("h_list must be strictly decreasing")
    template = cfg or SchemeConfig(h=hs[0])
    rows: list[RefineRow] = []
    prev = None
    for h in hs:
        c = replace(template, h=h)
        fld, rep = solve(body, c)
        vals = [float(fld(np.asarray(p, dtype=float))) for p in probes]
        diffs = None if prev is None else [abs(a - b) for a, b in zip(vals, prev)]
        rows.append(RefineRow(h, vals, diffs, rep.sweeps, rep.wall_time))
        prev = vals
    return rows


def cauchy_decreasing(rows: Sequence[RefineRow]) -> bool:
    """Whether successive differences shrink at every probe."""
    diffs = [r.diffs for r in rows if r.diffs is not None]
    return all(all(b < a for a, b in zip(d0, d1)) for d0, d1 in zip(diffs, diffs[1:]))
