"""Compact bodies, membership and boundary queries, and polytope face lattices.

Supported body kinds:

``polytope``
    Intersection of halfspaces ``n . x <= b`` and/or the convex hull of a
    vertex list.  Vertex lists may span a lower-dimensional affine subspace.
``segment``
    Convex hull of two endpoints (a one-dimensional polytope).
``ball``
    Euclidean ball, optionally confined to the span of a ``basis`` (a disc
    floating in R^3, say).
``product``
    Cartesian product of two or more factor bodies.
``union``
    Union of member bodies (not necessarily convex).
``implicit``
    A bounding polytope intersected with quadric sublevel sets
    ``x^T Q x + g . x <= c``; covers thin non-convex domains such as
    ``{|y| <= 0.01 + x^2}``.

Internally every body is reduced to a constraint encoding (see
:mod:`mincurv._kernels`), which serves membership tests, segment exits and
the solver's grid masks.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, NamedTuple, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull

from . import _kernels

log = logging.getLogger(__name__)

ACTIVE_TOL = 1e-9
RANK_TOL = 1e-10
KINDS = ("polytope", "segment", "ball", "product", "union", "implicit")


class GeometryError(ValueError):
    """Invalid body description or unsupported query."""


@dataclass(frozen=True)
class HalfSpace:
    """The set ``{x : normal . x <= offset}`` with a unit normal."""

    normal: np.ndarray
    offset: float

    @classmethod
    def normalized(cls, normal: Sequence[float], offset: float) -> HalfSpace:
        n = np.asarray(normal, dtype=float)
        norm = np.linalg.norm(n)
        if norm == 0.0:
            raise GeometryError("halfspace with zero normal")
        return cls(n / norm, float(offset) / norm)

    def slack(self, x: np.ndarray) -> np.ndarray:
        return self.offset - np.asarray(x, dtype=float) @ self.normal


@dataclass(frozen=True)
class AffineHull:
    """Affine subspace ``base + span(basis rows)`` with orthonormal rows."""

    base: np.ndarray
    basis: np.ndarray

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def ambient_dim(self) -> int:
        return self.base.shape[0]

    def to_local(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.base) @ self.basis.T

    def to_ambient(self, y: np.ndarray) -> np.ndarray:
        return self.base + np.asarray(y, dtype=float) @ self.basis

    def project(self, x: np.ndarray) -> np.ndarray:
        return self.to_ambient(self.to_local(x))

    def complement(self) -> np.ndarray:
        """Orthonormal rows spanning the orthogonal complement of the hull."""
        d = self.ambient_dim
        if self.dim == d:
            return np.zeros((0, d))
        if self.dim == 0:
            return np.eye(d)
        _, _, vt = np.linalg.svd(self.basis, full_matrices=True)
        return vt[self.dim:]

    @classmethod
    def full(cls, d: int) -> AffineHull:
        return cls(np.zeros(d), np.eye(d))


@dataclass(frozen=True)
class Quadric:
    """Sublevel set ``{x : x^T Q x + g . x <= c}``."""

    Q: np.ndarray
    g: np.ndarray
    c: float

    def value(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.einsum("...i,ij,...j->...", x, self.Q, x) + x @ self.g - self.c

    @property
    def is_convex(self) -> bool:
        return bool(np.all(np.linalg.eigvalsh(0.5 * (self.Q + self.Q.T)) >= -1e-14))


@dataclass(frozen=True, eq=False)
class Face:
    """A face of a polytope, identified by its set of active halfspaces."""

    active_indices: frozenset[int]
    dim: int
    affine_hull: AffineHull
    vertex_ids: tuple[int, ...] | None = None

    @property
    def key(self) -> tuple[int, ...]:
        return tuple(sorted(self.active_indices))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Face):
            return NotImplemented
        return self.active_indices == other.active_indices and self.dim == other.dim

    def __hash__(self) -> int:
        return hash((self.active_indices, self.dim))


@dataclass(frozen=True)
class Skeleton:
    k: int
    faces: tuple[Face, ...]


class Clip(NamedTuple):
    """Result of :func:`boundary_clip`.

    ``exited`` is false when the whole segment stays in the body, in which case
    ``point`` is the segment's end.  ``face`` is the polytope face hit.
    """

    point: np.ndarray
    exited: bool
    face: Face | None


@dataclass(frozen=True)
class Encoding:
    """Constraint encoding of a body in some affine frame."""

    Q: np.ndarray
    g: np.ndarray
    c: np.ndarray
    linear: np.ndarray
    ptr: np.ndarray
    mode: int
    source: np.ndarray

    @property
    def arrays(self) -> tuple:
        return self.Q, self.g, self.c, self.linear, self.ptr, self.mode


@dataclass(frozen=True, eq=False)
class Body:
    """A compact body.  Build instances with :func:`make_body`."""

    kind: str
    ambient_dim: int
    affine_hull: AffineHull
    halfspaces: tuple[HalfSpace, ...] = ()
    vertices: np.ndarray | None = None
    center: np.ndarray | None = None
    radius: float | None = None
    parts: tuple[Body, ...] = ()
    quadrics: tuple[Quadric, ...] = ()
    spec: dict | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return self.affine_hull.dim

    @property
    def is_polytope(self) -> bool:
        return self.kind in ("polytope", "segment") or (
            self.kind == "product" and self.vertices is not None
        )

    @property
    def A(self) -> np.ndarray:
        return np.array([h.normal for h in self.halfspaces]).reshape(-1, self.ambient_dim)

    @property
    def b(self) -> np.ndarray:
        return np.array([h.offset for h in self.halfspaces])

    def __repr__(self) -> str:
        return f"Body(kind={self.kind!r}, ambient_dim={self.ambient_dim}, dim={self.dim})"


# ---------------------------------------------------------------- frames


def _lex_sorted(points: np.ndarray) -> np.ndarray:
    order = np.lexsort(points.T[::-1])
    return points[order]


def canonical_frame(points: np.ndarray, ambient_dim: int | None = None) -> AffineHull:
    """Affine hull of ``points`` in a frame that depends only on the point set.

    Full-dimensional sets get the ambient identity frame.  Otherwise the base
    is the lexicographically first point and the basis comes from
    Gram-Schmidt over the differences to the remaining sorted points, so that
    congruent faces listed in corresponding orders share local coordinates.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = pts.shape[1] if ambient_dim is None else ambient_dim
    pts = _lex_sorted(pts)
    base = pts[0]
    diffs = pts[1:] - base
    scale = max(1.0, float(np.abs(diffs).max(initial=0.0)))
    if diffs.size and np.linalg.matrix_rank(diffs, tol=1e-9 * scale) == d:
        return AffineHull.full(d)
    rows: list[np.ndarray] = []
    for v in diffs:
        w = v.copy()
        for r in rows:
            w -= (w @ r) * r
        for r in rows:
            w -= (w @ r) * r
        nw = np.linalg.norm(w)
        if nw > 1e-9 * scale:
            rows.append(w / nw)
    basis = np.array(rows).reshape(len(rows), d)
    return AffineHull(base, basis)


# ---------------------------------------------------------------- construction


def make_body(spec: dict[str, Any]) -> Body:
    """Validate a body description and build the :class:`Body`.

    Raises :class:`GeometryError` for unknown keys or kinds, dimension
    mismatches, empty or unbounded polytopes.
    """
    if not isinstance(spec, dict):
        raise GeometryError("body spec must be a mapping")
    kind = spec.get("kind")
    builders = {
        "polytope": _make_polytope,
        "segment": _make_segment,
        "ball": _make_ball,
        "product": _make_product,
        "union": _make_union,
        "implicit": _make_implicit,
    }
    if kind not in builders:
        raise GeometryError(f"unknown body kind {kind!r}; expected one of {KINDS}")
    allowed = {
        "polytope": {"halfspaces", "vertices"},
        "segment": {"endpoints"},
        "ball": {"center", "radius", "basis"},
        "product": {"factors"},
        "union": {"members"},
        "implicit": {"bounds", "quadrics"},
    }[kind] | {"kind", "dim"}
    unknown = set(spec) - allowed
    if unknown:
        raise GeometryError(f"unknown keys for {kind}: {sorted(unknown)}")
    body = builders[kind](spec)
    if "dim" in spec and int(spec["dim"]) != body.ambient_dim:
        raise GeometryError(f"dim={spec['dim']} but payload lives in R^{body.ambient_dim}")
    return body


def load_body(path: str | Path) -> Body:
    """Read a body spec from a JSON or YAML file."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() in (".yaml", ".yml"):
        import yaml

        spec = yaml.safe_load(text)
    else:
        spec = json.loads(text)
    return make_body(spec)


def _as_matrix(rows: Any, what: str) -> np.ndarray:
    try:
        arr = np.asarray(rows, dtype=float)
    except (TypeError, ValueError) as exc:
        raise GeometryError(f"{what} must be a numeric array") from exc
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise GeometryError(f"{what} must be a non-empty 2-d array")
    if not np.all(np.isfinite(arr)):
        raise GeometryError(f"{what} contains non-finite entries")
    return arr


def _dedupe_points(pts: np.ndarray) -> np.ndarray:
    out: list[np.ndarray] = []
    for p in pts:
        if not any(np.linalg.norm(p - q) <= 1e-9 * (1 + np.linalg.norm(q)) for q in out):
            out.append(p)
    return np.array(out)


def _vertices_of(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    m, d = A.shape
    res = linprog(np.zeros(d), A_ub=A, b_ub=b, bounds=[(None, None)] * d, method="highs")
    if res.status == 2:
        raise GeometryError("empty body: halfspaces are infeasible")
    for i in range(d):
        for sgn in (1.0, -1.0):
            c = np.zeros(d)
            c[i] = -sgn
            r = linprog(c, A_ub=A, b_ub=b, bounds=[(None, None)] * d, method="highs")
            if r.status == 3:
                raise GeometryError("non-compact body: halfspaces are unbounded")
    tol = ACTIVE_TOL * (1 + np.abs(b))
    verts = []
    for idx in itertools.combinations(range(m), d):
        M = A[list(idx)]
        s = np.linalg.svd(M, compute_uv=False)
        if s[-1] <= RANK_TOL * s[0]:
            continue
        x = np.linalg.solve(M, b[list(idx)])
        if np.all(A @ x - b <= tol):
            verts.append(x)
    if not verts:
        # lower-dimensional polytope: every vertex is degenerate in the above sense
        raise GeometryError("could not enumerate vertices of the halfspace body")
    return _dedupe_points(np.array(verts))


def _hull_halfspaces(V: np.ndarray) -> tuple[AffineHull, list[HalfSpace], np.ndarray]:
    """Facet halfspaces of conv(V) within its hull, lifted to the ambient space.

    Also returns equality pairs pinning the hull and the extreme points of V.
    """
    d = V.shape[1]
    frame = canonical_frame(V, d)
    k = frame.dim
    Y = frame.to_local(V)
    hs: list[HalfSpace] = []
    if k >= 2:
        hull = ConvexHull(Y)
        ext = V[np.sort(hull.vertices)]
        eqs: list[np.ndarray] = []
        for e in hull.equations:
            if not any(np.allclose(e, f, atol=1e-10) for f in eqs):
                eqs.append(e)
        for e in eqs:
            n_amb = e[:-1] @ frame.basis
            hs.append(HalfSpace.normalized(n_amb, -e[-1] + n_amb @ frame.base))
    elif k == 1:
        t = Y[:, 0]
        ext = V[[int(np.argmin(t)), int(np.argmax(t))]]
        u = frame.basis[0]
        hs.append(HalfSpace.normalized(u, float(t.max()) + u @ frame.base))
        hs.append(HalfSpace.normalized(-u, -float(t.min()) - u @ frame.base))
    else:
        ext = V[:1]
    for w in frame.complement():
        hs.append(HalfSpace.normalized(w, w @ frame.base))
        hs.append(HalfSpace.normalized(-w, -(w @ frame.base)))
    return frame, hs, _dedupe_points(ext)


def _polytope_from_vertices(kind: str, V: np.ndarray, spec: dict) -> Body:
    V = _dedupe_points(V)
    frame, hs, ext = _hull_halfspaces(V)
    return Body(kind, V.shape[1], frame, tuple(hs), vertices=ext, spec=spec)


def _make_polytope(spec: dict) -> Body:
    if "halfspaces" in spec:
        rows = _as_matrix(spec["halfspaces"], "halfspaces")
        A, b = rows[:, :-1], rows[:, -1]
        d = A.shape[1]
        if d == 0:
            raise GeometryError("halfspace rows need at least one normal entry")
        hs = []
        for a, bb in zip(A, b):
            h = HalfSpace.normalized(a, bb)
            # repeated rows would give two indices for one facet
            if not any(np.allclose(h.normal, o.normal, atol=1e-12) and abs(h.offset - o.offset) <= 1e-12
                       for o in hs):
                hs.append(h)
        An = np.array([h.normal for h in hs])
        bn = np.array([h.offset for h in hs])
        V = _vertices_of(An, bn)
        if "vertices" in spec:
            given = _as_matrix(spec["vertices"], "vertices")
            if given.shape[1] != d:
                raise GeometryError("vertices and halfspaces disagree on dimension")
            if np.any(given @ An.T - bn > 1e-10):
                raise GeometryError("a listed vertex violates the halfspace constraints")
        frame = canonical_frame(V, d)
        if frame.dim < d:
            # normalize to the hull representation so faces are well defined
            return _polytope_from_vertices("polytope", V, spec)
        return Body("polytope", d, frame, tuple(hs), vertices=V, spec=spec)
    if "vertices" in spec:
        return _polytope_from_vertices("polytope", _as_matrix(spec["vertices"], "vertices"), spec)
    raise GeometryError("polytope needs 'halfspaces' or 'vertices'")


def _make_segment(spec: dict) -> Body:
    E = _as_matrix(spec.get("endpoints"), "endpoints")
    if E.shape[0] != 2:
        raise GeometryError("segment needs exactly two endpoints")
    if np.linalg.norm(E[0] - E[1]) == 0.0:
        raise GeometryError("segment endpoints coincide")
    return _polytope_from_vertices("segment", E, spec)


def _make_ball(spec: dict) -> Body:
    if "center" not in spec or "radius" not in spec:
        raise GeometryError("ball needs 'center' and 'radius'")
    c = np.asarray(spec["center"], dtype=float).ravel()
    r = float(spec["radius"])
    if not r > 0.0 or not np.isfinite(r):
        raise GeometryError("ball radius must be positive")
    d = c.shape[0]
    if "basis" in spec:
        B = _as_matrix(spec["basis"], "basis")
        if B.shape[1] != d:
            raise GeometryError("ball basis dimension mismatch")
        q, _ = np.linalg.qr(B.T)
        frame = AffineHull(c, q.T.copy()) if B.shape[0] < d else AffineHull.full(d)
    else:
        frame = AffineHull.full(d)
    return Body("ball", d, frame, center=c, radius=r, spec=spec)


def _make_product(spec: dict) -> Body:
    factors = spec.get("factors")
    if not isinstance(factors, list) or len(factors) < 2:
        raise GeometryError("product needs a list of at least two factors")
    parts = tuple(make_body(f) for f in factors)
    dims = [p.ambient_dim for p in parts]
    d = sum(dims)
    offs = np.cumsum([0] + dims)
    base = np.concatenate([p.affine_hull.base for p in parts])
    rows = []
    for p, o in zip(parts, offs):
        for r in p.affine_hull.basis:
            row = np.zeros(d)
            row[o:o + p.ambient_dim] = r
            rows.append(row)
    frame = AffineHull(base, np.array(rows).reshape(-1, d))
    if len(rows) == d:
        frame = AffineHull.full(d)
    hs = []
    verts = None
    if all(p.is_polytope for p in parts):
        for p, o in zip(parts, offs):
            for h in p.halfspaces:
                n = np.zeros(d)
                n[o:o + p.ambient_dim] = h.normal
                hs.append(HalfSpace(n, h.offset))
        verts = np.array([np.concatenate(vs) for vs in itertools.product(*[p.vertices for p in parts])])
    return Body("product", d, frame, tuple(hs), vertices=verts, parts=parts, spec=spec)


def _make_union(spec: dict) -> Body:
    members = spec.get("members")
    if not isinstance(members, list) or not members:
        raise GeometryError("union needs a non-empty list of members")
    parts = tuple(make_body(m) for m in members)
    d = parts[0].ambient_dim
    if any(p.ambient_dim != d for p in parts):
        raise GeometryError("union members live in different dimensions")
    pts = np.vstack([_sample_points(p) for p in parts])
    return Body("union", d, canonical_frame(pts, d), parts=parts, spec=spec)


def _make_implicit(spec: dict) -> Body:
    if "bounds" not in spec:
        raise GeometryError("implicit body needs a bounding 'bounds' polytope")
    bounds = make_body(dict(spec["bounds"]))
    if not bounds.is_polytope:
        raise GeometryError("implicit bounds must be a polytope")
    d = bounds.ambient_dim
    quads = []
    for q in spec.get("quadrics", []):
        extra = set(q) - {"Q", "g", "c"}
        if extra:
            raise GeometryError(f"unknown quadric keys {sorted(extra)}")
        Q = np.asarray(q.get("Q", np.zeros((d, d))), dtype=float)
        g = np.asarray(q.get("g", np.zeros(d)), dtype=float)
        if Q.shape != (d, d) or g.shape != (d,):
            raise GeometryError("quadric dimension mismatch")
        quads.append(Quadric(0.5 * (Q + Q.T), g, float(q.get("c", 0.0))))
    body = Body("implicit", d, bounds.affine_hull, parts=(bounds,), quadrics=tuple(quads), spec=spec)
    enc = encode(body)
    grid = _grid_points(bounds, 41)
    if not np.any(_kernels.inside_many(*enc.arrays[:5], grid, 0.0)):
        raise GeometryError("implicit body appears to be empty")
    return body


def _sample_points(body: Body) -> np.ndarray:
    if body.vertices is not None:
        return body.vertices
    if body.kind == "ball":
        fr = body.affine_hull
        B = fr.basis if fr.dim < body.ambient_dim else np.eye(body.ambient_dim)
        return np.vstack([body.center + s * body.radius * B for s in (1.0, -1.0)] + [body.center])
    if body.kind == "implicit":
        return body.parts[0].vertices
    return np.vstack([_sample_points(p) for p in body.parts])


def _grid_points(poly: Body, n: int) -> np.ndarray:
    fr = poly.affine_hull
    Y = fr.to_local(poly.vertices)
    axes = [np.linspace(lo, hi, n) for lo, hi in zip(Y.min(0), Y.max(0))]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, fr.dim)
    return fr.to_ambient(mesh)


# ---------------------------------------------------------------- encoding


def _pieces(body: Body) -> list[list[tuple[np.ndarray, np.ndarray, float]]]:
    """Constraint pieces ``(Q, g, c)`` in ambient coordinates."""
    d = body.ambient_dim
    Z = np.zeros((d, d))
    if body.kind in ("polytope", "segment"):
        return [[(Z, h.normal, h.offset) for h in body.halfspaces]]
    if body.kind == "ball":
        c, r = body.center, body.radius
        # scaled so the constraint value approximates signed distance near the sphere
        piece = [(np.eye(d) / (2 * r), -c / r, (r * r - c @ c) / (2 * r))]
        for w in body.affine_hull.complement():
            piece.append((Z, w, w @ c))
            piece.append((Z, -w, -(w @ c)))
        return [piece]
    if body.kind == "implicit":
        piece = _pieces(body.parts[0])[0]
        piece += [(q.Q, q.g, q.c) for q in body.quadrics]
        return [piece]
    if body.kind == "union":
        return [p for m in body.parts for p in _pieces(m)]
    if body.kind == "product":
        offs = np.cumsum([0] + [p.ambient_dim for p in body.parts])
        piece = []
        for p, o in zip(body.parts, offs):
            sub = _pieces(p)
            if len(sub) != 1:
                raise GeometryError("product factors must be convex")
            k = p.ambient_dim
            for Q, g, cc in sub[0]:
                QQ = np.zeros((d, d))
                QQ[o:o + k, o:o + k] = Q
                gg = np.zeros(d)
                gg[o:o + k] = g
                piece.append((QQ, gg, cc))
        return [piece]
    raise GeometryError(f"unsupported kind {body.kind}")


def encode(body: Body, frame: AffineHull | None = None) -> Encoding:
    """Constraint encoding of ``body`` in the coordinates of ``frame``.

    ``frame`` defaults to the ambient space.  Constraints that are constant on
    the frame are dropped when satisfied; pieces with a violated constant
    constraint are dropped entirely.
    """
    key = ("enc", None if frame is None else (frame.base.tobytes(), frame.basis.tobytes()))
    if key in body._cache:
        return body._cache[key]
    pieces = _pieces(body)
    k = body.ambient_dim if frame is None else frame.dim
    Qs, gs, cs, lins, src, ptr = [], [], [], [], [], [0]
    for piece in pieces:
        rows = []
        feasible = True
        for j, (Q, g, c) in enumerate(piece):
            if frame is not None:
                B, x0 = frame.basis, frame.base
                Qf = B @ Q @ B.T
                gf = B @ (2 * Q @ x0 + g)
                cf = c - x0 @ Q @ x0 - g @ x0
                Q, g, c = Qf, gf, cf
            lin = bool(np.all(np.abs(Q) <= 1e-15))
            if lin and np.all(np.abs(g) <= 1e-12):
                if c < -1e-9:
                    feasible = False
                    break
                continue
            rows.append((Q, g, c, lin, j))
        if not feasible:
            continue
        for Q, g, c, lin, j in rows:
            Qs.append(Q)
            gs.append(g)
            cs.append(c)
            lins.append(lin)
            src.append(j)
        ptr.append(ptr[-1] + len(rows))
    if len(ptr) == 1:
        raise GeometryError("body has no part in the requested frame")
    all_lin = all(lins)
    convex = all(lin or np.all(np.linalg.eigvalsh(Q) >= -1e-14) for Q, lin in zip(Qs, lins))
    mode = 0 if (len(ptr) == 2 and all_lin) else (1 if convex else 2)
    enc = Encoding(
        np.array(Qs, dtype=float).reshape(-1, k, k),
        np.array(gs, dtype=float).reshape(-1, k),
        np.array(cs, dtype=float),
        np.array(lins, dtype=np.bool_),
        np.array(ptr, dtype=np.int64),
        mode,
        np.array(src, dtype=np.int64),
    )
    body._cache[key] = enc
    return enc


# ---------------------------------------------------------------- queries


def contains(body: Body, x: Sequence[float] | np.ndarray, tol: float = 1e-9) -> bool | np.ndarray:
    """Membership within ``tol``.  Accepts one point or an ``(n, d)`` array."""
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X2 = np.atleast_2d(X)
    if X2.shape[1] != body.ambient_dim:
        raise GeometryError(f"point dimension {X2.shape[1]} != {body.ambient_dim}")
    enc = encode(body)
    out = _kernels.inside_many(*enc.arrays[:5], np.ascontiguousarray(X2), float(tol))
    return bool(out[0]) if single else out


def faces(body: Body) -> tuple[Face, ...]:
    """All nonempty faces of a polytope, the body itself included."""
    if not body.is_polytope:
        raise GeometryError(f"{body.kind} bodies expose no face lattice")
    if "faces" in body._cache:
        return body._cache["faces"]
    A, b, V = body.A, body.b, body.vertices
    tol = ACTIVE_TOL * (1 + np.abs(b))
    act = [frozenset(np.flatnonzero(np.abs(A @ v - b) <= tol).tolist()) for v in V]
    sets = set(act)
    frontier = set(act)
    while frontier:
        new = {s & t for s in frontier for t in act} - sets
        sets |= new
        frontier = new
    out = []
    for S in sets:
        ids = tuple(i for i, a in enumerate(act) if S <= a)
        out.append(_face_from(body, S, ids))
    out.sort(key=lambda f: (f.dim, f.key))
    body._cache["faces"] = tuple(out)
    body._cache["face_index"] = {f.active_indices: f for f in out}
    return body._cache["faces"]


def _face_from(body: Body, S: frozenset[int], ids: tuple[int, ...]) -> Face:
    pts = body.vertices[list(ids)]
    frame = canonical_frame(pts, body.ambient_dim)
    if frame.dim == body.dim:
        frame = body.affine_hull
    return Face(frozenset(S), frame.dim, frame, ids)


def _active_rank(A: np.ndarray) -> int:
    if A.shape[0] == 0:
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    return int(np.sum(s > RANK_TOL * s[0]))


def face_of(body: Body, x: Sequence[float] | np.ndarray, tol: float | None = None) -> Face:
    """The unique face whose relative interior contains ``x``.

    The active set is ``{i : |n_i . x - b_i| <= tol_i}`` with
    ``tol_i = 1e-9 (1 + |b_i|)`` unless ``tol`` is given.
    """
    x = np.asarray(x, dtype=float)
    if body.kind == "ball" or (body.kind == "product" and not body.is_polytope):
        return _face_of_curved(body, x, tol)
    if not body.is_polytope:
        raise GeometryError(f"face_of is not defined for {body.kind} bodies")
    A, b = body.A, body.b
    tols = ACTIVE_TOL * (1 + np.abs(b)) if tol is None else np.full(b.shape, float(tol))
    if np.any(A @ x - b > tols):
        raise GeometryError("point lies outside the body")
    S = frozenset(np.flatnonzero(np.abs(A @ x - b) <= tols).tolist())
    faces(body)
    hit = body._cache["face_index"].get(S)
    if hit is not None:
        return hit
    # numerically ambiguous point: close the active set over the vertex sets
    act_v = [frozenset(np.flatnonzero(np.abs(A @ v - b) <= ACTIVE_TOL * (1 + np.abs(b))).tolist())
             for v in body.vertices]
    ids = tuple(i for i, a in enumerate(act_v) if S <= a)
    if not ids:
        raise GeometryError("active set does not match any face")
    closed = frozenset.intersection(*[act_v[i] for i in ids])
    return body._cache["face_index"].get(closed) or _face_from(body, closed, ids)


def _face_of_curved(body: Body, x: np.ndarray, tol: float | None) -> Face:
    """Faces of balls and products with curved factors.

    A ball's relative boundary points are zero-dimensional faces; products
    take the product of factor faces with dimensions added.
    """
    t = ACTIVE_TOL if tol is None else float(tol)
    if not contains(body, x, max(t, 1e-12)):
        raise GeometryError("point lies outside the body")
    if body.kind == "ball":
        dist = np.linalg.norm(body.affine_hull.to_local(x) - body.affine_hull.to_local(body.center))
        if dist >= body.radius - t * (1 + body.radius):
            return Face(frozenset({0}), 0, AffineHull(x.copy(), np.zeros((0, body.ambient_dim))))
        return Face(frozenset(), body.dim, body.affine_hull)
    offs = np.cumsum([0] + [p.ambient_dim for p in body.parts])
    active: set[int] = set()
    bases, rows = [], []
    shift = 0
    for p, o in zip(body.parts, offs):
        k = p.ambient_dim
        f = face_of(p, x[o:o + k], tol)
        active |= {shift + i for i in f.active_indices}
        shift += max(len(p.halfspaces), 1)
        bases.append(f.affine_hull.base)
        for r in f.affine_hull.basis:
            row = np.zeros(body.ambient_dim)
            row[o:o + k] = r
            rows.append(row)
    basis = np.array(rows).reshape(-1, body.ambient_dim)
    return Face(frozenset(active), basis.shape[0], AffineHull(np.concatenate(bases), basis))


def skeleton(body: Body, k: int) -> Skeleton:
    """All faces of dimension at most ``k``."""
    if not body.is_polytope:
        raise GeometryError(f"skeleton is not defined for {body.kind} bodies")
    if not 0 <= k <= body.ambient_dim:
        raise GeometryError(f"k={k} outside [0, {body.ambient_dim}]")
    return Skeleton(k, tuple(f for f in faces(body) if f.dim <= k))


def enclosing_ball(body: Body) -> tuple[np.ndarray, float]:
    """A ball containing the body.  Exact for balls, box-centred otherwise."""
    if body.kind == "ball":
        return body.center.copy(), float(body.radius)
    lo, hi = bounding_box(body)
    center = 0.5 * (lo + hi)
    return center, float(_farthest(body, center))


def _farthest(body: Body, center: np.ndarray) -> float:
    if body.kind == "ball":
        return float(np.linalg.norm(body.center - center) + body.radius)
    if body.vertices is not None and body.kind != "implicit":
        return float(np.max(np.linalg.norm(body.vertices - center, axis=1)))
    if body.kind == "implicit":
        return _farthest(body.parts[0], center)
    if body.kind == "union":
        return max(_farthest(p, center) for p in body.parts)
    # product with curved factors
    offs = np.cumsum([0] + [p.ambient_dim for p in body.parts])
    return float(np.sqrt(sum(
        _farthest(p, center[o:o + p.ambient_dim]) ** 2 for p, o in zip(body.parts, offs)
    )))


def bounding_box(body: Body, frame: AffineHull | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned box containing the body, in ``frame`` coordinates."""
    to = (lambda X: np.atleast_2d(X)) if frame is None else frame.to_local
    if body.kind == "ball":
        c = to(body.center)[0]
        if frame is None:
            spread = np.linalg.norm(body.affine_hull.basis, axis=0) if body.dim < body.ambient_dim \
                else np.ones(body.ambient_dim)
        else:
            spread = np.linalg.norm(frame.basis @ body.affine_hull.basis.T, axis=1)
        return c - body.radius * spread, c + body.radius * spread
    if body.kind == "implicit":
        return bounding_box(body.parts[0], frame)
    if body.vertices is not None:
        Y = to(body.vertices)
        return Y.min(0), Y.max(0)
    boxes = [bounding_box(p, None) for p in body.parts]
    if body.kind == "union":
        if frame is None:
            return np.min([b[0] for b in boxes], 0), np.max([b[1] for b in boxes], 0)
        boxes = [bounding_box(p, frame) for p in body.parts]
        return np.min([b[0] for b in boxes], 0), np.max([b[1] for b in boxes], 0)
    lo = np.concatenate([b[0] for b in boxes])
    hi = np.concatenate([b[1] for b in boxes])
    if frame is None:
        return lo, hi
    corners = np.array(list(itertools.product(*zip(lo, hi))))
    Y = frame.to_local(corners)
    return Y.min(0), Y.max(0)


def boundary_clip(body: Body, x: Sequence[float], y: Sequence[float], tol: float = 1e-9) -> Clip:
    """Walk from ``x`` toward ``y`` and stop at the first boundary crossing."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not contains(body, x, tol):
        raise GeometryError("start point lies outside the body")
    enc = encode(body)
    t = _kernels.segment_exit(*enc.arrays, x, y - x, 0.0)
    if not np.isfinite(t):
        return Clip(y.copy(), False, None)
    z = x + t * (y - x)
    face = None
    if body.is_polytope:
        face = face_of(body, z, max(tol, 1e-9))
    return Clip(z, True, face)
