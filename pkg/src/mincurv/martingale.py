"""Controlled martingales with unit-trace quadratic variation and their exit times.

Four control laws are available: exact planar rotations about a point,
isotropic Brownian motion, Brownian motion along a segment, and the
kernel-projection diffusion synthesized from a solved field.  Polytope face
cascades paste per-face kernel laws together; unions of segments and discs
paste segment motion with disc rotations.

Every path draws from its own generator ``default_rng([seed, path_id])`` so a
run is reproducible regardless of how paths are scheduled.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dc_field
from typing import Mapping, Sequence, Union

import numpy as np

from . import _paths
from .geometry import Body, Face, contains, enclosing_ball, encode, face_of, faces
from .nonlinearity import DEFAULT_RANK_TOL
from .solver.analysis import derivatives
from .solver.grid import ValueField

log = logging.getLogger(__name__)

ORTHO_TOL = 1e-10
EXIT_TOL = 1e-10
T_MAX_FACTOR = 20.0


class SimulationError(ValueError):
    """Invalid simulation request: bad control, start point or field map."""


def _rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def _path_rng(seed: int, path_id: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(path_id)])


# ---------------------------------------------------------------- laws


def _check_plane(w1: np.ndarray, w2: np.ndarray) -> None:
    G = np.array([[w1 @ w1, w1 @ w2], [w2 @ w1, w2 @ w2]])
    if not np.allclose(G, np.eye(2), atol=ORTHO_TOL, rtol=0.0):
        raise SimulationError("rotation plane basis is not orthonormal")


@dataclass(frozen=True, eq=False)
class RotationPlane:
    """Rotation about ``center`` in the plane of ``w1, w2``: ``a = t t^T`` with ``t`` tangential."""

    center: np.ndarray
    w1: np.ndarray
    w2: np.ndarray

    def __post_init__(self) -> None:
        for name in ("center", "w1", "w2"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).ravel())
        _check_plane(self.w1, self.w2)


@dataclass(frozen=True)
class IsotropicBM:
    """``a = I / d``: the uncontrolled reference motion."""


@dataclass(frozen=True, eq=False)
class SegmentBM:
    """Brownian motion along a segment, ``a = e e^T`` with ``e`` its unit direction."""

    start: np.ndarray
    end: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "start", np.asarray(self.start, dtype=float).ravel())
        object.__setattr__(self, "end", np.asarray(self.end, dtype=float).ravel())
        if np.linalg.norm(self.end - self.start) == 0.0:
            raise SimulationError("degenerate segment")

    @property
    def direction(self) -> np.ndarray:
        e = self.end - self.start
        return e / np.linalg.norm(e)


@dataclass(frozen=True, eq=False)
class _Packed:
    """Fields flattened for the compiled path loops (see :mod:`mincurv._paths`)."""

    k: np.ndarray
    orig: np.ndarray
    h: np.ndarray
    shape: np.ndarray
    off: np.ndarray
    grads: np.ndarray
    hess: np.ndarray
    base: np.ndarray
    basis: np.ndarray
    rptr: np.ndarray
    rg: np.ndarray
    rc: np.ndarray

    @property
    def arrays(self) -> tuple:
        return (self.k, self.orig, self.h, self.shape, self.off, self.grads, self.hess,
                self.base, self.basis)


def _pack(fields: Sequence[ValueField], d: int, with_rows: bool = False) -> _Packed:
    nf = len(fields)
    k = np.zeros(nf, np.int64)
    orig = np.zeros((nf, 3))
    h = np.ones(nf)
    shape = np.full((nf, 3), 2, np.int64)
    off = np.zeros(nf, np.int64)
    base = np.zeros((nf, d))
    basis = np.zeros((nf, 3, d))
    grads, hesses, rg, rc, rptr = [], [], [], [], [0]
    total = 0
    for i, fld in enumerate(fields):
        g = fld.grid
        kk = g.dim
        k[i], h[i], off[i] = kk, g.h, total
        orig[i, :kk] = g.origin
        shape[i, :kk] = g.shape
        base[i] = g.frame.base
        basis[i, :kk] = g.frame.basis
        gr, he = derivatives(fld.values, g.h)
        n = fld.values.size
        G = np.zeros((n, 3))
        H = np.zeros((n, 3, 3))
        G[:, :kk] = np.nan_to_num(gr.reshape(n, kk))
        H[:, :kk, :kk] = np.nan_to_num(he.reshape(n, kk, kk))
        grads.append(G)
        hesses.append(H)
        total += n
        if with_rows:
            enc = encode(fld.body, g.frame)
            if enc.mode != 0:
                raise SimulationError("cascade faces must be polytopes")
            R = np.zeros((enc.g.shape[0], 3))
            R[:, :kk] = enc.g
            rg.append(R)
            rc.append(enc.c)
        rptr.append(rptr[-1] + (len(rg[-1]) if with_rows else 0))
    cat = lambda xs, s: np.ascontiguousarray(np.concatenate(xs)) if xs else np.zeros(s)
    return _Packed(k, orig, h, shape, off, cat(grads, (1, 3)), cat(hesses, (1, 3, 3)),
                   base, basis, np.array(rptr, np.int64), cat(rg, (0, 3)), cat(rc, (0,)))


_EMPTY: dict[int, _Packed] = {}


def _empty_pack(d: int) -> _Packed:
    if d not in _EMPTY:
        _EMPTY[d] = _Packed(np.zeros(1, np.int64), np.zeros((1, 3)), np.ones(1),
                            np.full((1, 3), 2, np.int64), np.zeros(1, np.int64), np.zeros((1, 3)),
                            np.zeros((1, 3, 3)), np.zeros((1, d)), np.zeros((1, 3, d)),
                            np.zeros(2, np.int64), np.zeros((0, 3)), np.zeros(0))
    return _EMPTY[d]


@dataclass(frozen=True, eq=False)
class KernelField:
    """Kernel-projection control read off a solved field.

    Built by :func:`synthesize_control`.  At each state the field's gradient
    and Hessian are interpolated from central differences and the diffusion is
    ``a = (I - H^+ H) / (d - rank H)`` with ``H = P hess P / 2 + I``.  Where
    ``H`` is numerically nonsingular the rank-one control along the top tangent
    eigenvector of the Hessian is used instead (a *fallback* event); below
    ``grad_tol`` the rotation plane of the two top Hessian eigenvectors is used
    (a *critical* event).
    """

    field: ValueField
    rank_tol: float
    grad_tol: float
    packed: _Packed = dc_field(repr=False)

    def derivatives(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Interpolated gradient and Hessian in the field's local frame."""
        fr = self.field.grid.frame
        y = np.zeros(3)
        y[:fr.dim] = fr.to_local(np.asarray(x, dtype=float))
        g, M = np.zeros(3), np.zeros((3, 3))
        p = self.packed
        _paths.field_derivs(0, y, p.k, p.orig, p.h, p.shape, p.off, p.grads, p.hess, g, M)
        return g[:fr.dim].copy(), M[:fr.dim, :fr.dim].copy()

    def diffusion(self, x) -> tuple[np.ndarray, int]:
        """Ambient diffusion matrix at ``x`` and the event flag (0 kernel, 1 fallback, 2 critical)."""
        fr = self.field.grid.frame
        g, M = self.derivatives(x)
        k = fr.dim
        g3, M3, V = np.zeros(3), np.zeros((3, 3)), np.zeros((3, 3))
        g3[:k], M3[:k, :k] = g, M
        m, flag = _paths.kernel_dirs(g3, M3, k, self.rank_tol, self.grad_tol, V, np.zeros((3, 4)))
        W = V[:k, :m].T @ fr.basis
        return W.T @ W / m, int(flag)


@dataclass(frozen=True)
class Cascade:
    """Per-piece laws pasted along a path: faces of a polytope or members of a union."""

    laws: Mapping


ControlLaw = Union[RotationPlane, KernelField, SegmentBM, Cascade, IsotropicBM]


def synthesize_control(field: ValueField, rank_tol: float = DEFAULT_RANK_TOL,
                       grad_tol: float | None = None) -> KernelField:
    """Kernel-projection law of a solved field.

    ``grad_tol`` defaults to ``sqrt(h)``, below which a difference gradient of an
    O(h)-accurate field does not determine a direction.
    """
    if not isinstance(field, ValueField):
        raise SimulationError("synthesize_control needs a solved ValueField")
    g = field.grid
    if any(s < 5 for s in g.shape) or np.count_nonzero(g.interior) < 3 ** g.dim:
        raise SimulationError("field too coarse for second differences; refine h")
    if rank_tol <= 0:
        raise SimulationError("rank_tol must be positive")
    gt = math.sqrt(g.h) if grad_tol is None else float(grad_tol)
    return KernelField(field, float(rank_tol), gt, _pack([field], g.frame.ambient_dim))


# ---------------------------------------------------------------- samples


@dataclass
class PathSample:
    """One path: recorded times and states, and where and when it left the body.

    ``exited`` is false for paths cut off at the time cap; their ``exit_time``
    is then the cap, a lower bound.
    """

    times: np.ndarray
    states: np.ndarray
    exit_time: float
    exit_point: np.ndarray
    drift_check: float | None = None
    fallbacks: int = 0
    criticals: int = 0
    qv: float | None = None
    exited: bool = True


@dataclass
class ExitStats:
    """Order statistics of exit times.  ``essinf_estimate`` is the sample minimum."""

    n_paths: int
    min: float
    q01: float
    q05: float
    mean: float
    max: float
    essinf_estimate: float
    stderr: float
    censored: int = 0
    fallbacks: int = 0
    criticals: int = 0
    times: np.ndarray | None = dc_field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if k != "times"}


def exit_statistics(samples: Sequence[PathSample] | np.ndarray) -> ExitStats:
    """Summaries of a nonempty collection of paths (or of raw exit times)."""
    if isinstance(samples, np.ndarray):
        t = samples.astype(float).ravel()
        cens = fb = cr = 0
    else:
        samples = list(samples)
        t = np.array([s.exit_time for s in samples], dtype=float)
        cens = sum(not s.exited for s in samples)
        fb = sum(s.fallbacks for s in samples)
        cr = sum(s.criticals for s in samples)
    if t.size == 0:
        raise SimulationError("no paths to summarize")
    se = float(t.std(ddof=1) / math.sqrt(t.size)) if t.size > 1 else 0.0
    q01, q05 = np.quantile(t, [0.01, 0.05])
    return ExitStats(int(t.size), float(t.min()), float(q01), float(q05), float(t.mean()),
                     float(t.max()), float(t.min()), se, int(cens), int(fb), int(cr), t)


# ---------------------------------------------------------------- exact rotation


def simulate_rotation_exact(x0, center, plane, t_grid: Sequence[float], rng=None,
                            radius: float | None = None) -> PathSample:
    """Exact sample of the planar rotation started at ``x0``.

    The radius about ``center`` is ``sqrt(rho0^2 + t)``; the angle has
    independent Gaussian increments of variance ``log((rho0^2 + t)/(rho0^2 + s))``
    (uniform when ``rho0 = 0``).  Components of ``x0 - center`` off the plane
    stay fixed.  With ``radius`` the path stops when the radius reaches it, at
    time ``radius^2 - rho0^2``; otherwise ``exit_time`` is ``inf``.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    c = np.asarray(center, dtype=float).ravel()
    w1, w2 = (np.asarray(w, dtype=float).ravel() for w in plane)
    _check_plane(w1, w2)
    gen = _rng(rng)
    r = x0 - c
    p1, p2 = float(r @ w1), float(r @ w2)
    fixed = c + r - p1 * w1 - p2 * w2
    rho2 = p1 * p1 + p2 * p2
    t = np.asarray(t_grid, dtype=float).ravel()
    if t.size and (t[0] < 0 or np.any(np.diff(t) <= 0)):
        raise SimulationError("t_grid must be increasing and nonnegative")
    if t.size == 0 or t[0] > 0:
        t = np.concatenate([[0.0], t])
    exit_time = math.inf
    if radius is not None:
        exit_time = float(radius) ** 2 - rho2
        if exit_time < 0:
            raise SimulationError("start point lies outside the rotation disc")
        t = np.concatenate([t[t < exit_time], [exit_time]])
    theta = np.empty(t.size)
    theta[0] = math.atan2(p2, p1)
    for i in range(1, t.size):
        if rho2 + t[i - 1] == 0.0:
            theta[i] = gen.uniform(0.0, 2.0 * math.pi)
        else:
            var = math.log((rho2 + t[i]) / (rho2 + t[i - 1]))
            theta[i] = theta[i - 1] + math.sqrt(var) * gen.standard_normal()
    rho = np.sqrt(rho2 + t)
    states = fixed + rho[:, None] * (np.cos(theta)[:, None] * w1 + np.sin(theta)[:, None] * w2)
    exit_point = states[-1].copy() if radius is not None else np.full(x0.shape, np.nan)
    return PathSample(t, states, exit_time, exit_point, exited=radius is not None)


# ---------------------------------------------------------------- Euler paths


def _law_code(control) -> tuple[int, np.ndarray, np.ndarray, np.ndarray, _Packed, float, float]:
    if isinstance(control, KernelField):
        d = control.field.grid.frame.ambient_dim
        z = np.zeros(d)
        return _paths.KERNEL, z, z, z, control.packed, control.rank_tol, control.grad_tol
    if isinstance(control, RotationPlane):
        d = control.center.shape[0]
        return _paths.ROTATION, control.center, control.w1, control.w2, _empty_pack(d), 1.0, 0.0
    if isinstance(control, SegmentBM):
        d = control.start.shape[0]
        z = np.zeros(d)
        return _paths.SEGMENT, control.direction, z, z, _empty_pack(d), 1.0, 0.0
    if isinstance(control, IsotropicBM):
        return _paths.ISOTROPIC, None, None, None, None, 1.0, 0.0
    raise SimulationError(f"simulate_euler cannot run a {type(control).__name__} law")


def _time_cap(body: Body, t_max: float | None) -> float:
    if t_max is not None:
        return float(t_max)
    _, r = enclosing_ball(body)
    return T_MAX_FACTOR * r * r


def simulate_euler(control: ControlLaw, body: Body, x0, dt: float, seed: int = 0, *,
                   path_id: int = 0, t_max: float | None = None, record_stride: int | None = 1,
                   field: ValueField | None = None) -> PathSample:
    """Euler-Maruyama path ``dX = a(X)^{1/2} dW`` until it leaves ``body``.

    A step that ends outside is cut at the crossing found on the straight
    segment between the two states, giving the exit time and point.
    ``record_stride=None`` records only the start and the exit.  With ``field``
    the path's :func:`drift_check` is filled in.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    if not dt > 0:
        raise SimulationError("dt must be positive")
    if x0.shape[0] != body.ambient_dim:
        raise SimulationError("x0 dimension does not match the body")
    if not contains(body, x0, 1e-9):
        raise SimulationError("x0 lies outside the body")
    law, lc, w1, w2, packed, rank_tol, grad_tol = _law_code(control)
    d = x0.shape[0]
    if packed is None:
        z = np.zeros(d)
        lc, w1, w2, packed = z, z, z, _empty_pack(d)
    cap = _time_cap(body, t_max)
    max_steps = int(math.ceil(cap / dt))
    if record_stride is None:
        rec, rect = np.zeros((2, d)), np.zeros(2)
        stride = max_steps + 1
    else:
        stride = max(1, int(record_stride))
        n = max_steps // stride + 2
        rec, rect = np.zeros((n, d)), np.zeros(n)
    enc = encode(body)
    nrec, t, xe, exited, fb, cr, qv = _paths.euler_path(
        _path_rng(seed, path_id), law, x0, float(dt), max_steps, stride, lc, w1, w2,
        *packed.arrays, rank_tol, grad_tol, *enc.arrays, EXIT_TOL, rec, rect)
    times, states = rect[:nrec].copy(), rec[:nrec].copy()
    if record_stride is None and (nrec < 2 or times[-1] != t):
        times = np.array([0.0, t])
        states = np.vstack([x0, xe])
    sample = PathSample(times, states, float(t), xe.copy(), None, int(fb), int(cr), float(qv), bool(exited))
    if field is not None:
        sample.drift_check = drift_check(sample, field)
    return sample


def simulate_paths(control: ControlLaw, body: Body, x0, dt: float, n_paths: int, seed: int = 0,
                   **kwargs) -> list[PathSample]:
    """``n_paths`` independent Euler paths with path ids ``0 .. n_paths - 1``."""
    if n_paths < 1:
        raise SimulationError("need at least one path")
    kwargs.setdefault("record_stride", None)
    return [simulate_euler(control, body, x0, dt, seed, path_id=i, **kwargs) for i in range(n_paths)]


def drift_check(path: PathSample, field) -> float:
    """Largest ``|u(X(t)) - (u(x0) - t)|`` over recorded times before exit."""
    keep = path.times < path.exit_time
    X = path.states[keep]
    if X.shape[0] == 0:
        return 0.0
    body = getattr(field, "body", None)
    if body is not None and not np.all(contains(body, X, 1e-7)):
        raise SimulationError("path leaves the field's domain")
    v = np.atleast_1d(field(X))
    v0 = float(field(path.states[0]))
    return float(np.max(np.abs(v - (v0 - path.times[keep]))))


# ---------------------------------------------------------------- cascades


def _polytope_cascade(body: Body, fields: Mapping[Face, object], x0: np.ndarray, dt: float,
                      n_paths: int, seed: int, rank_tol: float, grad_tol: float | None,
                      t_max: float | None) -> ExitStats:
    start = face_of(body, x0)
    if start.dim <= 1:
        return exit_statistics(np.zeros(n_paths))
    if body.halfspaces and len(body.halfspaces) > 62:
        raise SimulationError("cascades support at most 62 halfspaces")
    reach = [f for f in faces(body) if f.active_indices >= start.active_indices]
    order, field_list = {}, []
    for f in reach:
        if f.dim <= 1:
            continue
        fld = fields.get(f)
        if not isinstance(fld, ValueField):
            raise SimulationError(f"missing field for face {f.key} (dimension {f.dim})")
        order[f] = len(field_list)
        field_list.append(fld)
    packed = _pack(field_list, body.ambient_dim, with_rows=True)
    gtol = np.array([math.sqrt(f.grid.h) if grad_tol is None else grad_tol for f in field_list])
    masks, slots = [], []
    for f in faces(body):
        masks.append(sum(1 << i for i in f.active_indices))
        slots.append(order.get(f, -1))
    idx = np.argsort(masks)
    masks = np.array(masks, np.int64)[idx]
    slots = np.array(slots, np.int64)[idx]
    A, b = np.ascontiguousarray(body.A), body.b
    atol = 1e-9 * (1.0 + np.abs(b))
    cap = _time_cap(body, t_max)
    max_steps = int(math.ceil(cap / dt))
    f0 = order[start]
    times = np.empty(n_paths)
    cens = fb = cr = 0
    for i in range(n_paths):
        t, _, exited, nf, nc, _ = _paths.cascade_path(
            _path_rng(seed, i), x0, f0, float(dt), max_steps, *packed.arrays,
            float(rank_tol), float(gtol[f0]), packed.rptr, packed.rg, packed.rc, A, b, atol,
            masks, slots)
        times[i] = t
        cens += not exited
        fb += nf
        cr += nc
    st = exit_statistics(times)
    st.censored, st.fallbacks, st.criticals = int(cens), int(fb), int(cr)
    return st


def _member_law(member: Body):
    if member.kind == "segment":
        return SegmentBM(member.vertices[0], member.vertices[1])
    if member.kind == "ball" and member.dim == 2:
        B = member.affine_hull.basis
        return RotationPlane(member.center, B[0], B[1])
    raise SimulationError(f"union cascades support segments and discs, not {member.kind} of dim {member.dim}")


def _union_cascade(body: Body, laws: Mapping[int, object] | None, x0: np.ndarray, dt: float,
                   n_paths: int, seed: int, t_max: float | None) -> ExitStats:
    members = body.parts
    laws = dict(laws or {})
    for i, m in enumerate(members):
        laws.setdefault(i, _member_law(m))
    dims = [m.dim for m in members]

    def pick(x, above: int, skip: int) -> int:
        cand = [i for i, m in enumerate(members)
                if i != skip and dims[i] > above and contains(m, x, 1e-9)]
        return min(cand, key=lambda i: dims[i]) if cand else -1

    first = pick(x0, -1, -1)
    if first < 0:
        raise SimulationError("x0 lies outside the body")
    times = np.empty(n_paths)
    cens = 0
    for p in range(n_paths):
        gen = _path_rng(seed, p)
        cur, x, t, exited = first, x0, 0.0, True
        while cur >= 0:
            law, member = laws[cur], members[cur]
            if isinstance(law, RotationPlane) and member.kind == "ball":
                s = simulate_rotation_exact(x, law.center, (law.w1, law.w2), [], gen, member.radius)
                t += s.exit_time
                x = s.exit_point
            else:
                s = simulate_euler(law, member, x, dt, int(gen.integers(2 ** 63)), record_stride=None,
                                   t_max=t_max)
                t += s.exit_time
                x = s.exit_point
                if not s.exited:
                    exited = False
                    break
            cur = pick(x, dims[cur], cur)
        times[p] = t
        cens += not exited
    st = exit_statistics(times)
    st.censored = int(cens)
    return st


def simulate_cascade(body: Body, fields: Mapping | Cascade | None, x0, dt: float, n_paths: int,
                     seed: int = 0, rank_tol: float = DEFAULT_RANK_TOL,
                     grad_tol: float | None = None, t_max: float | None = None) -> ExitStats:
    """Exit statistics of pasted per-face (or per-member) optimal laws.

    For a polytope, ``fields`` maps faces to their solved fields (as returned by
    the hierarchical solve).  Each path runs the kernel law of its current face
    inside that face's hull; on reaching the face's relative boundary it
    switches to the face hit, and it stops on reaching an edge or a vertex,
    where the remaining exit time vanishes in law.

    For a union of segments and discs, segment members run Brownian motion
    until an endpoint and disc members the exact rotation about their centre;
    a path moves on to a higher-dimensional member containing its current
    point until none is left.  ``fields`` may then map member indices to laws.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    if not dt > 0:
        raise SimulationError("dt must be positive")
    if n_paths < 1:
        raise SimulationError("need at least one path")
    if x0.shape[0] != body.ambient_dim or not contains(body, x0, 1e-9):
        raise SimulationError("x0 lies outside the body")
    laws = fields.laws if isinstance(fields, Cascade) else fields
    if body.is_polytope:
        return _polytope_cascade(body, laws or {}, x0, dt, n_paths, seed, rank_tol, grad_tol, t_max)
    if body.kind == "union":
        return _union_cascade(body, laws, x0, dt, n_paths, seed, t_max)
    raise SimulationError(f"cascades need a polytope or a union body, not {body.kind}")
