"""Lattices over a body's affine hull and the value fields they carry."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .. import _kernels
from ..geometry import AffineHull, Body, Face, GeometryError, bounding_box, encode
from ._sweep import interp

OUTSIDE, BOUNDARY, INTERIOR = 0, 1, 2
PAD = 2


@dataclass(frozen=True, eq=False)
class Grid:
    """Regular lattice ``frame.to_ambient(origin + index * h)``.

    ``mask`` flags each node as ``OUTSIDE``, ``BOUNDARY`` or ``INTERIOR``.
    """

    frame: AffineHull
    origin: np.ndarray
    h: float
    shape: tuple[int, ...]
    mask: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def base(self) -> np.ndarray:
        """Ambient position of node ``(0, ..., 0)``."""
        return self.frame.to_ambient(self.origin)

    @property
    def basis(self) -> np.ndarray:
        return self.frame.basis

    def axes(self) -> list[np.ndarray]:
        return [o + self.h * np.arange(n) for o, n in zip(self.origin, self.shape)]

    def local_points(self) -> np.ndarray:
        """Local coordinates of every node, shape ``shape + (dim,)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def points(self) -> np.ndarray:
        return self.frame.to_ambient(self.local_points())

    def index_of(self, x: np.ndarray) -> tuple[int, ...]:
        """Nearest node to the ambient point ``x``."""
        y = self.frame.to_local(x)
        idx = np.rint((y - self.origin) / self.h).astype(int)
        return tuple(np.clip(idx, 0, np.array(self.shape) - 1))

    @property
    def interior(self) -> np.ndarray:
        return self.mask == INTERIOR


def build_grid(body: Body, h: float, frame: AffineHull | None = None) -> Grid:
    """Lattice over the body's affine hull covering its bounding box padded by ``2h``.

    The lattice is centred on the box, so bodies symmetric about the box centre
    get symmetric grids.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    frame = frame or body.affine_hull
    k = frame.dim
    if k <= 1:
        raise GeometryError(
            f"body has a {k}-dimensional relative interior; its value vanishes and no solve is needed"
        )
    if k > 3:
        raise GeometryError("grid solves support bodies of dimension 2 or 3")
    lo, hi = bounding_box(body, frame)
    width = hi - lo
    if h >= float(np.max(width)):
        raise ValueError(f"h={h} exceeds the body's extent {float(np.max(width)):.4g}")
    n = np.ceil(width / h - 1e-9).astype(int) + 2 * PAD
    origin = 0.5 * (lo + hi) - 0.5 * n * h
    shape = tuple(int(v) + 1 for v in n)
    axes = [o + h * np.arange(s) for o, s in zip(origin, shape)]
    Y = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, k)
    enc = encode(body, frame)
    tol = 1e-9 * (1.0 + float(np.max(width)))
    arrs = enc.arrays[:5]
    inside = _kernels.inside_many(*arrs, np.ascontiguousarray(Y), tol)
    strict = _kernels.inside_many(*arrs, np.ascontiguousarray(Y), -tol)
    if body.kind == "union":
        # members can touch at boundary points whose value is positive (the
        # tangency of two discs lies on a segment of K joining their centres),
        # so every node of K takes part in the scheme and only exits read zero
        strict = inside
    mask = np.where(strict, INTERIOR, np.where(inside, BOUNDARY, OUTSIDE)).astype(np.int8)
    return Grid(frame, origin, float(h), shape, mask.reshape(shape))


@njit(cache=True)
def _interp_many(vals, shape, k, origin, h, Y):
    out = np.empty(Y.shape[0])
    for i in range(Y.shape[0]):
        out[i] = interp(vals, 0, shape, k, origin, h, Y[i])
    return out


@dataclass(eq=False)
class ValueField:
    """Discrete arrival-time function on a :class:`Grid`."""

    grid: Grid
    values: np.ndarray
    face: Face | None = None
    body: Body | None = None
    meta: dict = field(default_factory=dict)

    def __call__(self, x: np.ndarray) -> np.ndarray | float:
        """Multilinear interpolation at ambient points."""
        X = np.asarray(x, dtype=float)
        single = X.ndim == 1
        Y = np.ascontiguousarray(self.grid.frame.to_local(np.atleast_2d(X)))
        g = self.grid
        out = _interp_many(np.ascontiguousarray(self.values.ravel()), np.array(g.shape, np.int64),
                           g.dim, g.origin, g.h, Y)
        return float(out[0]) if single else out

    def at_node(self, x: np.ndarray) -> float:
        return float(self.values[self.grid.index_of(np.asarray(x, dtype=float))])

    @property
    def interior_values(self) -> np.ndarray:
        return self.values[self.grid.interior]
