"""Antipodal direction sets and their clustering for the sweep's pruning."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


@dataclass(frozen=True)
class DirectionSet:
    """Unit directions (one per antipodal pair) grouped into angular clusters.

    ``members[cptr[c]:cptr[c+1]]`` lists the directions of cluster ``c``,
    ``crep[c]`` is one of them and ``chord[c]`` bounds ``|sigma - sigma_rep|``
    over the cluster.
    """

    dirs: np.ndarray
    members: np.ndarray
    cptr: np.ndarray
    crep: np.ndarray
    chord: np.ndarray

    def __len__(self) -> int:
        return self.dirs.shape[0]


def half_circle(n: int) -> np.ndarray:
    th = np.arange(n) * np.pi / n
    return np.stack([np.cos(th), np.sin(th)], axis=1)


def fibonacci_hemisphere(n: int) -> np.ndarray:
    i = np.arange(n)
    z = 1.0 - (i + 0.5) / n
    r = np.sqrt(1.0 - z * z)
    phi = i * GOLDEN_ANGLE
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _chord(rep: np.ndarray, pts: np.ndarray) -> float:
    return float(np.max(np.linalg.norm(pts - rep, axis=1)))


def make_directions(k: int, n: int, cluster_size: int | None = None) -> DirectionSet:
    """``n`` antipodal pairs in ``R^k``: uniform angles for ``k = 2``, a Fibonacci hemisphere for ``k = 3``."""
    if k == 1:
        dirs = np.ones((1, 1))
        return DirectionSet(dirs, np.zeros(1, np.int64), np.array([0, 1]), np.zeros(1, np.int64), np.zeros(1))
    if n < k:
        raise ValueError(f"need at least {k} directions in dimension {k}")
    size = cluster_size or max(1, int(round(np.sqrt(n / 4.0))))
    if k == 2:
        dirs = half_circle(n)
        cptr = np.arange(0, n + size, size)
        cptr[-1] = n
        cptr = np.unique(cptr)
        members = np.arange(n)
        crep = np.array([(a + b) // 2 for a, b in zip(cptr[:-1], cptr[1:])])
        chord = np.array([_chord(dirs[r], dirs[a:b]) for r, a, b in zip(crep, cptr[:-1], cptr[1:])])
        return DirectionSet(dirs, members.astype(np.int64), cptr.astype(np.int64), crep.astype(np.int64), chord)
    if k == 3:
        dirs = fibonacci_hemisphere(n)
        centers = fibonacci_hemisphere(max(1, n // size))
        dots = dirs @ centers.T
        owner = np.argmax(np.abs(dots), axis=1)
        # flip each direction onto its cluster's side; sigma and -sigma are the same pair
        sign = np.where(dots[np.arange(n), owner] < 0.0, -1.0, 1.0)
        dirs = dirs * sign[:, None]
        members, cptr, crep, chord = [], [0], [], []
        for c in range(centers.shape[0]):
            ids = np.flatnonzero(owner == c)
            if ids.size == 0:
                continue
            rep = ids[np.argmax(dirs[ids] @ centers[c])]
            members.extend(ids.tolist())
            cptr.append(len(members))
            crep.append(rep)
            chord.append(_chord(dirs[rep], dirs[ids]))
        return DirectionSet(dirs, np.array(members, np.int64), np.array(cptr, np.int64),
                            np.array(crep, np.int64), np.array(chord))
    raise ValueError(f"grid solves support dimension 2 or 3, not {k}")
