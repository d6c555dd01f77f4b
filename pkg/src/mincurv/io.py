"""Readers and writers for fields, reports, contours and exit times.

Field CSV files start with one comment line ``# mincurv-field {json}`` that
carries the grid (frame, origin, spacing, shape), the face key and the body
spec, followed by ``i0,...,mask,value`` rows in C order.  Every float is
written with 17 significant digits so files round-trip exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .geometry import AffineHull, Face, make_body
from .solver.analysis import Contour
from .solver.grid import Grid, ValueField

FIELD_TAG = "# mincurv-field "
FMT = "%.17g"


def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_field(path: str | Path, fld: ValueField) -> Path:
    g = fld.grid
    meta = {
        "base": g.frame.base, "basis": g.frame.basis, "origin": g.origin, "h": g.h,
        "shape": list(g.shape), "face": None if fld.face is None else sorted(fld.face.active_indices),
        "face_dim": None if fld.face is None else fld.face.dim,
        "body": None if fld.body is None else fld.body.spec, "meta": fld.meta,
    }
    idx = np.indices(g.shape).reshape(g.dim, -1).T
    table = np.column_stack([idx, g.mask.reshape(-1), fld.values.reshape(-1)])
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(FIELD_TAG + json.dumps(_plain(meta)) + "\n")
        fh.write(",".join([f"i{a}" for a in range(g.dim)] + ["mask", "value"]) + "\n")
        np.savetxt(fh, table, delimiter=",", fmt=["%d"] * (g.dim + 1) + [FMT])
    return path


def read_field(path: str | Path) -> ValueField:
    path = Path(path)
    with path.open() as fh:
        first = fh.readline()
        if not first.startswith(FIELD_TAG):
            raise ValueError(f"{path} is not a field file")
        meta = json.loads(first[len(FIELD_TAG):])
        table = np.loadtxt(fh, delimiter=",", skiprows=1, ndmin=2)
    shape = tuple(meta["shape"])
    k = len(shape)
    basis = np.asarray(meta["basis"], dtype=float).reshape(k, -1)
    frame = AffineHull(np.asarray(meta["base"], dtype=float), basis)
    mask = np.zeros(shape, np.int8)
    values = np.zeros(shape)
    ids = tuple(table[:, a].astype(int) for a in range(k))
    mask[ids] = table[:, k].astype(np.int8)
    values[ids] = table[:, k + 1]
    grid = Grid(frame, np.asarray(meta["origin"], dtype=float), float(meta["h"]), shape, mask)
    body = make_body(meta["body"]) if meta.get("body") else None
    face = None
    if meta.get("face") is not None:
        face = Face(frozenset(meta["face"]), int(meta["face_dim"]), frame)
    return ValueField(grid, values, face, body, meta.get("meta") or {})


def write_json(path: str | Path, data: Mapping) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_plain(dict(data)), indent=2, sort_keys=True) + "\n")
    return path


def read_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


def write_contour(path: str | Path, contour: Contour) -> Path:
    """2-d contours as ``line,x0,x1,...`` CSV; 3-d ones as an OFF mesh."""
    path = Path(path)
    if contour.vertices is not None:
        V, T = contour.vertices, contour.triangles
        with path.open("w") as fh:
            fh.write(f"OFF\n# level {contour.level!r}\n{len(V)} {len(T)} 0\n")
            np.savetxt(fh, V, fmt=FMT)
            if len(T):
                np.savetxt(fh, np.column_stack([np.full(len(T), 3), T]), fmt="%d")
        return path
    with path.open("w", newline="") as fh:
        fh.write(f"# level {contour.level!r}\n")
        w = csv.writer(fh)
        d = contour.polylines[0].shape[1] if contour.polylines else 0
        w.writerow(["line"] + [f"x{a}" for a in range(d)])
        for i, line in enumerate(contour.polylines):
            for p in line:
                w.writerow([i] + [FMT % v for v in p])
    return path


def read_contour(path: str | Path) -> Contour:
    path = Path(path)
    lines = path.read_text().splitlines()
    if lines and lines[0].strip() == "OFF":
        level = float(lines[1].split()[-1])
        nv, nt, _ = (int(v) for v in lines[2].split())
        V = np.array([[float(v) for v in ln.split()] for ln in lines[3:3 + nv]]).reshape(nv, -1)
        T = np.array([[int(v) for v in ln.split()[1:]] for ln in lines[3 + nv:3 + nv + nt]],
                     dtype=np.int64).reshape(nt, 3)
        return Contour(level, vertices=V, triangles=T)
    level = float(lines[0].split()[-1])
    rows = list(csv.reader(lines[2:]))
    out: dict[int, list] = {}
    for r in rows:
        out.setdefault(int(r[0]), []).append([float(v) for v in r[1:]])
    return Contour(level, polylines=[np.array(out[i]) for i in sorted(out)])


def write_exit_times(path: str | Path, times: np.ndarray) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        fh.write("path,exit_time\n")
        for i, t in enumerate(np.asarray(times, dtype=float)):
            fh.write(f"{i},{FMT % t}\n")
    return path


def read_exit_times(path: str | Path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)[:, 1]
