"""Command line: ``mincurv {solve,simulate,levelset,refine,verify}``.

Exit codes: 0 success, 1 failed verification, 2 invalid input, 3 solver did
not converge (outputs are still written).  Any flag can also come from a
YAML/JSON file given with ``--config`` whose keys are flag names.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from . import io, martingale as mg
from .geometry import Body, GeometryError, enclosing_ball, face_of, faces, load_body
from .solver import SchemeConfig, ValueField, cauchy_decreasing, refine_study, solve_body, solve_hierarchical
from .solver.analysis import extract_levelset, residual_stats

EXIT_OK, EXIT_FAILED, EXIT_INVALID, EXIT_NOT_CONVERGED = 0, 1, 2, 3
THREADS_ENV = "MINCURV_THREADS"

log = logging.getLogger("mincurv")


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    """Everything a run depends on; stored verbatim in its report."""

    command: str
    body: str | None = None
    out: str | None = None
    seed: int = 0
    probes: list[list[float]] = field(default_factory=list)
    params: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        p = self.params
        if self.command in ("solve", "simulate", "refine") and not self.body:
            raise UsageError("--body is required")
        if self.command in ("solve", "simulate", "levelset", "refine") and not self.out:
            raise UsageError("--out is required")
        if self.command == "solve" and not (p.get("h") or 0) > 0:
            raise UsageError("--h must be positive")
        if self.command == "refine" and (not p.get("h") or any(h <= 0 for h in p["h"])):
            raise UsageError("--h needs positive spacings")
        if self.command == "simulate":
            if not (p.get("dt") or 0) > 0:
                raise UsageError("--dt must be positive")
            if (p.get("paths") or 0) < 1:
                raise UsageError("--paths must be at least 1")
            if not p.get("x0"):
                raise UsageError("--x0 is required")
        if self.command == "levelset":
            if not p.get("field"):
                raise UsageError("--field is required")
            if p.get("t") is None or p["t"] < 0:
                raise UsageError("--t must be a nonnegative level")


# ---------------------------------------------------------------- parser


def _scheme_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--eps", type=float, help="DPP step (default sqrt(h))")
    p.add_argument("--n-dirs", type=int, help="direction pairs (default grows like 1/eps^2)")
    p.add_argument("--fp-tol", type=float, help="sup-norm change that stops the sweeps")
    p.add_argument("--max-sweeps", type=int)
    p.add_argument("--no-prune", action="store_true", help="evaluate every direction at every node")
    p.add_argument("--probe", type=float, nargs="+", action="append", default=None, metavar="X",
                   help="point at which to report the field (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mincurv", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> argparse.ArgumentParser:
        p.add_argument("--config", help="YAML or JSON file with flag defaults")
        p.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV} or all cores)")
        p.add_argument("-v", "--verbose", action="count", default=0)
        return p

    s = common(sub.add_parser("solve", help="solve a body and write its field"))
    s.add_argument("--body")
    s.add_argument("--h", type=float)
    s.add_argument("--out", help="output prefix")
    _scheme_flags(s)

    m = common(sub.add_parser("simulate", help="Monte Carlo exit times under a control law"))
    m.add_argument("--body")
    m.add_argument("--field", help="prefix of a solved field")
    m.add_argument("--x0", type=float, nargs="+")
    m.add_argument("--dt", type=float, default=1e-4)
    m.add_argument("--paths", type=int, default=1000)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--control", choices=["auto", "kernel", "isotropic", "rotation"], default="auto")
    m.add_argument("--rank-tol", type=float, default=mg.DEFAULT_RANK_TOL)
    m.add_argument("--grad-tol", type=float)
    m.add_argument("--t-max", type=float)
    m.add_argument("--drift-paths", type=int, default=10, help="paths recorded for the drift check")
    m.add_argument("--per-path", help="CSV of every exit time")
    m.add_argument("--out", help="report file (JSON)")

    lv = common(sub.add_parser("levelset", help="contour a solved field"))
    lv.add_argument("--field", help="prefix of a solved field")
    lv.add_argument("--t", type=float)
    lv.add_argument("--out", help="contour file (CSV polylines or OFF mesh)")

    r = common(sub.add_parser("refine", help="probe values under grid refinement"))
    r.add_argument("--body")
    r.add_argument("--h", type=float, nargs="+")
    r.add_argument("--out", help="report file (JSON)")
    _scheme_flags(r)

    from .verify import SUITES

    v = common(sub.add_parser("verify", help="run an acceptance suite"))
    v.add_argument("--suite", choices=sorted(SUITES), required=True)
    v.add_argument("--out", help="optional JSON report")
    return ap


def parse_config(argv: Sequence[str] | None = None) -> RunConfig:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.config:
        text = Path(args.config).read_text()
        extra = yaml.safe_load(text) or {}
        if not isinstance(extra, dict):
            raise UsageError("config file must hold a mapping")
        defaults = {k.replace("-", "_"): v for k, v in extra.items()}
        chosen = ap._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in chosen._actions}
        unknown = set(defaults) - known
        if unknown:
            raise UsageError(f"unknown config keys {sorted(unknown)}")
        chosen.set_defaults(**defaults)
        args = ap.parse_args(argv)
    ns = vars(args).copy()
    probes = ns.pop("probe", None) or []
    cfg = RunConfig(command=ns.pop("command"), body=ns.pop("body", None), out=ns.pop("out", None),
                    seed=int(ns.pop("seed", 0) or 0), probes=[list(p) for p in probes])
    ns.pop("config", None)
    cfg.params = ns
    return cfg


# ---------------------------------------------------------------- commands


def _scheme(p: dict, h: float) -> SchemeConfig:
    return SchemeConfig(h=h, eps=p.get("eps"), n_dirs=p.get("n_dirs"), fp_tol=p.get("fp_tol"),
                        max_sweeps=p.get("max_sweeps"), prune=not p.get("no_prune"))


def _set_threads(n: int | None) -> int:
    import numba

    if n is None and os.environ.get(THREADS_ENV):
        n = int(os.environ[THREADS_ENV])
    if n is None:
        return numba.get_num_threads()
    if n < 1:
        raise UsageError("--threads must be at least 1")
    n = min(n, numba.config.NUMBA_NUM_THREADS)
    numba.set_num_threads(n)
    return n


def _field_paths(prefix: str) -> tuple[Path, Path]:
    return Path(f"{prefix}.field.csv"), Path(f"{prefix}.faces.json")


def _bound_summary(fld: ValueField) -> dict:
    _, r = enclosing_ball(fld.body)
    return {"min": float(fld.values.min()), "max": float(fld.values.max()), "r2": r * r}


def cmd_solve(cfg: RunConfig) -> int:
    body = load_body(cfg.body)
    scheme = _scheme(cfg.params, cfg.params["h"])
    field_path, faces_path = _field_paths(cfg.out)
    files = {"field": str(field_path)}
    if body.is_polytope and body.dim >= 3:
        fields, rep = solve_hierarchical(body, scheme)
        top = max((f for f, v in fields.items() if isinstance(v, ValueField)), key=lambda f: f.dim)
        fld = fields[top]
        manifest = []
        for i, (f, v) in enumerate(sorted(fields.items(), key=lambda kv: (kv[0].dim, kv[0].key))):
            if isinstance(v, ValueField) and f != top:
                path = Path(f"{cfg.out}.face{i}.field.csv")
                io.write_field(path, v)
                manifest.append({"face": sorted(f.active_indices), "dim": f.dim, "file": path.name})
        io.write_json(faces_path, {"faces": manifest})
        files["faces"] = str(faces_path)
    else:
        fld, rep = solve_body(body, scheme)
    io.write_field(field_path, fld)
    res = residual_stats(fld)
    rep.residual_median, rep.residual_p90 = res["median"], res["p90"]
    probes = [{"x": p, "u": float(fld(np.asarray(p, dtype=float)))} for p in cfg.probes]
    report = {"run": asdict(cfg), "scheme": scheme.to_dict(), "report": rep.to_dict(),
              "probes": probes, "bound": _bound_summary(fld), "residual": res, "files": files}
    io.write_json(f"{cfg.out}.report.json", report)
    for p in probes:
        print(f"u({', '.join(repr(v) for v in p['x'])}) = {p['u']!r}")
    print(f"{'converged' if rep.converged else 'NOT converged'} after {rep.sweeps} sweeps "
          f"({rep.wall_time:.2f} s); wrote {field_path}")
    return EXIT_OK if rep.converged else EXIT_NOT_CONVERGED


def load_fields(prefix: str, body: Body | None = None) -> tuple[ValueField, dict]:
    """Top field of a ``solve`` run and, for polytopes, its face fields keyed by face."""
    field_path, faces_path = _field_paths(prefix)
    fld = io.read_field(field_path)
    body = body or fld.body
    by_face: dict = {}
    if body is not None and body.is_polytope:
        lookup = {(f.active_indices, f.dim): f for f in faces(body)}
        top = face_of(body, body.vertices.mean(axis=0))
        by_face[top] = fld
        if faces_path.exists():
            for entry in io.read_json(faces_path)["faces"]:
                f = lookup.get((frozenset(entry["face"]), entry["dim"]))
                if f is None:
                    raise UsageError(f"face {entry['face']} does not belong to the body")
                by_face[f] = io.read_field(faces_path.parent / entry["file"])
    return fld, by_face


def _euler_batch(law, body, x0, p, cfg, fld) -> tuple[mg.ExitStats, dict]:
    n, k = p["paths"], min(p["drift_paths"], p["paths"])
    samples = []
    drifts = []
    for i in range(n):
        rec = fld is not None and i < k
        s = mg.simulate_euler(law, body, x0, p["dt"], cfg.seed, path_id=i, t_max=p.get("t_max"),
                              record_stride=1 if rec else None, field=fld if rec else None)
        samples.append(s)
        if rec:
            drifts.append(s.drift_check)
    drift = {"paths": len(drifts)}
    if drifts:
        drift.update(max=float(max(drifts)), mean=float(np.mean(drifts)),
                     relative_max=float(max(drifts) / max(float(fld(x0)), 1e-300)))
    return mg.exit_statistics(samples), drift


def cmd_simulate(cfg: RunConfig) -> int:
    p = cfg.params
    body = load_body(cfg.body)
    x0 = np.asarray(p["x0"], dtype=float)
    if x0.shape[0] != body.ambient_dim:
        raise UsageError(f"--x0 needs {body.ambient_dim} coordinates")
    fld, by_face = (None, {})
    if p.get("field"):
        fld, by_face = load_fields(p["field"], body)
    control = p["control"]
    t0 = time.perf_counter()
    drift: dict = {}
    if control == "auto":
        if body.kind == "union" and fld is None:
            control = "union-cascade"
            st = mg.simulate_cascade(body, None, x0, p["dt"], p["paths"], cfg.seed, t_max=p.get("t_max"))
        elif fld is None:
            raise UsageError("--control auto needs --field unless the body is a union of segments and discs")
        elif body.is_polytope:
            control = "face-cascade"
            st = mg.simulate_cascade(body, by_face, x0, p["dt"], p["paths"], cfg.seed, p["rank_tol"],
                                     p.get("grad_tol"), p.get("t_max"))
        else:
            control = "kernel"
    if control == "kernel":
        if fld is None:
            raise UsageError("--control kernel needs --field")
        law = mg.synthesize_control(fld, p["rank_tol"], p.get("grad_tol"))
        st, drift = _euler_batch(law, body, x0, p, cfg, fld)
    elif control == "isotropic":
        st, drift = _euler_batch(mg.IsotropicBM(), body, x0, p, cfg, fld)
    elif control == "rotation":
        c, _ = enclosing_ball(body)
        B = body.affine_hull.basis
        if B.shape[0] < 2:
            raise UsageError("rotation needs a body of dimension at least 2")
        st, drift = _euler_batch(mg.RotationPlane(c, B[0], B[1]), body, x0, p, cfg, fld)
    wall = time.perf_counter() - t0
    _, r = enclosing_ball(body)
    report = {"run": asdict(cfg), "control": control, "stats": st.to_dict(), "drift_check": drift,
              "fallback_events": st.fallbacks, "critical_events": st.criticals,
              "r2": r * r, "wall_time": wall}
    if fld is not None:
        report["field_at_x0"] = float(fld(x0))
    io.write_json(cfg.out, report)
    if p.get("per_path"):
        io.write_exit_times(p["per_path"], st.times)
    print(f"{control}: {st.n_paths} paths, min exit {st.min!r}, mean {st.mean!r} (se {st.stderr:.3g})")
    return EXIT_OK


def cmd_levelset(cfg: RunConfig) -> int:
    fld = io.read_field(_field_paths(cfg.params["field"])[0])
    t = cfg.params["t"]
    vmax = float(fld.values.max())
    if t > vmax:
        raise UsageError(f"--t {t} exceeds the field maximum {vmax!r}")
    c = extract_levelset(fld, t)
    io.write_contour(cfg.out, c)
    n = len(c.polylines) if c.vertices is None else len(c.triangles)
    print(f"level {t!r}: {n} {'polylines' if c.vertices is None else 'triangles'} -> {cfg.out}")
    return EXIT_OK


def cmd_refine(cfg: RunConfig) -> int:
    body = load_body(cfg.body)
    hs = sorted(cfg.params["h"], reverse=True)
    probes = cfg.probes or [list(enclosing_ball(body)[0])]
    template = _scheme(cfg.params, hs[0])
    if cfg.params.get("eps") is None:
        template = SchemeConfig(h=hs[0], n_dirs=template.n_dirs, fp_tol=template.fp_tol,
                                max_sweeps=template.max_sweeps, prune=template.prune)
    rows = refine_study(body, hs, probes, template)
    report = {"run": asdict(cfg), "probes": probes, "rows": [asdict(r) for r in rows],
              "cauchy_decreasing": cauchy_decreasing(rows)}
    io.write_json(cfg.out, report)
    for r in rows:
        print(f"h={r.h!r}: {', '.join(repr(v) for v in r.values)}")
    return EXIT_OK


def cmd_verify(cfg: RunConfig) -> int:
    from .verify import run_suite

    checks = run_suite(cfg.params["suite"])
    for c in checks:
        print(c.line())
    if cfg.out:
        io.write_json(cfg.out, {"run": asdict(cfg), "checks": [asdict(c) for c in checks]})
    return EXIT_OK if all(c.passed for c in checks) else EXIT_FAILED


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "levelset": cmd_levelset,
            "refine": cmd_refine, "verify": cmd_verify}


def run(cfg: RunConfig) -> int:
    cfg.validate()
    _set_threads(cfg.params.get("threads"))
    return COMMANDS[cfg.command](cfg)


def main(argv: Sequence[str] | None = None) -> int:
    try:
        cfg = parse_config(argv)
        level = logging.WARNING - 10 * min(cfg.params.get("verbose", 0), 2)
        logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
        return run(cfg)
    except (UsageError, GeometryError, mg.SimulationError, FileNotFoundError, KeyError,
            json.JSONDecodeError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
