import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import ConvexHull

from mincurv.geometry import GeometryError, faces, make_body
from mincurv.solver import (INTERIOR, SchemeConfig, ValueField, build_grid, cauchy_decreasing,
                            dpp_operator, refine_study, solve_body, solve_hierarchical)
from mincurv.solver.analysis import extract_levelset, residual, residual_field, residual_stats, residual_step
from mincurv.solver.scheme import default_n_dirs

from conftest import BALL3, DISC, quadratic_field

TRIANGLE = {"kind": "polytope", "vertices": [[-1.0, 0.0], [1.0, 0.0], [0.0, math.sqrt(3.0)]]}
DISC_UNION = {"kind": "union", "members": [
    {"kind": "ball", "center": [-1.0, 0.0], "radius": 1.0},
    {"kind": "ball", "center": [1.0, 0.0], "radius": 1.0}]}


@pytest.fixture(scope="module")
def disc_solve(disc):
    return solve_body(disc, SchemeConfig(h=1 / 32))


@pytest.fixture(scope="module")
def square_solve(square):
    return solve_body(square, SchemeConfig(h=1 / 32))


class TestConfig:
    def test_defaults(self):
        c = SchemeConfig(h=1 / 64)
        assert c.step == pytest.approx(0.125)
        assert c.dirs_for(2) == default_n_dirs(2, 0.125)

    @pytest.mark.parametrize("kw", [{"h": 0}, {"h": 0.1, "eps": 0.01}, {"h": 0.1, "n_dirs": 0},
                                    {"h": 0.1, "fp_tol": -1}, {"h": 0.1, "max_sweeps": 0}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            SchemeConfig(**kw)


class TestGrid:
    def test_coarse_disc(self, disc):
        g = build_grid(disc, 0.5)
        assert g.mask[g.index_of(np.zeros(2))] == INTERIOR
        assert 5 <= np.count_nonzero(g.interior) <= 25

    def test_segment_needs_no_grid(self):
        seg = make_body({"kind": "segment", "endpoints": [[-1, 0], [1, 0]]})
        with pytest.raises(GeometryError):
            build_grid(seg, 0.1)

    def test_facet_grid_lives_in_its_plane(self, cube):
        facet = next(f for f in faces(cube) if f.dim == 2)
        sub = make_body({"kind": "polytope", "vertices": cube.vertices[list(facet.vertex_ids)].tolist()})
        g = build_grid(sub, 0.25)
        assert g.dim == 2
        P = g.points()[g.interior]
        (i,) = facet.active_indices
        assert np.allclose(P @ cube.A[i], cube.b[i])

    def test_h_too_large(self, disc):
        with pytest.raises(ValueError):
            build_grid(disc, 3.0)


class TestOperator:
    def test_zero_field_gains_eps_squared(self, disc):
        g = build_grid(disc, 1 / 16)
        cfg = SchemeConfig(h=1 / 16)
        out = dpp_operator(ValueField(g, np.zeros(g.shape), None, disc), cfg)
        assert np.allclose(out.values[g.interior], cfg.step ** 2, atol=1e-15)
        assert np.all(out.values[~g.interior] == 0.0)

    def test_consistent_on_exact_solution(self, disc):
        errs = []
        for h in (1 / 16, 1 / 32, 1 / 64):
            u = quadratic_field(disc, h)
            Tu = dpp_operator(u, SchemeConfig(h=h))
            errs.append(abs(Tu(np.zeros(2)) - u(np.zeros(2))))
        assert errs[-1] <= 1e-2
        assert errs[0] >= errs[-1]

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_monotone(self, seed):
        disc = make_body(DISC)
        g = build_grid(disc, 1 / 8)
        rng = np.random.default_rng(seed)
        u = rng.uniform(0, 1, g.shape) * (g.mask != 0)
        w = u + rng.uniform(0, 0.5, g.shape) * (g.mask != 0)
        cfg = SchemeConfig(h=1 / 8, n_dirs=16)
        Tu = dpp_operator(ValueField(g, u, None, disc), cfg).values
        Tw = dpp_operator(ValueField(g, w, None, disc), cfg).values
        assert np.all(Tu <= Tw + 1e-15)

    @pytest.mark.parametrize("spec", [DISC, TRIANGLE])
    def test_pruning_is_exact(self, spec):
        body = make_body(spec)
        g = build_grid(body, 1 / 16)
        rng = np.random.default_rng(3)
        u = ValueField(g, rng.uniform(0, 1, g.shape) * g.interior, None, body)
        a = dpp_operator(u, SchemeConfig(h=1 / 16)).values
        b = dpp_operator(u, SchemeConfig(h=1 / 16, prune=False)).values
        assert np.array_equal(a, b)


class TestSolve:
    def test_disc(self, disc_solve):
        fld, rep = disc_solve
        assert rep.converged
        assert fld(np.zeros(2)) == pytest.approx(1.0, abs=0.05)
        X = fld.grid.points()
        r2 = np.sum(X * X, axis=-1)
        near = fld.grid.interior & (r2 <= 0.81)
        assert np.max(np.abs(fld.values[near] - (1 - r2[near]))) <= 0.08

    def test_bound(self, disc_solve, square_solve):
        for fld, rep in (disc_solve, square_solve):
            assert fld.values.min() >= 0.0
            assert fld.values.max() <= rep.r2 + 1e-9

    def test_square_center(self, square_solve):
        fld, _ = square_solve
        assert fld(np.zeros(2)) == pytest.approx(4 / math.pi, rel=0.08)

    def test_nonconvergence_is_flagged(self, disc):
        _, rep = solve_body(disc, SchemeConfig(h=1 / 8, max_sweeps=1))
        assert not rep.converged and rep.sweeps == 1

    def test_disc_union_tangency_is_not_data(self):
        union = make_body(DISC_UNION)
        g = build_grid(union, 1 / 16)
        assert g.mask[g.index_of(np.zeros(2))] == INTERIOR
        fld, rep = solve_body(union, SchemeConfig(h=1 / 16))
        assert rep.converged
        # the segment between the centres carries the value across the tangency
        assert fld(np.zeros(2)) >= 1.0
        assert fld(np.array([1.0, 0.5])) == pytest.approx(0.75, abs=0.1)

    def test_triangle_area_law(self):
        tri = make_body(TRIANGLE)
        fld, _ = solve_body(tri, SchemeConfig(h=1 / 64))
        centroid = np.array([0.0, math.sqrt(3.0) / 3])
        target = math.sqrt(3.0) * 4 / (4 * math.pi)
        assert fld(centroid) == pytest.approx(target, rel=0.04)

    def test_cube_facets_agree(self, cube):
        fields, rep = solve_hierarchical(cube, SchemeConfig(h=1 / 8))
        facets = [v for f, v in fields.items() if f.dim == 2]
        assert len(facets) == 6
        ref = facets[0].values
        assert max(np.max(np.abs(v.values - ref)) for v in facets) <= 1e-10
        assert rep.faces_solved == 7
        edges = [f for f in fields if f.dim <= 1]
        assert all(fields[f](cube.vertices[f.vertex_ids[0]]) == 0.0 for f in edges)

    def test_simplex_faces_solved_first(self, tetra):
        fields, rep = solve_hierarchical(tetra, SchemeConfig(h=1 / 8))
        assert sorted(f.dim for f in fields if isinstance(fields[f], ValueField)) == [2, 2, 2, 2, 3]
        # neighbouring facets meet along edges where both fields are near zero
        h, eps = 1 / 8, math.sqrt(1 / 8)
        s = np.linspace(0, 1, 33)[:, None]
        for e in (f for f in fields if f.dim == 1):
            a, b = tetra.vertices[list(e.vertex_ids)]
            P = a + s * (b - a)
            for f, v in fields.items():
                if f.dim == 2 and f.active_indices <= e.active_indices:
                    assert np.max(v(P)) <= eps ** 2 + 2 * h


class TestResidual:
    def test_exact_quadratic(self, exact_disc):
        r = residual_field(exact_disc)
        assert np.nanmax(np.abs(r)) <= 1e-8

    def test_zero_field(self, disc):
        g = build_grid(disc, 1 / 8)
        fld = ValueField(g, np.zeros(g.shape), None, disc)
        assert residual(fld, g.index_of(np.zeros(2))) == pytest.approx(-1.0)

    def test_stencil_off_grid(self, exact_disc):
        with pytest.raises(IndexError):
            residual(exact_disc, (0, 0))

    def test_step_matches_game_step(self):
        assert residual_step(1 / 64) == 8
        assert residual_step(1 / 16) == 4

    def test_single_node_matches_field(self, disc_solve):
        fld = disc_solve[0]
        node = fld.grid.index_of(np.array([0.3, 0.2]))
        for step in (1, None):
            assert residual(fld, node, step) == pytest.approx(residual_field(fld, step=step)[node], abs=1e-12)

    def test_wide_differences_see_the_scheme_scale(self, disc_solve):
        fld = disc_solve[0]
        fine = np.nanmedian(np.abs(residual_field(fld, np.sqrt(fld.grid.h), step=1)))
        assert residual_stats(fld)["median"] < fine

    def test_stats(self, disc_solve):
        st_ = residual_stats(disc_solve[0])
        assert st_["count"] > 0 and st_["median"] <= st_["p90"]


def _hausdorff_to_circle(points, radius):
    return float(np.max(np.abs(np.linalg.norm(points, axis=-1) - radius)))


class TestLevelset:
    def test_disc_circle(self, exact_disc):
        c = extract_levelset(exact_disc, 0.75)
        assert len(c.polylines) == 1
        line = c.polylines[0]
        assert np.allclose(line[0], line[-1])
        assert _hausdorff_to_circle(line, 0.5) <= 2 * exact_disc.grid.h
        ang = np.sort(np.arctan2(line[:, 1], line[:, 0]))
        assert np.max(np.diff(np.concatenate([ang, [ang[0] + 2 * np.pi]]))) <= 4 * exact_disc.grid.h

    def test_ball_sphere(self, ball3):
        fld = quadratic_field(ball3, 1 / 16)
        c = extract_levelset(fld, 0.75)
        assert len(c.triangles) > 0
        assert _hausdorff_to_circle(c.vertices, 0.5) <= 2 * fld.grid.h

    def test_max_level_degenerates(self, disc_solve):
        fld, _ = disc_solve
        c = extract_levelset(fld, float(fld.values.max()))
        pts = np.vstack(c.polylines)
        assert np.max(np.linalg.norm(pts, axis=1)) <= 2 * fld.grid.h

    def test_above_max(self, exact_disc):
        with pytest.raises(ValueError):
            extract_levelset(exact_disc, 2.0)

    def test_square_fronts_convex(self, square_solve):
        fld, _ = square_solve
        h = fld.grid.h
        for t in (0.02, 0.1, 0.5):
            for line in extract_levelset(fld, t).polylines:
                hull = ConvexHull(line)
                # distance of each contour point to the hull boundary
                eq = hull.equations
                depth = np.min(-(line @ eq[:, :2].T + eq[:, 2]), axis=1)
                assert np.max(depth) <= 2 * h


class TestRefine:
    def test_disc_cauchy(self, disc):
        rows = refine_study(disc, [1 / 16, 1 / 32, 1 / 64], [[0.0, 0.0]])
        assert rows[0].diffs is None
        assert cauchy_decreasing(rows)

    def test_ball3_approaches_one(self, ball3):
        rows = refine_study(ball3, [1 / 8, 1 / 16], [[0.0, 0.0, 0.0]])
        # already within a few thousandths at h = 1/8, so no monotone trend to test
        assert all(abs(r.values[0] - 1.0) <= 0.08 for r in rows)

    def test_needs_decreasing_h(self, disc):
        with pytest.raises(ValueError):
            refine_study(disc, [1 / 32, 1 / 16], [[0, 0]])
