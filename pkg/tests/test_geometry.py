import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mincurv.geometry import (GeometryError, boundary_clip, contains, enclosing_ball, face_of, faces,
                              load_body, make_body, skeleton)

from conftest import CUBE, DISC, SQUARE, TETRA


class TestMakeBody:
    def test_disc_is_full_dimensional(self, disc):
        assert disc.ambient_dim == 2
        assert disc.dim == 2

    def test_simplex_in_r4_spans_three_dimensions(self, tetra):
        assert tetra.ambient_dim == 4
        assert tetra.dim == 3
        assert np.allclose(tetra.affine_hull.basis @ np.ones(4), 0.0)

    def test_disc_union(self):
        b = make_body({"kind": "union", "members": [
            {"kind": "ball", "center": [-1, 0], "radius": 1},
            {"kind": "ball", "center": [1, 0], "radius": 1}]})
        assert contains(b, [0.0, 0.0])
        assert contains(b, [1.9, 0.0]) and contains(b, [-1.0, 0.99])
        assert not contains(b, [0.0, 0.5], 1e-6)

    def test_halfspace_normals_are_unit(self):
        b = make_body({"kind": "polytope", "halfspaces": [[2, 0, 2], [-3, 0, 3], [0, 5, 5], [0, -1, 1]]})
        assert np.allclose(np.linalg.norm(b.A, axis=1), 1.0)
        assert np.allclose(b.b, 1.0)

    def test_repeated_halfspaces_collapse(self):
        b = make_body({"kind": "polytope", "halfspaces": [
            [1, 0, 1], [2, 0, 2], [-1, 0, 1], [0, 1, 1], [0, -1, 1]]})
        assert len(b.halfspaces) == 4
        assert len(skeleton(b, 0).faces) == 4

    @pytest.mark.parametrize("spec", [
        {"kind": "polytope", "halfspaces": [[1, 0, -1], [-1, 0, -1], [0, 1, 1], [0, -1, 1]]},
        {"kind": "polytope", "halfspaces": [[1, 0, 1], [0, 1, 1]]},
        {"kind": "ball", "center": [0, 0], "radius": 1, "dim": 3},
        {"kind": "ball", "center": [0, 0], "radius": -1},
        {"kind": "ball", "center": [0, 0], "radius": 1, "colour": "red"},
        {"kind": "teapot"},
    ], ids=["empty", "unbounded", "dim-mismatch", "negative-radius", "unknown-key", "unknown-kind"])
    def test_rejects_bad_specs(self, spec):
        with pytest.raises(GeometryError):
            make_body(spec)

    def test_load_json_and_yaml(self, tmp_path):
        (tmp_path / "d.json").write_text(json.dumps(DISC))
        (tmp_path / "s.yaml").write_text("kind: polytope\nvertices: [[-1,-1],[1,-1],[1,1],[-1,1]]\n")
        assert load_body(tmp_path / "d.json").kind == "ball"
        assert load_body(tmp_path / "s.yaml").dim == 2


class TestContains:
    def test_ball(self, disc):
        assert contains(disc, [0.0, 0.0])
        assert not contains(disc, [1 + 1e-3, 0.0], 1e-6)

    def test_square_corner(self, square):
        assert contains(square, [1.0, 1.0], 1e-9)

    def test_vectorised(self, disc):
        out = contains(disc, np.array([[0, 0], [2, 0], [0.6, 0.8]]))
        assert out.tolist() == [True, False, True]

    def test_floating_disc(self):
        b = make_body({"kind": "ball", "center": [1, 0, 0], "radius": 1, "basis": [[0, 1, 0], [0, 0, 1]]})
        assert b.dim == 2
        assert contains(b, [1, 0.5, 0.5])
        assert not contains(b, [1.1, 0, 0], 1e-6)


class TestFaces:
    def test_cube_interior(self, cube):
        assert face_of(cube, [0, 0, 0]).dim == 3

    def test_cube_facet(self, cube):
        f = face_of(cube, [1, 0.5, -0.2])
        assert f.dim == 2
        assert len(f.active_indices) == 1
        (i,) = f.active_indices
        assert np.allclose(cube.A[i], [1, 0, 0])

    def test_cube_vertex(self, cube):
        assert face_of(cube, [1, 1, 1]).dim == 0

    def test_outside_point_rejected(self, cube):
        with pytest.raises(GeometryError):
            face_of(cube, [1.5, 0, 0])

    def test_cube_one_skeleton(self, cube):
        sk = skeleton(cube, 1)
        dims = [f.dim for f in sk.faces]
        assert dims.count(0) == 8 and dims.count(1) == 12 and len(dims) == 20

    def test_simplex_one_skeleton(self, tetra):
        dims = [f.dim for f in skeleton(tetra, 1).faces]
        assert dims.count(0) == 4 and dims.count(1) == 6 and len(dims) == 10

    def test_square_vertices(self, square):
        assert len(skeleton(square, 0).faces) == 4

    def test_cube_lattice_counts(self, cube):
        dims = [f.dim for f in faces(cube)]
        assert [dims.count(k) for k in range(4)] == [8, 12, 6, 1]

    def test_ball_has_no_lattice(self, disc):
        with pytest.raises(GeometryError):
            skeleton(disc, 0)


class TestEnclosingBall:
    def test_ball(self, disc):
        c, r = enclosing_ball(disc)
        assert np.allclose(c, 0) and r == 1.0

    def test_square(self, square):
        c, r = enclosing_ball(square)
        assert r <= np.sqrt(2) + 1e-12 and np.linalg.norm(c) < 1e-12

    def test_segment(self):
        c, r = enclosing_ball(make_body({"kind": "segment", "endpoints": [[-1, 0], [1, 0]]}))
        assert r <= 1 + 1e-12


class TestBoundaryClip:
    def test_ray_hits_sphere(self, disc):
        clip = boundary_clip(disc, [0, 0], [2, 0])
        assert clip.exited and np.allclose(clip.point, [1, 0])

    def test_segment_inside(self, cube):
        clip = boundary_clip(cube, [0, 0, 0], [0.5, 0, 0])
        assert not clip.exited and np.allclose(clip.point, [0.5, 0, 0])

    def test_hits_facet(self, cube):
        clip = boundary_clip(cube, [0.9, 0, 0], [1.2, 0, 0])
        assert clip.exited and np.allclose(clip.point, [1, 0, 0])
        assert clip.face.dim == 2

    def test_start_outside(self, disc):
        with pytest.raises(GeometryError):
            boundary_clip(disc, [2, 0], [0, 0])


# ---------------------------------------------------------------- properties

unit = st.floats(-1.0, 1.0, allow_nan=False)
point3 = st.tuples(unit, unit, unit).map(np.array)


def _snap_to_boundary(x, k):
    """Push ``k`` random coordinates of a cube point onto the faces."""
    y = x.copy()
    for i in range(k):
        y[i] = 1.0 if y[i] >= 0 else -1.0
    return y


@settings(max_examples=200, deadline=None)
@given(point3, st.integers(1, 3))
def test_boundary_points_lie_in_lower_skeleton(x, k):
    cube = make_body(CUBE)
    y = _snap_to_boundary(x, k)
    f = face_of(cube, y)
    assert f.dim <= 3 - k
    sk = skeleton(cube, f.dim)
    assert any(g == f for g in sk.faces)


@settings(max_examples=200, deadline=None)
@given(st.tuples(*[st.floats(-0.99, 0.99)] * 3).map(np.array))
def test_interior_points_are_full_dimensional(x):
    assert face_of(make_body(CUBE), x).dim == 3


@settings(max_examples=200, deadline=None)
@given(st.floats(-0.9, 0.9), st.floats(-0.9, 0.9), st.floats(-1e-3, 1e-3), st.floats(-1e-3, 1e-3))
def test_face_stable_under_tangential_perturbation(a, b, da, db):
    cube = make_body(CUBE)
    f = face_of(cube, [1.0, a, b])
    assert face_of(cube, [1.0, a + da, b + db]) == f


@settings(max_examples=200, deadline=None)
@given(st.tuples(*[st.floats(-0.99, 0.99)] * 3).map(np.array), point3.map(lambda v: 3 * v))
def test_clip_point_sits_on_its_face(x, y):
    cube = make_body(CUBE)
    clip = boundary_clip(cube, x, y)
    assert contains(cube, clip.point, 1e-9)
    if clip.exited:
        for i in clip.face.active_indices:
            assert abs(cube.A[i] @ clip.point - cube.b[i]) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 2 * np.pi), st.floats(0.0, 0.999))
def test_ball_faces_are_points_on_the_sphere(phi, rho):
    disc = make_body(DISC)
    x = np.array([np.cos(phi), np.sin(phi)])
    assert face_of(disc, x).dim == 0
    assert face_of(disc, rho * x).dim == 2


def test_square_and_tetra_specs_build():
    assert make_body(SQUARE).dim == 2
    assert make_body(TETRA).dim == 3
