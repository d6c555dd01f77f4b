import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mincurv import io
from mincurv.solver import SchemeConfig, solve_hierarchical
from mincurv.solver.analysis import Contour, extract_levelset

from conftest import quadratic_field


def test_field_round_trip(tmp_path, exact_disc):
    path = io.write_field(tmp_path / "f.field.csv", exact_disc)
    back = io.read_field(path)
    assert np.array_equal(back.values, exact_disc.values)
    assert np.array_equal(back.grid.mask, exact_disc.grid.mask)
    assert back.grid.h == exact_disc.grid.h and back.grid.shape == exact_disc.grid.shape
    assert np.array_equal(back.grid.origin, exact_disc.grid.origin)
    assert back.body.kind == "ball"
    x = np.array([0.3, -0.41])
    assert back(x) == exact_disc(x)


def test_face_field_round_trip(tmp_path, tetra):
    fields, _ = solve_hierarchical(tetra, SchemeConfig(h=1 / 8))
    face, fld = next((f, v) for f, v in fields.items() if f.dim == 2)
    back = io.read_field(io.write_field(tmp_path / "face.field.csv", fld))
    assert back.face == face
    assert np.array_equal(back.grid.frame.basis, fld.grid.frame.basis)
    P = fld.grid.points()[fld.grid.interior]
    assert np.array_equal(back(P), fld(P))


def test_not_a_field(tmp_path):
    (tmp_path / "x.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        io.read_field(tmp_path / "x.csv")


def test_json_plain_types(tmp_path):
    data = {"a": np.float64(0.1), "b": np.arange(3), "c": np.bool_(True), "d": {"e": np.int32(4)},
            "f": float("inf")}
    back = io.read_json(io.write_json(tmp_path / "r.json", data))
    assert back == {"a": 0.1, "b": [0, 1, 2], "c": True, "d": {"e": 4}, "f": "inf"}


def test_contour_2d_round_trip(tmp_path, exact_disc):
    c = extract_levelset(exact_disc, 0.5)
    back = io.read_contour(io.write_contour(tmp_path / "c.csv", c))
    assert back.level == c.level
    assert len(back.polylines) == len(c.polylines)
    for a, b in zip(back.polylines, c.polylines):
        assert np.array_equal(a, b)


def test_contour_3d_round_trip(tmp_path, ball3):
    c = extract_levelset(quadratic_field(ball3, 1 / 8), 0.5)
    back = io.read_contour(io.write_contour(tmp_path / "c.off", c))
    assert np.array_equal(back.vertices, c.vertices)
    assert np.array_equal(back.triangles, c.triangles)
    assert back.level == 0.5


@settings(max_examples=50, deadline=None)
@given(arrays(float, st.integers(1, 50), elements=st.floats(0, 1e6, allow_nan=False)))
def test_exit_times_round_trip(tmp_path_factory, times):
    path = tmp_path_factory.mktemp("t") / "times.csv"
    assert np.array_equal(io.read_exit_times(io.write_exit_times(path, times)), times)


@settings(max_examples=50, deadline=None)
@given(st.lists(arrays(float, st.tuples(st.integers(2, 20), st.just(2)),
                       elements=st.floats(-10, 10, allow_nan=False)), min_size=1, max_size=4),
       st.floats(0, 5, allow_nan=False))
def test_polylines_round_trip(tmp_path_factory, lines, level):
    path = tmp_path_factory.mktemp("c") / "c.csv"
    back = io.read_contour(io.write_contour(path, Contour(level, polylines=lines)))
    assert back.level == level
    assert all(np.array_equal(a, b) for a, b in zip(back.polylines, lines))
