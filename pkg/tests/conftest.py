import numpy as np
import pytest

from mincurv.geometry import make_body
from mincurv.solver import ValueField, build_grid

DISC = {"kind": "ball", "center": [0.0, 0.0], "radius": 1.0}
BALL3 = {"kind": "ball", "center": [0.0, 0.0, 0.0], "radius": 1.0}
SQUARE = {"kind": "polytope", "vertices": [[-1, -1], [1, -1], [1, 1], [-1, 1]]}
CUBE = {"kind": "polytope", "halfspaces": [
    [1, 0, 0, 1], [-1, 0, 0, 1], [0, 1, 0, 1], [0, -1, 0, 1], [0, 0, 1, 1], [0, 0, -1, 1]]}
TETRA = {"kind": "polytope", "vertices": np.eye(4).tolist()}


def quadratic_field(body, h, clip=True):
    """``r^2 - |x - c|^2`` sampled on the body's grid: the exact value of a ball.

    ``clip=False`` keeps the negative values outside, so difference derivatives
    are exact up to the boundary.
    """
    g = build_grid(body, h)
    X = g.points()
    vals = body.radius ** 2 - np.sum((X - body.center) ** 2, axis=-1)
    return ValueField(g, np.clip(vals, 0.0, None) if clip else vals, None, body)


@pytest.fixture(scope="session")
def disc():
    return make_body(DISC)


@pytest.fixture(scope="session")
def ball3():
    return make_body(BALL3)


@pytest.fixture(scope="session")
def square():
    return make_body(SQUARE)


@pytest.fixture(scope="session")
def cube():
    return make_body(CUBE)


@pytest.fixture(scope="session")
def tetra():
    return make_body(TETRA)


@pytest.fixture(scope="session")
def exact_disc(disc):
    return quadratic_field(disc, 1 / 64)


@pytest.fixture(scope="session")
def smooth_disc(disc):
    return quadratic_field(disc, 1 / 64, clip=False)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
