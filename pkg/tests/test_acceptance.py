"""The thirteen acceptance criteria, each at its stated tolerance.

Every test prints one ``criterion N: PASS|FAIL`` line (collected again in the
terminal summary) and then asserts.  Solves and simulations are shared
through one :class:`~mincurv.verify.Lab`.
"""

import pytest

from mincurv import verify as V

from conftest import ACCEPTANCE


@pytest.fixture(scope="module")
def lab():
    return V.Lab()


def _judge(number, title, checks):
    ok = all(c.passed for c in checks)
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}"
    ACCEPTANCE.append(line)
    print(line)
    for c in checks:
        print("    " + c.line())
    assert ok, "\n".join(c.line() for c in checks if not c.passed)


def test_criterion_01_envelopes():
    _judge(1, "envelope algebra", V.check_envelopes())


def test_criterion_02_disc(lab):
    _judge(2, "unit disc solve at h = 1/64", V.check_disc(lab))


def test_criterion_03_ball3(lab):
    _judge(3, "unit ball solve in 3-d at h = 1/32", V.check_ball3(lab))


def test_criterion_04_rotation():
    _judge(4, "exact rotation invariant and disc exit", V.check_rotation())


def test_criterion_05_square(lab):
    _judge(5, "square arrival time under refinement", V.check_square(lab))


def test_criterion_06_simplex(lab):
    _judge(6, "hierarchical regular simplex", V.check_simplex(lab))


def test_criterion_07_segment_discs(lab):
    _judge(7, "segment-plus-discs cascade", V.check_segment_discs(lab))


def test_criterion_08_disc_union(lab):
    _judge(8, "disc-union selection", V.check_disc_union(lab))


def test_criterion_09_quasiconcavity(lab):
    _judge(9, "quasi-concavity on disc and square", V.check_quasiconcavity(lab))


def test_criterion_11_residual(lab):
    _judge(11, "equation residual on the disc", V.check_residual(lab))


def test_criterion_12_drift(lab):
    _judge(12, "optimal drift along kernel-control paths", V.check_drift(lab))


def test_criterion_13_nonconvex(lab):
    _judge(13, "non-convex thin-neck body", V.check_nonconvex(lab))


def test_criterion_10_global_bound(lab):
    # runs last so it sees every field and simulation produced above
    lab.solve("disc", 1 / 64)
    if not lab.simulations:
        V.check_drift(lab)
    _judge(10, "global bound on fields and mean exits", V.check_global_bound(lab))
