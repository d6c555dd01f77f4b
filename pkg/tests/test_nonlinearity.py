import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import ortho_group

from mincurv.nonlinearity import (CriticalPointError, NonsingularError, argmax_tangent,
                                  critical_rotation_plane, eval_F, eval_F_many, eval_F_upper,
                                  kernel_control, lambda_min_orth, tangent_projector)


def _tangent_samples(p, n, rng):
    y = rng.standard_normal((n, p.size))
    u = p / np.linalg.norm(p)
    y -= np.outer(y @ u, u)
    return y / np.linalg.norm(y, axis=1, keepdims=True)


class TestEvalF:
    def test_axis_aligned(self):
        assert eval_F([1, 0, 0], np.diag([2, -4, 6])) == pytest.approx(-3.0, abs=1e-14)

    def test_zero_gradient_uses_top_eigenvalue(self):
        assert eval_F([0, 0], np.diag([1, 2])) == pytest.approx(-1.0, abs=1e-14)

    def test_single_tangent_in_plane(self):
        p = np.array([1.0, 1.0]) / np.sqrt(2)
        assert eval_F(p, np.diag([1.0, -1.0])) == pytest.approx(0.0, abs=1e-14)

    def test_ball_value_solves_equation(self):
        rng = np.random.default_rng(1)
        for d in (2, 3, 4):
            p = rng.standard_normal(d)
            assert eval_F(p, -2 * np.eye(d)) == pytest.approx(1.0, abs=1e-13)

    def test_many_matches_scalar(self):
        rng = np.random.default_rng(2)
        P = rng.standard_normal((50, 3))
        P[::7] = 0.0
        M = rng.standard_normal((50, 3, 3))
        for upper in (False, True):
            ref = [(eval_F_upper if upper else eval_F)(p, m) for p, m in zip(P, M)]
            assert np.allclose(eval_F_many(P, M, upper), ref, atol=1e-13)


class TestUpperEnvelope:
    def test_second_eigenvalue_at_zero(self):
        assert eval_F_upper([0, 0], np.diag([1, 2])) == pytest.approx(-0.5, abs=1e-14)

    def test_identity(self):
        assert eval_F_upper(np.zeros(3), np.eye(3)) == pytest.approx(-0.5, abs=1e-14)

    def test_agrees_off_zero(self):
        assert eval_F_upper([1, 0, 0], np.diag([2, -4, 6])) == pytest.approx(-3.0, abs=1e-14)


class TestLambdaMinOrth:
    def test_diagonal(self):
        assert lambda_min_orth(np.diag([5, 1, 3]), [1, 0, 0]) == pytest.approx(1.0)

    def test_identity(self):
        assert lambda_min_orth(np.eye(4), [0.3, -1, 2, 0.1]) == pytest.approx(1.0)

    def test_zero_gradient(self):
        with pytest.raises(CriticalPointError):
            lambda_min_orth(np.eye(2), [0, 0])

    def test_projected_form_equals_F(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            p = rng.standard_normal(3)
            M = rng.standard_normal((3, 3))
            M = M + M.T
            P = tangent_projector(p)
            assert lambda_min_orth(-0.5 * P @ M @ P, p) == pytest.approx(eval_F(p, M), abs=1e-12)

    def test_sampling_oracle(self):
        rng = np.random.default_rng(4)
        A = rng.standard_normal((4, 4))
        A = A + A.T
        p = rng.standard_normal(4)
        y = _tangent_samples(p, 10 ** 6, rng)
        brute = np.min(np.einsum("ni,ij,nj->n", y, A, y))
        assert abs(lambda_min_orth(A, p) - brute) <= 1e-3


class TestArgmaxTangent:
    def test_diagonal(self):
        y = argmax_tangent([1, 0, 0], np.diag([0, -4, 6]))
        assert np.allclose(np.abs(y), [0, 0, 1])

    def test_plane(self):
        y = argmax_tangent([0, 1], np.array([[3.0, 1.0], [1.0, -2.0]]))
        assert np.allclose(np.abs(y), [1, 0])

    def test_attains_F(self):
        rng = np.random.default_rng(5)
        for d in (2, 3, 4):
            p = rng.standard_normal(d)
            M = rng.standard_normal((d, d))
            M = M + M.T
            y = argmax_tangent(p, M)
            assert abs(y @ p) <= 1e-12 and abs(np.linalg.norm(y) - 1) <= 1e-12
            assert abs(y @ M @ y + 2 * eval_F(p, M)) <= 1e-10

    def test_beats_random_tangents(self):
        rng = np.random.default_rng(6)
        p = rng.standard_normal(3)
        M = rng.standard_normal((3, 3))
        M = M + M.T
        y = argmax_tangent(p, M)
        z = _tangent_samples(p, 10 ** 5, rng)
        assert y @ M @ y >= np.max(np.einsum("ni,ij,nj->n", z, M, z)) - 1e-6

    def test_needs_gradient(self):
        with pytest.raises(CriticalPointError):
            argmax_tangent([0, 0, 0], np.eye(3))


class TestKernelControl:
    def test_explicit_two_by_two(self):
        a = kernel_control([0, 1], np.diag([-2.0, 0.0]))
        assert np.allclose(a, np.diag([1.0, 0.0]), atol=1e-14)

    @pytest.mark.parametrize("d", [2, 3, 4])
    def test_ball_value_gives_tangent_projector(self, d):
        rng = np.random.default_rng(d)
        x = rng.standard_normal(d)
        a = kernel_control(-2 * x, -2 * np.eye(d))
        assert np.allclose(a, tangent_projector(x) / (d - 1), atol=1e-12)
        if d == 2:
            t = np.array([-x[1], x[0]]) / np.linalg.norm(x)
            assert np.allclose(a, np.outer(t, t), atol=1e-12)

    def test_random_singular_H(self):
        rng = np.random.default_rng(7)
        tol = 1e-6
        for d in (2, 3, 4):
            for _ in range(20):
                p = rng.standard_normal(d)
                Q = np.linalg.qr(np.column_stack([p, rng.standard_normal((d, d - 1))]))[0][:, 1:]
                # tangent Hessian with eigenvalue -2 along a known tangent direction
                lam = np.concatenate([[-2.0], rng.uniform(-1.5, 4.0, d - 2)])
                B = Q @ np.diag(lam) @ Q.T + rng.standard_normal() * np.outer(p, p)
                a = kernel_control(p, B, tol)
                P = tangent_projector(p)
                H = 0.5 * P @ B @ P + np.eye(d)
                assert np.linalg.norm(H @ a) <= 10 * tol
                assert np.trace(a) == pytest.approx(1.0)

    def test_nonsingular(self):
        with pytest.raises(NonsingularError):
            kernel_control([1, 0], np.zeros((2, 2)))

    def test_critical(self):
        with pytest.raises(CriticalPointError):
            kernel_control([0, 0], -2 * np.eye(2))


class TestRotationPlane:
    def test_top_two(self):
        w1, w2 = critical_rotation_plane(np.diag([3.0, 2.0, 1.0]))
        assert np.allclose(np.abs(w1), [1, 0, 0]) and np.allclose(np.abs(w2), [0, 1, 0])

    def test_degenerate_spectrum(self):
        w1, w2 = critical_rotation_plane(-2 * np.eye(3))
        assert np.allclose([w1 @ w1, w2 @ w2, w1 @ w2], [1, 1, 0], atol=1e-14)

    def test_tied_top(self):
        w1, w2 = critical_rotation_plane(np.diag([1.0, 1.0, -5.0]))
        assert abs(w1[2]) < 1e-14 and abs(w2[2]) < 1e-14
        assert abs(w1 @ w2) < 1e-14


# ---------------------------------------------------------------- properties

dims = st.integers(2, 4)


@st.composite
def pm_pairs(draw, allow_zero=True):
    d = draw(dims)
    elems = st.floats(-10, 10, allow_nan=False)
    p = draw(arrays(float, d, elements=elems))
    if allow_zero and draw(st.booleans()):
        p = np.zeros(d)
    A = draw(arrays(float, (d, d), elements=elems))
    return p, 0.5 * (A + A.T)


@settings(max_examples=300, deadline=None)
@given(pm_pairs())
def test_sandwich(pm):
    p, M = pm
    lam = np.sort(np.linalg.eigvalsh(M))[::-1]
    F = eval_F(p, M)
    scale = 1e-10 * (1 + np.abs(lam).max())
    assert -0.5 * lam[0] - scale <= F <= -0.5 * lam[1] + scale


@settings(max_examples=300, deadline=None)
@given(pm_pairs(), st.integers(0, 2 ** 32 - 1))
def test_degenerate_ellipticity(pm, seed):
    p, M = pm
    B = np.random.default_rng(seed).standard_normal((p.size, p.size))
    N = M + B @ B.T
    assert eval_F(p, M) >= eval_F(p, N) - 1e-9 * (1 + np.abs(N).max())


@settings(max_examples=300, deadline=None)
@given(pm_pairs(allow_zero=False), st.floats(1e-3, 1e3), st.booleans())
def test_scale_invariance(pm, c, flip):
    p, M = pm
    if np.linalg.norm(p) < 1e-6:
        return
    c = -c if flip else c
    assert eval_F(c * p, M) == pytest.approx(eval_F(p, M), abs=1e-9 * (1 + np.abs(M).max()))


@settings(max_examples=300, deadline=None)
@given(pm_pairs(), st.integers(0, 2 ** 32 - 1))
def test_rotation_equivariance(pm, seed):
    p, M = pm
    Q = ortho_group.rvs(p.size, random_state=seed)
    assert eval_F(Q @ p, Q @ M @ Q.T) == pytest.approx(eval_F(p, M), abs=1e-10 * (1 + np.abs(M).max()))


@settings(max_examples=20, deadline=None)
@given(pm_pairs(allow_zero=False), st.integers(0, 2 ** 32 - 1))
def test_sampling_oracle(pm, seed):
    p, M = pm
    if np.linalg.norm(p) < 1e-6:
        return
    y = _tangent_samples(p, 10 ** 6, np.random.default_rng(seed))
    brute = -0.5 * np.max(np.einsum("ni,ij,nj->n", y, M, y))
    # the sampled sup approaches from below; relative slack for |M| up to 10
    assert abs(eval_F(p, M) - brute) <= 1e-3 * max(1.0, np.abs(M).max())


@settings(max_examples=200, deadline=None)
@given(pm_pairs(allow_zero=False))
def test_kernel_control_output(pm):
    p, M = pm
    if np.linalg.norm(p) < 1e-6:
        return
    # make the field solve the equation here: shift the tangent spectrum so F = 1
    P = tangent_projector(p)
    M = M - (2.0 - 2.0 * eval_F(p, M)) * P
    a = kernel_control(p, M)
    assert np.trace(a) == pytest.approx(1.0)
    assert np.linalg.eigvalsh(a).min() >= -1e-10
    assert np.linalg.norm(a @ p) <= 1e-8 * np.linalg.norm(p)
    assert 1 + 0.5 * np.trace(a @ M) == pytest.approx(0.0, abs=1e-6 * (1 + np.abs(M).max()))
