"""The minimum-curvature operator and the control matrices built from it.

For a gradient ``p`` and a symmetric matrix ``M``::

    F(p, M) = -1/2 max { y^T M y : |y| = 1, y . p = 0 }      (p != 0)
    F(0, M) = -1/2 lambda_1(M)

Eigenvalues are sorted ``lambda_1 >= lambda_2 >= ...``.  The upper
semicontinuous envelope differs only at ``p = 0``, where it equals
``-lambda_2(M) / 2``.
"""

from __future__ import annotations

import numpy as np

DEFAULT_RANK_TOL = 1e-6
ZERO_GRAD_TOL = 1e-10


class CriticalPointError(ValueError):
    """Raised when an operation needs a nonzero gradient."""


class NonsingularError(ValueError):
    """The control matrix H has full numerical rank at this point."""


def _as_pm(p, M) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p, dtype=float)
    M = np.asarray(M, dtype=float)
    return p, 0.5 * (M + M.T)


def is_critical(p: np.ndarray, M: np.ndarray) -> bool:
    """Whether ``p`` counts as zero relative to the size of ``M``."""
    return bool(np.linalg.norm(p) < ZERO_GRAD_TOL * (1.0 + np.linalg.norm(M, 2)))


def eigenvalues_desc(M: np.ndarray) -> np.ndarray:
    return np.linalg.eigvalsh(0.5 * (M + M.T))[::-1]


def orth_complement(p: np.ndarray) -> np.ndarray:
    """Orthonormal basis of ``p``'s complement as the columns of a ``d x (d-1)`` array.

    Built from the Householder reflection taking ``e_1`` to ``-sign(p_1) p/|p|``,
    so the result is a deterministic function of ``p``.
    """
    p = np.asarray(p, dtype=float)
    d = p.shape[-1]
    n = np.linalg.norm(p, axis=-1, keepdims=True)
    u = p / n
    sgn = np.where(u[..., :1] >= 0.0, 1.0, -1.0)
    v = u.copy()
    v[..., :1] += sgn
    v /= np.linalg.norm(v, axis=-1, keepdims=True)
    H = np.eye(d) - 2.0 * v[..., :, None] * v[..., None, :]
    return H[..., :, 1:]


def eval_F(p, M) -> float:
    """``F(p, M)``; the lower semicontinuous branch at ``p = 0``."""
    p, M = _as_pm(p, M)
    if is_critical(p, M):
        return -0.5 * float(eigenvalues_desc(M)[0])
    Q = orth_complement(p)
    return -0.5 * float(np.linalg.eigvalsh(Q.T @ M @ Q)[-1])


def eval_F_upper(p, M) -> float:
    """Upper envelope: equals :func:`eval_F` off ``p = 0`` and ``-lambda_2/2`` at it."""
    p, M = _as_pm(p, M)
    if is_critical(p, M):
        lam = eigenvalues_desc(M)
        return -0.5 * float(lam[1] if lam.size > 1 else lam[0])
    return eval_F(p, M)


def eval_F_many(P: np.ndarray, Ms: np.ndarray, upper: bool = False) -> np.ndarray:
    """Vectorised :func:`eval_F` over stacks ``P`` of shape ``(n, d)`` and ``Ms`` ``(n, d, d)``."""
    P = np.asarray(P, dtype=float)
    Ms = 0.5 * (np.asarray(Ms, dtype=float) + np.swapaxes(Ms, -1, -2))
    lam = np.linalg.eigvalsh(Ms)
    mnorm = np.abs(lam).max(axis=-1)
    crit = np.linalg.norm(P, axis=-1) < ZERO_GRAD_TOL * (1.0 + mnorm)
    out = np.empty(P.shape[0])
    at_zero = lam[:, -2] if (upper and lam.shape[-1] > 1) else lam[:, -1]
    out[crit] = -0.5 * at_zero[crit]
    if np.any(~crit):
        Q = orth_complement(P[~crit])
        T = np.swapaxes(Q, -1, -2) @ Ms[~crit] @ Q
        out[~crit] = -0.5 * np.linalg.eigvalsh(T)[:, -1]
    return out


def lambda_min_orth(A, p) -> float:
    """Smallest eigenvalue of ``A`` restricted to the complement of ``p``."""
    p, A = _as_pm(p, A)
    if np.linalg.norm(p) == 0.0:
        raise CriticalPointError("lambda_min_orth needs p != 0")
    Q = orth_complement(p)
    return float(np.linalg.eigvalsh(Q.T @ A @ Q)[0])


def _canonical_sign(y: np.ndarray) -> np.ndarray:
    i = int(np.argmax(np.abs(y) > 1e-12))
    return -y if y[i] < 0 else y


def argmax_tangent(p, M) -> np.ndarray:
    """Unit ``y`` orthogonal to ``p`` maximising ``y^T M y``.

    Among tied eigenvalues the one ranked last by the symmetric eigensolver is
    used; the sign is fixed so the first nonzero entry is positive.
    """
    p, M = _as_pm(p, M)
    if p.shape[0] < 2:
        raise ValueError("argmax_tangent needs d >= 2")
    if is_critical(p, M):
        raise CriticalPointError("argmax_tangent needs p != 0")
    Q = orth_complement(p)
    _, W = np.linalg.eigh(Q.T @ M @ Q)
    y = Q @ W[:, -1]
    return _canonical_sign(y / np.linalg.norm(y))


def tangent_projector(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return np.eye(p.shape[0]) - np.outer(p, p) / (p @ p)


def kernel_control(grad, hess, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Diffusion matrix ``a = (I - H^+ H) / (d - r)`` with ``H = P hess P / 2 + I``.

    ``P`` projects onto the complement of ``grad`` and ``r`` is the numerical
    rank of ``H``.  The result is PSD with unit trace and satisfies
    ``a grad = 0`` whenever ``H`` is singular.

    Raises
    ------
    CriticalPointError
        If ``grad`` is zero.
    NonsingularError
        If ``H`` has full numerical rank (no admissible direction; the field
        does not solve the equation here).
    """
    grad, hess = _as_pm(grad, hess)
    if np.linalg.norm(grad) == 0.0 or is_critical(grad, hess):
        raise CriticalPointError("kernel_control needs a nonzero gradient")
    d = grad.shape[0]
    P = tangent_projector(grad)
    H = 0.5 * P @ hess @ P + np.eye(d)
    lam, V = np.linalg.eigh(0.5 * (H + H.T))
    thresh = rank_tol * max(1.0, float(np.abs(lam).max()))
    null = np.abs(lam) <= thresh
    r = d - int(null.sum())
    if r == d:
        raise NonsingularError(f"H is nonsingular (smallest |eigenvalue| {np.abs(lam).min():.3e})")
    # I - H^+ H is the projector onto the numerical kernel of H
    K = V[:, null]
    return (K @ K.T) / (d - r)


def critical_rotation_plane(hess) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal eigenvectors of ``hess`` for its two largest eigenvalues."""
    hess = np.asarray(hess, dtype=float)
    if hess.shape[0] < 2:
        raise ValueError("a rotation plane needs d >= 2")
    _, V = np.linalg.eigh(0.5 * (hess + hess.T))
    return V[:, -1].copy(), V[:, -2].copy()


def rotation_control(w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    """Trace-one diffusion matrix spreading evenly over the plane of ``w1, w2``."""
    return 0.5 * (np.outer(w1, w1) + np.outer(w2, w2))
