"""Dense linear algebra shared by the rest of the package.

Everything here is a pure function on numpy arrays.  KKT systems are small at
the scales this package targets (a few thousand unknowns at most), so they are
solved densely with a pivoted LU factorization.
"""

import warnings

import numpy as np
import scipy.linalg

from .errors import NoConvergence, SingularInnerBlock, SingularMatrix

# relative pivot size below which a factorization is declared singular
_PIVOT_RTOL = 64 * np.finfo(float).eps


def lu_factor(system_matrix):
    """Factor a square matrix, raising :class:`SingularMatrix` on rank deficiency.

    The returned object is the ``(lu, piv)`` pair from ``scipy.linalg.lu_factor``
    and can be reused with :func:`lu_solve`.
    """
    M = np.asarray(system_matrix, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"system matrix must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("system matrix has non-finite entries")
    if M.shape[0] == 0:
        return M, np.zeros(0, dtype=np.int32)
    with warnings.catch_warnings():
        # singularity is reported through the pivot test below
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(M, check_finite=False)
    pivots = np.abs(np.diag(lu))
    scale = max(np.abs(M).max(), 1.0)
    if pivots.min() <= _PIVOT_RTOL * M.shape[0] * scale:
        raise SingularMatrix(
            f"pivot {pivots.min():.3e} is negligible relative to matrix scale {scale:.3e}"
        )
    return lu, piv


def lu_solve(factor, rhs):
    lu, piv = factor
    rhs = np.asarray(rhs, dtype=float)
    if lu.shape[0] == 0:
        return rhs.copy()
    return scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)


def solve_linear(system_matrix, rhs):
    """Solve ``system_matrix @ v = rhs`` for a square nonsingular matrix.

    Parameters
    ----------
    system_matrix : (N, N) array_like
    rhs : (N,) or (N, K) array_like

    Returns
    -------
    v : ndarray with the shape of ``rhs``

    Raises
    ------
    SingularMatrix
        If partial pivoting meets a negligible pivot.
    """
    rhs = np.asarray(rhs, dtype=float)
    if not np.all(np.isfinite(rhs)):
        raise ValueError("rhs has non-finite entries")
    return lu_solve(lu_factor(system_matrix), rhs)


def spectral_norm(M):
    """Largest singular value of ``M`` (the induced l2 norm)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0.0
    return float(np.linalg.svd(M, compute_uv=False)[0])


def min_singular_value(M):
    """Smallest singular value of ``M``.

    For a wide or tall matrix this is the smallest of the ``min(rows, cols)``
    singular values.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0.0
    return float(np.linalg.svd(M, compute_uv=False)[-1])


def riccati_step(A, B, Q, Rc, P_next):
    """One backward Riccati step.

    Returns ``(P, K)`` with ``K = (Rc + B^T P_next B)^{-1} B^T P_next A`` and
    ``P = Q + A^T P_next (A - B K)``; the optimal action is ``u = -K x``.
    """
    inner = Rc + B.T @ P_next @ B
    try:
        factor = lu_factor(inner)
    except SingularMatrix as exc:
        raise SingularInnerBlock(str(exc)) from exc
    K = lu_solve(factor, B.T @ P_next @ A)
    P = Q + A.T @ P_next @ (A - B @ K)
    return 0.5 * (P + P.T), K


def dare_residual(A, B, Q, Rc, P):
    """Frobenius norm of ``riccati_step(P) - P``."""
    P_new, _ = riccati_step(A, B, Q, Rc, P)
    return float(np.linalg.norm(P_new - P))


def solve_dare(A, B, Q, Rc, tol=1e-10, max_iter=100_000, damping=1.0):
    """Solve the discrete algebraic Riccati equation by fixed-point iteration.

    Iterates ``P <- (1 - damping) P + damping * F(P)`` from ``P = Q`` where
    ``F`` is the Riccati map
    ``F(P) = Q + A^T P A - A^T P B (Rc + B^T P B)^{-1} B^T P A``.

    Once the residual ``||F(P) - P||_F`` drops below ``tol`` a few extra
    iterations polish the fixed point while the residual keeps shrinking.

    Raises
    ------
    NoConvergence
        If the residual is still above ``tol`` after ``max_iter`` iterations,
        which typically means ``(A, B)`` is not stabilizable.
    """
    A, B, Q, Rc = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, Q, Rc))
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must lie in (0, 1]")
    P = 0.5 * (Q + Q.T)
    residual = np.inf
    converged = False
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(max_iter):
            P_new, _ = riccati_step(A, B, Q, Rc, P)
            residual = float(np.linalg.norm(P_new - P))
            P = (1.0 - damping) * P + damping * P_new
            if not np.all(np.isfinite(P)):
                break
            if residual <= tol:
                converged = True
                break
    if not converged and np.all(np.isfinite(P)):
        raise NoConvergence(f"DARE residual {residual:.3e} after {max_iter} iterations")
    if not np.all(np.isfinite(P)):
        raise NoConvergence("DARE iteration diverged")
    for _ in range(50):
        P_new, _ = riccati_step(A, B, Q, Rc, P)
        new_residual = float(np.linalg.norm(P_new - P))
        if new_residual >= residual:
            break
        P, residual = P_new, new_residual
    return P
