"""Dense symmetric-matrix kernels and divergence helpers.

Vectors and matrices are plain float64 numpy arrays throughout; matrices
passed to the eigensolver must be exactly symmetric.  The eigensolver is a
cyclic Jacobi iteration, which is simple and robust at the problem sizes
used here (d <= 512).
"""

import numpy as np

from ._backend import kernel

_JACOBI_SWEEPS = 60
_JACOBI_TOL = 1e-13


def require_symmetric(M):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if not np.array_equal(M, M.T):
        raise ValueError("matrix is not symmetric")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    return M


def bregman_divergence(problem, x, y):
    """D(x, y) = f(x) - f(y) - <grad f(y), x - y>; nonnegative for convex f."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.shape != (problem.dim,):
        raise ValueError(
            f"dimension mismatch: x{x.shape}, y{y.shape}, problem dim {problem.dim}"
        )
    return problem.value(x) - problem.value(y) - float(np.dot(problem.gradient(y), x - y))


@kernel
def _jacobi_eigh(A, V):
    """In-place cyclic Jacobi; diagonalizes A, accumulates rotations in V."""
    d = A.shape[0]
    norm = 0.0
    for i in range(d):
        for j in range(d):
            norm += A[i, j] * A[i, j]
    norm = np.sqrt(norm)
    if norm == 0.0:
        return 0
    for _ in range(_JACOBI_SWEEPS):
        off = 0.0
        for i in range(d - 1):
            for j in range(i + 1, d):
                off += A[i, j] * A[i, j]
        if np.sqrt(2.0 * off) <= _JACOBI_TOL * norm:
            return 0
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + np.sqrt(1.0 + theta * theta))
                else:
                    t = -1.0 / (-theta + np.sqrt(1.0 + theta * theta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                app = A[p, p]
                aqq = A[q, q]
                A[p, p] = app - t * apq
                A[q, q] = aqq + t * apq
                A[p, q] = 0.0
                A[q, p] = 0.0
                for k in range(d):
                    if k != p and k != q:
                        akp = A[k, p]
                        akq = A[k, q]
                        A[k, p] = c * akp - s * akq
                        A[p, k] = A[k, p]
                        A[k, q] = s * akp + c * akq
                        A[q, k] = A[k, q]
                for k in range(d):
                    vkp = V[k, p]
                    vkq = V[k, q]
                    V[k, p] = c * vkp - s * vkq
                    V[k, q] = s * vkp + c * vkq
    return 1


def _eigh(M):
    """Eigenvalues (descending) and matching eigenvectors of a symmetric M."""
    M = require_symmetric(M)
    if M.shape[0] > 512:
        raise ValueError("the Jacobi eigensolver is limited to d <= 512")
    A = np.ascontiguousarray(M, dtype=np.float64).copy()
    V = np.eye(A.shape[0])
    if _jacobi_eigh(A, V) != 0:
        raise RuntimeError("Jacobi eigensolver did not converge")
    w = np.diag(A).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], V[:, order]


def symmetric_eigenvalues(M):
    """All eigenvalues of a symmetric matrix, in descending order."""
    w, _ = _eigh(M)
    return w


def matrix_sqrt_psd(M, neg_tol=1e-10):
    """Symmetric PSD square root: returns L with L @ L = M.

    Eigenvalues in [-neg_tol, 0) are clamped to zero (floating-point PSD
    slack); anything more negative is rejected.
    """
    w, V = _eigh(M)
    if w.min() < -neg_tol:
        raise ValueError(f"matrix is not PSD: min eigenvalue {w.min():.3e}")
    sq = np.sqrt(np.maximum(w, 0.0))
    L = (V * sq) @ V.T
    return 0.5 * (L + L.T)
