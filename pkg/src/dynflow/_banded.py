"""Direct solvers for the tridiagonal / cyclic-tridiagonal systems of 1-D graphs.

All linear systems produced by the time steppers have the form
(M - c*L) x = b with M diagonal positive and L the symmetric edge Laplacian
of a path or cycle, so they are symmetric tridiagonal (path) or tridiagonal
plus two corner entries (cycle).  Both are solved exactly by banded
elimination; the cyclic case uses a rank-one Sherman-Morrison correction.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded


def solve_tridiag(diag: np.ndarray, lower: np.ndarray, upper: np.ndarray,
                  b: np.ndarray) -> np.ndarray:
    """Solve T x = b for tridiagonal T given as three diagonals.

    ``lower`` and ``upper`` have length n-1.  ``b`` may be (n,) or (n, k).
    """
    n = diag.shape[0]
    if n == 1:
        return b / diag[0]
    ab = np.zeros((3, n))
    ab[0, 1:] = upper
    ab[1, :] = diag
    ab[2, :-1] = lower
    return solve_banded((1, 1), ab, b)


def solve_cyclic_tridiag(diag: np.ndarray, off: np.ndarray, corner: float,
                         b: np.ndarray) -> np.ndarray:
    """Solve A x = b where A is symmetric tridiagonal with wrap-around.

    ``off`` (length n-1) holds the sub/super diagonal, ``corner`` the
    A[0, n-1] = A[n-1, 0] entry.  Sherman-Morrison on a rank-one update of
    the non-cyclic part; b may be (n,) or (n, k).
    """
    n = diag.shape[0]
    if n < 3:
        A = np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)
        A[0, -1] += corner
        A[-1, 0] += corner
        return np.linalg.solve(A, b)
    if corner == 0.0:
        return solve_tridiag(diag, off, off, b)

    # A = T + gamma * u u^T with u = e_0 + (corner/gamma) e_{n-1}
    gamma = -diag[0]
    if gamma == 0.0:
        gamma = -1.0
    dmod = diag.copy()
    dmod[0] -= gamma
    dmod[-1] -= corner * corner / gamma

    u = np.zeros(n)
    u[0] = gamma
    u[-1] = corner

    one_d = b.ndim == 1
    rhs = b[:, None] if one_d else b
    y = solve_tridiag(dmod, off, off, np.column_stack([rhs, u]))
    z = y[:, -1]
    y = y[:, :-1]
    v = np.zeros(n)
    v[0] = 1.0
    v[-1] = corner / gamma
    x = y - np.outer(z, v @ y) / (1.0 + v @ z)
    return x[:, 0] if one_d else x
