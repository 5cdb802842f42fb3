"""Block elimination for symmetric block-tridiagonal systems.

The Gauss-Newton normal equations of a multiple-shooting problem couple
only neighbouring nodes, so ``H`` has diagonal blocks ``D_i`` and
off-diagonal blocks ``U_i = H[i, i+1]`` (``H[i+1, i] = U_iᵀ``). Elimination
runs in ``O(M n³)`` for ``M`` nodes of size ``n``.
"""

from __future__ import annotations

import numpy as np


def solve_block_tridiagonal(diag, upper, rhs) -> np.ndarray:
    """Solve ``H x = rhs`` for symmetric positive definite block-tridiagonal ``H``.

    ``diag`` is ``(M, n, n)``, ``upper`` is ``(M-1, n, n)`` and ``rhs`` is
    ``(M, n)`` or ``(M, n, k)`` for several right-hand sides.
    """
    diag = np.asarray(diag, dtype=float)
    upper = np.asarray(upper, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    vector = rhs.ndim == 2
    if vector:
        rhs = rhs[..., None]
    m, n, _ = diag.shape
    if upper.shape != (max(m - 1, 0), n, n):
        raise ValueError("upper blocks must have shape (M-1, n, n)")

    schur = np.empty_like(diag)
    z = np.empty_like(rhs)
    # carry[i] = S_i^-1 [U_i, z_i]
    carry_u = np.empty_like(upper)
    carry_z = np.empty_like(rhs)
    schur[0] = diag[0]
    z[0] = rhs[0]
    for i in range(m - 1):
        sol = np.linalg.solve(schur[i], np.concatenate([upper[i], z[i]], axis=1))
        carry_u[i] = sol[:, :n]
        carry_z[i] = sol[:, n:]
        schur[i + 1] = diag[i + 1] - upper[i].T @ carry_u[i]
        z[i + 1] = rhs[i + 1] - upper[i].T @ carry_z[i]

    x = np.empty_like(rhs)
    x[m - 1] = np.linalg.solve(schur[m - 1], z[m - 1])
    for i in range(m - 2, -1, -1):
        x[i] = carry_z[i] - carry_u[i] @ x[i + 1]
    return x[..., 0] if vector else x


def assemble_dense(diag, upper) -> np.ndarray:
    """Dense matrix of a block-tridiagonal system (for tests and debugging)."""
    m, n, _ = np.shape(diag)
    h = np.zeros((m * n, m * n))
    for i in range(m):
        h[i * n:(i + 1) * n, i * n:(i + 1) * n] = diag[i]
    for i in range(m - 1):
        h[i * n:(i + 1) * n, (i + 1) * n:(i + 2) * n] = upper[i]
        h[(i + 1) * n:(i + 2) * n, i * n:(i + 1) * n] = np.asarray(upper[i]).T
    return h
