import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from gpmhe.blocktri import assemble_dense, solve_block_tridiagonal


def random_system(rng, m, n):
    # J^T J structure of a chain guarantees positive definiteness
    a = rng.standard_normal((m, 2 * n, n))
    diag = np.einsum("mki,mkj->mij", a, a) + n * np.eye(n)
    upper = 0.3 * rng.standard_normal((m - 1, n, n))
    h = assemble_dense(diag, upper)
    h += (abs(np.linalg.eigvalsh(h).min()) + 1.0) * np.eye(m * n)
    diag = np.array([h[i * n:(i + 1) * n, i * n:(i + 1) * n] for i in range(m)])
    return diag, upper, h


@given(st.integers(1, 12), st.integers(1, 6), st.integers(0, 2 ** 32 - 1))
def test_matches_dense_solve(m, n, seed):
    rng = np.random.default_rng(seed)
    diag, upper, h = random_system(rng, m, n)
    rhs = rng.standard_normal((m, n))
    x = solve_block_tridiagonal(diag, upper, rhs)
    np.testing.assert_allclose(x.ravel(), np.linalg.solve(h, rhs.ravel()), atol=1e-9)


def test_multiple_right_hand_sides():
    rng = np.random.default_rng(1)
    diag, upper, h = random_system(rng, 6, 3)
    rhs = rng.standard_normal((6, 3, 4))
    x = solve_block_tridiagonal(diag, upper, rhs)
    ref = np.linalg.solve(h, rhs.reshape(18, 4))
    np.testing.assert_allclose(x.reshape(18, 4), ref, atol=1e-10)


def test_bad_upper_shape():
    import pytest
    with pytest.raises(ValueError):
        solve_block_tridiagonal(np.tile(np.eye(2), (3, 1, 1)), np.zeros((3, 2, 2)),
                                np.zeros((3, 2)))
