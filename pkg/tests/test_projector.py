import numpy as np
import pytest

from subspace_mtl.linalg import ShapeError, make_rng
from subspace_mtl.projector import KroneckerProjector, SharedBasis, factor_dims


def _dense_oracle(P: KroneckerProjector) -> np.ndarray:
    """Dense D x d matrix assembled column by column from the Kronecker definition."""
    D1, D2 = factor_dims(P.D)
    d1, d2 = factor_dims(P.d)
    M = np.zeros((P.D, P.d))
    for col in range(P.d):
        a, b = divmod(col, d2)
        for row in range(P.D):
            i, j = divmod(row, D2)
            M[row, col] = P.Q1[i, a] * P.Q2[j, b]
    return M / np.sqrt(P.D)


def test_factor_dims():
    assert factor_dims(1) == (1, 1)
    assert factor_dims(10) == (4, 3)
    assert factor_dims(16) == (4, 4)
    for n in range(1, 300):
        a, b = factor_dims(n)
        assert a * b >= n and a * (b - 1) < n
    with pytest.raises(ValueError):
        factor_dims(0)


def test_apply_and_adjoint_match_dense_oracle_exhaustive():
    rng = make_rng(0)
    worst = 0.0
    for D in range(1, 65):
        for d in range(1, 65):
            P = KroneckerProjector(D, d, seed=D * 100 + d)
            M = np.kron(P.Q1, P.Q2)[:D, :d] / np.sqrt(D)
            w = rng.standard_normal(d)
            g = rng.standard_normal(D)
            worst = max(worst, np.max(np.abs(P.apply(w) - M @ w)), np.max(np.abs(P.adjoint_apply(g) - M.T @ g)))
    assert worst <= 1e-10


@pytest.mark.parametrize("D,d", [(7, 5), (30, 64), (64, 64), (13, 1)])
def test_dense_matches_definition(D, d):
    P = KroneckerProjector(D, d, seed=3)
    np.testing.assert_allclose(P.dense(), _dense_oracle(P), atol=1e-14)


def test_adjoint_identity():
    P = KroneckerProjector(1000, 37, seed=9)
    rng = make_rng(1)
    w, g = rng.standard_normal(37), rng.standard_normal(1000)
    assert abs(g @ P.apply(w) - w @ P.adjoint_apply(g)) < 1e-10


def test_batched_apply_matches_rows():
    P = KroneckerProjector(50, 12, seed=2)
    W = make_rng(3).standard_normal((4, 12))
    np.testing.assert_allclose(P.apply(W), np.stack([P.apply(w) for w in W]), atol=1e-13)


def test_column_norms_near_one_in_expectation():
    sq = [np.linalg.norm(KroneckerProjector(1024, 64, seed=s).dense(), axis=0) ** 2 for s in range(40)]
    assert abs(np.mean(sq) - 1.0) < 0.05


def test_reproducible_from_seed():
    a = KroneckerProjector(100, 10, 4).apply(np.ones(10))
    b = KroneckerProjector(100, 10, 4).apply(np.ones(10))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, KroneckerProjector(100, 10, 5).apply(np.ones(10)))


def test_shape_errors():
    P = KroneckerProjector(20, 4, 0)
    with pytest.raises(ShapeError):
        P.apply(np.zeros(5))
    with pytest.raises(ShapeError):
        P.adjoint_apply(np.zeros(19))


def test_shared_basis_combine_and_gradients():
    rng = make_rng(4)
    B = SharedBasis(40, 3, 5, seed=8, v=rng.standard_normal((3, 5)))
    Q = B.dense()
    alpha = rng.standard_normal(3)
    np.testing.assert_allclose(B.combine(alpha), Q @ alpha, atol=1e-12)
    g = rng.standard_normal(40)
    dv, dalpha = B.gradients(alpha, g)
    np.testing.assert_allclose(dalpha, Q.T @ g, atol=1e-12)
    P = B.projector.dense()
    expected_dv = np.stack([alpha[i] * P[:, i * 5:(i + 1) * 5].T @ g for i in range(3)])
    np.testing.assert_allclose(dv, expected_dv, atol=1e-12)


def test_shared_basis_rejects_bad_sizes():
    with pytest.raises(ValueError):
        SharedBasis(10, 0, 3, 0)
    with pytest.raises(ShapeError):
        SharedBasis(10, 2, 3, 0).combine(np.zeros(3))
