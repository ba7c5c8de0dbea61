import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from singular_flow import jet as J
from singular_flow.errors import NonFinite
from singular_flow.linalg import Consistent, Inconsistent, eliminate, min_norm, rank_nullspaces, solve_consistent


@st.composite
def planted(draw):
    m = draw(st.integers(1, 6))
    n = draw(st.integers(1, 6))
    r = draw(st.integers(0, min(m, n)))
    seed = draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, r)) @ rng.standard_normal((r, n))
    return A, r, rng


@settings(max_examples=200, deadline=None)
@given(planted())
def test_planted_rank_and_nullspaces(case):
    A, r, _ = case
    res = rank_nullspaces(A)
    assert res.rank == r
    m, n = A.shape
    assert len(res.right_basis) == n - r and len(res.left_basis) == m - r
    scale = max(1.0, np.abs(A).max())
    for v in res.right_basis:
        assert np.abs(A @ v).max() <= 1e-9 * scale * max(1.0, np.abs(v).max())
    for s in res.left_basis:
        assert np.abs(s @ A).max() <= 1e-9 * scale * max(1.0, np.abs(s).max())
    if res.right_basis:
        assert np.linalg.matrix_rank(np.array(res.right_basis)) == n - r
    if res.left_basis:
        assert np.linalg.matrix_rank(np.array(res.left_basis)) == m - r


@settings(max_examples=200, deadline=None)
@given(planted())
def test_consistent_solve_is_min_norm(case):
    A, r, rng = case
    b = A @ rng.standard_normal(A.shape[1])
    out = solve_consistent(A, b)
    assert isinstance(out, Consistent)
    np.testing.assert_allclose(A @ out.particular, b, atol=1e-8 * max(1.0, np.abs(b).max()))
    np.testing.assert_allclose(out.particular, np.linalg.pinv(A) @ b, atol=1e-7 * max(1.0, np.abs(b).max()))


@settings(max_examples=100, deadline=None)
@given(planted())
def test_inconsistent_rhs_detected(case):
    A, r, rng = case
    m = A.shape[0]
    if r == m:
        return
    s = rank_nullspaces(A).left_basis[0]
    b = A @ rng.standard_normal(A.shape[1]) + s / np.linalg.norm(s)
    assert isinstance(solve_consistent(A, b), Inconsistent)


def test_examples():
    out = solve_consistent([[1, 1], [2, 2]], [1, 3])
    assert not out.consistent and out.violated_row_indices
    out = solve_consistent([[1, 1], [2, 2]], [1, 2])
    np.testing.assert_allclose(out.particular, [0.5, 0.5])
    assert len(out.nullspace) == 1
    assert rank_nullspaces(np.zeros((2, 3))).rank == 0
    with pytest.raises(NonFinite):
        rank_nullspaces([[np.nan]])


def test_pivoting_is_deterministic():
    A = np.array([[1.0, 2.0], [2.0, 4.0], [0.0, 1.0]])
    first = rank_nullspaces(A)
    again = rank_nullspaces(A.copy())
    assert first.pivot_pattern == again.pivot_pattern
    np.testing.assert_array_equal(first.left_basis[0], again.left_basis[0])


def test_jet_kernels_differentiate_along_a_curve():
    # A(e) = U(e) V(e)^T keeps rank 2; kernel frames must annihilate A to all orders
    rng = np.random.default_rng(3)
    U0, U1 = rng.standard_normal((2, 4, 2))
    V0, V1 = rng.standard_normal((2, 3, 2))
    U = J.seed(J.Jet.constant(U0), U1)
    V = J.seed(J.Jet.constant(V0), V1)
    prod = np.zeros((4, 3, 2))
    for a in range(2):
        prod += J.mul_data(U.data[:, None, a], V.data[None, :, a], 1)
    A = J.Jet(prod, 1)
    e = eliminate(A)
    assert e.rank == 2
    s = e.left_basis()
    G = e.right_basis()
    sA = J.mul_data(s.data[:, :, None], A.data[None], 1).sum(axis=1)
    AG = J.mul_data(A.data[None], G.data[:, None], 1).sum(axis=2)
    assert np.abs(sA).max() < 1e-12
    assert np.abs(AG).max() < 1e-12
    b = J.Jet(J.mul_data(A.data, np.broadcast_to(J.seed(J.Jet.constant([1.0, 2.0, 3.0]), [0.5, 0, 1]).data,
                                                  (4, 3, 2)), 1).sum(axis=1), 1)
    x, _, residual = min_norm(e, b)
    Ax = J.mul_data(A.data, x.data[None], 1).sum(axis=1)
    np.testing.assert_allclose(Ax, b.data, atol=1e-12)
    assert np.abs(residual.data).max() < 1e-12
