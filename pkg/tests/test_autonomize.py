import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from singular_flow import expr as E
from singular_flow.autonomize import autonomize, homogenize, jet_field_autonomize, second_order_reduce, vector_extension
from singular_flow.errors import AlreadyAutonomous, DimensionMismatch
from singular_flow.system import load_system

XDOT_T = {"kind": "linearly_singular", "states": ["x"], "A": [["1"]], "c": ["-t"]}


def _num_matrix(sys, point):
    A, b = sys.matrices_float(point)
    return A, b


def test_vector_hull_rows_for_xdot_equals_t():
    sys = homogenize(load_system(XDOT_T))
    assert sys.names == ("t", "x") and sys.time_state == "t"
    A, b = sys.matrices_float([2.0, 5.0])
    np.testing.assert_allclose(A, [[-2.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(b, [0.0, 1.0])


def test_jet_field_with_zero_gamma_on_pendulum(specs_dir):
    sys = jet_field_autonomize(load_system(specs_dir / "pendulum.json"))
    p = np.array([0.3, 0.8, -0.5, 0.2, 0.1, 1.7])
    A, b = sys.matrices_float(p)
    expected = np.zeros((6, 6))
    expected[0, 1] = expected[1, 2] = expected[2, 3] = expected[3, 4] = 1.0
    expected[5, 0] = 1.0
    np.testing.assert_array_equal(A, expected)
    t, x, y, vx, vy, tau = p
    R = 1 + 0.1 * np.sin(t)
    np.testing.assert_allclose(b, [vx, vy, -tau * x, -tau * y - 9.8, x * x + y * y - R * R, 1.0], rtol=1e-15)


def test_gamma_cancels_on_solutions():
    # for any Gamma, (1, v) solves the autonomized rows iff v solves the original system
    sys = load_system({"kind": "linearly_singular", "states": ["x", "y"],
                       "A": [["1", "t"], ["x", "1"]], "c": ["-sin(t)", "y - x"]})
    aut = jet_field_autonomize(sys, ["x*t + 1", "cos(y)"])
    p = [0.4, 1.1, -0.3]
    A0, b0 = np.array([[1, 0.4], [1.1, 1]]), np.array([np.sin(0.4), -(-0.3 - 1.1)])
    v = np.linalg.solve(A0, b0)
    A, b = aut.matrices_float(p)
    np.testing.assert_allclose(A @ np.concatenate([[1.0], v]), b, atol=1e-14)


def test_second_order_reduction_rows():
    sys = load_system({"kind": "second_order", "states": ["q"], "A": [["1"]], "c": ["q + t"]})
    for mode in ("vector_hull", "jet_field"):
        aut = second_order_reduce(sys, mode)
        assert aut.names == ("t", "q", "v_q")
        A, b = aut.matrices_float([1.0, 2.0, 3.0])
        X = np.array([1.0, 3.0, -3.0])  # tdot, qdot = v, vdot = -(q + t)
        np.testing.assert_allclose(A @ X, b, atol=1e-14)


def test_already_autonomous_and_bad_gamma(specs_dir):
    aut = load_system(specs_dir / "inconsistent.json")
    with pytest.raises(AlreadyAutonomous):
        homogenize(aut)
    with pytest.raises(AlreadyAutonomous):
        jet_field_autonomize(aut)
    assert autonomize(aut) is aut
    with pytest.raises(DimensionMismatch):
        jet_field_autonomize(load_system(XDOT_T), ["1", "2"])


def test_vector_extension_pattern():
    c = np.array([1.5, -2.0])
    T = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    M = vector_extension(c, T)
    assert M[0, 0] == 1.0 and np.all(M[0, 1:] == 0.0)
    np.testing.assert_array_equal(M[1:, 0], c)
    np.testing.assert_array_equal(M[1:, 1:], T)
    with pytest.raises(DimensionMismatch):
        vector_extension([1.0], T)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_homogenize_and_jet_field_share_solutions(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    M = rng.standard_normal((n, n)) + 3 * np.eye(n)
    K = rng.standard_normal((n, n))
    d = rng.standard_normal(n)
    M, K, d = M.tolist(), K.tolist(), d.tolist()
    names = [f"x{i}" for i in range(n)]
    A = [[f"{M[i][j]!r} + {K[i][j]!r}*sin(t)" for j in range(n)] for i in range(n)]
    c = [f"{d[i]!r}*cos(t) + " + " + ".join(f"{K[j][i]!r}*{names[j]}" for j in range(n)) for i in range(n)]
    sys = load_system({"kind": "linearly_singular", "states": names, "A": A, "c": c})
    gamma = [E.to_text(E.parse_expr(f"{g!r}*t", ["t"] + names)) for g in rng.standard_normal(n).tolist()]
    p = rng.standard_normal(n + 1) * 0.5
    X = []
    for aut in (homogenize(sys), jet_field_autonomize(sys, gamma)):
        Aa, ba = aut.matrices_float(p)
        X.append(np.linalg.solve(Aa, ba))
    np.testing.assert_allclose(X[0], X[1], atol=1e-10)
    assert X[0][0] == pytest.approx(1.0, abs=1e-12)
