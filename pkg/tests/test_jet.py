import math

import numpy as np
import pytest

from singular_flow import jet as J
from singular_flow.errors import DomainError


def d1(f, x0):
    """First derivative of scalar jet function f at x0."""
    return J.tangent(f(J.seed(x0, 1.0)), 0).primal


def test_product_rule_and_nested_seeds():
    x = J.seed(J.seed(2.0, 1.0), 1.0)  # two independent unit perturbations of x
    y = x * x * x
    # coefficients: value, d/de0, d/de1, d2/de0de1
    np.testing.assert_allclose(y.data, [8.0, 12.0, 12.0, 12.0])


@pytest.mark.parametrize("fn,df", [
    (J.sin, math.cos), (J.cos, lambda v: -math.sin(v)), (J.exp, math.exp),
    (J.log, lambda v: 1 / v), (J.sqrt, lambda v: 0.5 / math.sqrt(v)),
    (J.tan, lambda v: 1 / math.cos(v) ** 2),
])
def test_elementary_first_derivatives(fn, df):
    x0 = 0.7
    assert float(d1(fn, x0)) == pytest.approx(df(x0), rel=1e-14)


def test_second_derivative_of_composition():
    def f(x):
        return J.exp(J.sin(x)) / (1.0 + x * x)

    def ff(v):
        return math.exp(math.sin(v)) / (1 + v * v)

    x0, h = 0.3, 1e-4
    y = f(J.seed(J.seed(x0, 1.0), 1.0))
    expected = (ff(x0 + h) - 2 * ff(x0) + ff(x0 - h)) / h**2
    assert y.data[3] == pytest.approx(expected, rel=1e-6)
    assert y.data[1] == pytest.approx(y.data[2])


def test_power_matches_repeated_multiplication():
    x = J.seed(J.seed(1.3, 0.5), -2.0)
    for c in (2, 3):
        ref = x
        for _ in range(c - 1):
            ref = ref * x
        np.testing.assert_allclose(J.power(x, c).data, ref.data, rtol=1e-15)
    np.testing.assert_allclose(J.power(x, -1).data, (1.0 / x).data, rtol=1e-14)
    np.testing.assert_allclose((J.power(x, 0.5) * J.power(x, 0.5)).data, x.data, rtol=1e-14, atol=1e-15)


def test_batch_broadcasting():
    base = J.Jet.constant(np.full((3, 4), 0.5))
    x = J.seed(base, np.ones((3, 4)))
    y = J.sin(x)
    assert y.shape == (3, 4)
    np.testing.assert_allclose(J.tangent(y, 0).primal, math.cos(0.5))


def test_strip_and_tangent_restore_layers():
    x = J.seed(J.Jet.constant([1.0, 2.0]), [3.0, 4.0])
    np.testing.assert_array_equal(J.strip(x, 0).primal, [1.0, 2.0])
    np.testing.assert_array_equal(J.tangent(x, 0).primal, [3.0, 4.0])


def test_domain_errors():
    with pytest.raises(DomainError):
        J.log(J.Jet.constant(-1.0))
    with pytest.raises(DomainError):
        J.sqrt(J.Jet.constant(-1.0))
    with pytest.raises(DomainError):
        1.0 / J.Jet.constant(0.0)
