import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from adiabat.jets import (F, Jet, coordinate_jet, index_table, inverse_sqrt_coefficients,
                          jet_poisson)


def _scalar(z, fn, order=4):
    return fn([coordinate_jet(z, i, order) for i in range(z.shape[-1])])


def test_index_table_counts():
    t = index_table(2, 3)
    assert t.size == 10
    assert t.indices[0] == (0, 0)
    assert set(t.indices) == {(a, b) for a in range(4) for b in range(4) if a + b <= 3}


def test_elementary_derivatives_exact():
    z = np.array([[0.3, -0.7], [1.1, 0.2]])
    jet = _scalar(z, lambda c: F.sin(c[0]) * F.exp(c[1]))
    q, p = z[:, 0], z[:, 1]
    expected = {
        (0, 0): np.sin(q) * np.exp(p),
        (1, 0): np.cos(q) * np.exp(p),
        (2, 1): -np.sin(q) * np.exp(p),
        (3, 1): -np.cos(q) * np.exp(p),
        (0, 4): np.sin(q) * np.exp(p),
    }
    for g, val in expected.items():
        assert_allclose(jet.derivative_value(g)[:, 0, 0], val, rtol=1e-13, atol=1e-14)


def test_tanh_and_power_derivatives():
    z = np.array([[0.4, 0.9]])
    p = z[0, 1]
    jt = _scalar(z, lambda c: F.tanh(c[1]))
    sech2 = 1 / np.cosh(p) ** 2
    assert_allclose(jt.derivative_value((0, 1))[0, 0, 0], sech2, rtol=1e-13)
    assert_allclose(jt.derivative_value((0, 2))[0, 0, 0], -2 * np.tanh(p) * sech2, rtol=1e-13)
    js = _scalar(z, lambda c: F.sqrt(1 + c[1] * c[1]))
    r = np.sqrt(1 + p * p)
    assert_allclose(js.derivative_value((0, 1))[0, 0, 0], p / r, rtol=1e-13)
    assert_allclose(js.derivative_value((0, 2))[0, 0, 0], 1 / r ** 3, rtol=1e-13)


def test_matrix_inverse_jet():
    z = np.array([[0.2, 0.5], [-0.4, 1.0]])
    A = _scalar(z, lambda c: F.matrix([[2 + F.sin(c[0]), c[1]], [c[0] * c[1], 3 + F.cos(c[1])]]))
    prod = A @ A.inv()
    eye = np.broadcast_to(np.eye(2), prod.value.shape)
    assert_allclose(prod.value, eye, atol=1e-14)
    assert np.abs(prod.coeffs[1:]).max() < 1e-13


def test_inverse_sqrt_series():
    c = inverse_sqrt_coefficients(8)
    x = 0.1
    assert_allclose(sum(ck * x ** k for k, ck in enumerate(c)), (1 - x) ** -0.5, rtol=1e-8)


def test_derivative_lowers_order():
    z = np.array([[0.1, 0.2]])
    j = _scalar(z, lambda c: c[0] * c[0] * c[1], order=3)
    dq = j.derivative((1, 0))
    assert dq.order == 2
    assert_allclose(dq.derivative_value((1, 1))[0, 0, 0], 2.0)
    with pytest.raises(ValueError):
        j.derivative((2, 2))


def test_poisson_bracket_canonical():
    z = np.array([[0.7, -0.3]])
    q = coordinate_jet(z, 0, 2)
    p = coordinate_jet(z, 1, 2)
    # {A, B} = dA/dp dB/dq - dA/dq dB/dp, hence {p, q} = 1
    assert_allclose(jet_poisson(p, q, 1).value[0, 0, 0], 1.0)
    assert_allclose(jet_poisson(q, p, 1).value[0, 0, 0], -1.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=6, max_size=6), st.floats(-1, 1), st.floats(-1, 1))
def test_leibniz_rule_matches_pointwise_product(coef, q0, p0):
    z = np.array([[q0, p0]])
    a, b, c, d, e, f = coef
    A = _scalar(z, lambda x: a + b * x[0] + c * x[0] * x[1], order=3)
    B = _scalar(z, lambda x: d + e * F.sin(x[1]) + f * x[0] * x[0], order=3)
    AB = _scalar(z, lambda x: (a + b * x[0] + c * x[0] * x[1])
                 * (d + e * F.sin(x[1]) + f * x[0] * x[0]), order=3)
    assert_allclose((A @ B).coeffs, AB.coeffs, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
def test_jet_constant_has_no_derivatives(q0, p0):
    j = Jet.constant(np.eye(2), 2, 3, np.array([q0, p0]))
    assert np.all(j.coeffs[1:] == 0)
    assert_allclose(j.value, np.eye(2))
