import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose

from adiabat.errors import CapabilityError, DimensionError
from adiabat.jets import F
from adiabat.symbols import (ConstantSymbol, FormalSymbol, FunctionSymbol, PhasePoint,
                             SmoothSymbol, as_points, derivative_symbol, fd_stencil,
                             fd_step_scale, moyal_commutator, moyal_mul, moyal_term,
                             poisson_bracket, polynomial_symbol)

finite = st.floats(-1, 1, allow_nan=False, allow_infinity=False)
coef = arrays(np.float64, (2, 2), elements=finite)
EXPONENTS = [(1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (2, 1)]


def _poly(cs, imag=None):
    coeffs = {g: c for g, c in zip(EXPONENTS, cs)}
    if imag is not None:
        coeffs[(0, 0)] = 1j * imag
    return polynomial_symbol(coeffs, 1)


def _exp_symbol():
    return FunctionSymbol(lambda z: np.exp(z[..., 0] + 2 * z[..., 1])[..., None, None], 1, (1, 1))


def test_phase_point_roundtrip():
    pt = PhasePoint(np.array([1.0, 2.0]), np.array([3.0, 4.0]))
    assert pt.d == 2
    assert_allclose(PhasePoint.from_array(pt.as_array()).p, [3.0, 4.0])
    assert as_points(pt).shape == (4,)


def test_finite_difference_jet_accuracy():
    z = np.array([[0.2, -0.1], [0.5, 0.3]])
    jet = _exp_symbol().jet(z, 3)
    base = np.exp(z[:, 0] + 2 * z[:, 1])
    for g in [(1, 0), (0, 1), (1, 1), (0, 2), (2, 1)]:
        expected = base * 2.0 ** g[1]
        assert_allclose(jet.derivative_value(g)[:, 0, 0], expected, rtol=1e-6)


def test_fd_step_halving_is_stable():
    z = np.array([[0.4, 0.1]])
    S = _exp_symbol()
    a = S.jet(z, 2).coeffs
    with fd_step_scale(0.5):
        b = S.jet(z, 2).coeffs
    assert np.abs(a - b).max() < 1e-6


def test_fd_stencil_weights_sum():
    # weights of every nonzero derivative annihilate constants
    for gamma, offs, wts in fd_stencil(2, 3):
        assert abs(wts.sum()) < 1e-6 * np.abs(wts).max()
        assert offs.shape == (len(wts), 2)


def test_smooth_symbol_matches_finite_difference():
    def fn(c):
        q, p = c
        return F.matrix([[F.cos(q) * F.tanh(p), F.expi(q)], [F.expi(-1 * q), F.sin(p) * q]])

    S = SmoothSymbol(fn, 1, (2, 2))
    D = FunctionSymbol(S.evaluator, 1, (2, 2))
    z = np.array([[0.3, 0.2], [-1.0, 0.8]])
    assert_allclose(S.jet(z, 2).coeffs, D.jet(z, 2).coeffs, atol=1e-7)


def test_jet_order_capability():
    S = _exp_symbol()
    with pytest.raises(CapabilityError):
        S.jet(np.zeros(2), 9)


def test_dimension_checks():
    A = ConstantSymbol(np.eye(2), 1)
    B = ConstantSymbol(np.eye(3), 1)
    with pytest.raises(DimensionError):
        moyal_mul(A, B, 1)
    with pytest.raises(DimensionError):
        FormalSymbol([A, B])
    with pytest.raises(DimensionError):
        A(np.zeros(3))


def test_formal_symbol_evaluate_and_truncate():
    A = ConstantSymbol(np.eye(2), 1)
    B = ConstantSymbol(2 * np.eye(2), 1)
    f = FormalSymbol([A, B])
    assert_allclose(f.evaluate(np.zeros(2), 0.1), 1.2 * np.eye(2))
    assert f.truncate(0).N == 0
    assert f.extend(A).N == 2
    assert f.term(5).is_zero
    assert_allclose((f - f).evaluate(np.zeros(2), 0.3), 0)


def test_derivative_symbol():
    P = polynomial_symbol({(2, 1): [[1.0]]}, 1)
    dP = derivative_symbol(P, (1, 0))
    assert_allclose(dP(np.array([3.0, 2.0]))[0, 0], 12.0)


def test_poisson_bracket_not_antisymmetric_for_matrices():
    X = polynomial_symbol({(1, 0): [[0, 1], [1, 0]]}, 1)
    Y = polynomial_symbol({(0, 1): [[1, 0], [0, -1]]}, 1)
    z = np.zeros(2)
    s1, s3 = np.array([[0, 1], [1, 0]]), np.diag([1, -1])
    assert_allclose(poisson_bracket(X, Y, z), -s1 @ s3, atol=1e-14)
    assert_allclose(poisson_bracket(Y, X, z), s3 @ s1, atol=1e-14)


def test_moyal_exact_for_quadratic_polynomials():
    # the series terminates for linear symbols: q # p = qp + i eps / 2
    q = polynomial_symbol({(1, 0): [[1.0]]}, 1)
    p = polynomial_symbol({(0, 1): [[1.0]]}, 1)
    z = np.array([[0.7, -0.2]])
    prod = moyal_mul(q, p, 3)
    assert_allclose(prod.evaluate(z, 0.1)[0, 0, 0], 0.7 * -0.2 + 0.05j)
    assert_allclose(moyal_term(q, p, 2, z), 0)


@settings(max_examples=25, deadline=None)
@given(st.lists(coef, min_size=6, max_size=6), st.lists(coef, min_size=6, max_size=6),
       st.floats(-1, 1), st.floats(-1, 1))
def test_moyal_order0_is_pointwise(ca, cb, q0, p0):
    A, B = _poly(ca), _poly(cb)
    z = np.array([q0, p0])
    assert_allclose(moyal_term(A, B, 0, z), A(z) @ B(z), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.lists(coef, min_size=6, max_size=6), coef, st.lists(coef, min_size=6, max_size=6),
       st.floats(-1, 1), st.floats(-1, 1))
def test_moyal_adjoint(ca, ia, cb, q0, p0):
    # (A # B)* = B* # A* order by order
    A, B = _poly(ca, ia), _poly(cb)
    z = np.array([q0, p0])
    for k in range(3):
        lhs = moyal_term(A, B, k, z).conj().T
        rhs = moyal_term(B.H, A.H, k, z)
        assert_allclose(lhs, rhs, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4), st.floats(-1, 1), st.floats(-1, 1))
def test_scalar_commutator_is_poisson(cs, q0, p0):
    f = polynomial_symbol({(2, 0): [[cs[0]]], (1, 1): [[cs[1]]], (0, 3): [[cs[2]]]}, 1)
    g = polynomial_symbol({(0, 2): [[cs[3]]], (1, 0): [[1.0]]}, 1)
    z = np.array([q0, p0])
    comm = moyal_commutator(f, g, 1)
    assert_allclose(comm.term(0)(z), 0, atol=1e-14)
    assert_allclose(comm.term(1)(z), -1j * poisson_bracket(f, g, z), atol=1e-12)
