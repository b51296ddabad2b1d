import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose
from scipy.linalg import expm

from adiabat import models as M
from adiabat import semiclassics as sc
from adiabat.errors import CapabilityError
from adiabat.expansion import h1_block_symbol
from adiabat.harness import bmt_run, uniform_field_dirac
from adiabat.jets import F
from adiabat.symbols import (ConstantSymbol, FunctionSymbol, SmoothSymbol, poisson_bracket,
                             polynomial_symbol)


def _scalar(fn, d=1):
    return SmoothSymbol(lambda c: F.matrix([[fn(c)]]), d, (1, 1), hermitian=True)


OSC = polynomial_symbol({(2, 0): [[0.5]], (0, 2): [[0.5]]}, 1)
FREE = polynomial_symbol({(0, 2): [[0.5]]}, 1)
PENDULUM = _scalar(lambda c: 0.5 * c[1] * c[1] + 0.3 * F.cos(c[0]))
SPIN = SmoothSymbol(lambda c: F.matrix([[0.3 * c[1], 0.5 * F.sin(c[0])],
                                        [0.5 * F.sin(c[0]), -0.3 * c[1]]]),
                    1, (2, 2), hermitian=True)
MATRIX_OBS = SmoothSymbol(lambda c: F.matrix([[F.cos(c[0]), c[1] * F.expi(c[0])],
                                              [c[1] * F.expi(-1 * c[0]), F.sin(c[1])]]),
                          1, (2, 2), hermitian=True)


@pytest.fixture(scope="module")
def twisted():
    model = M.TwoLevelModel(M.TwoLevelParams(twist=0.7))
    a0 = _scalar(lambda c: F.cos(c[0]) * F.tanh(c[1]))
    return model.energy_symbol, h1_block_symbol(model.context()), a0


def test_oscillator_returns_after_one_period():
    z0 = np.array([[1.0, 0.0], [0.3, -0.7]])
    traj = sc.classical_flow(OSC, z0, 2 * np.pi, dt=2 * np.pi / 4000)
    assert_allclose(traj.points[-1], z0, atol=1e-8)
    assert traj.energy_drift() < 1e-10
    assert traj.points.shape == (4001, 2, 2)
    assert traj.midpoints.shape == (4000, 2, 2)


def test_free_particle_is_linear():
    z0 = np.array([0.2, 1.3])
    traj = sc.classical_flow(FREE, z0, 2.0, dt=1e-2, jacobian=True)
    assert_allclose(traj.points[:, 0], 0.2 + 1.3 * traj.times, atol=1e-12)
    assert_allclose(traj.jacobians[-1], [[1.0, 2.0], [0.0, 1.0]], atol=1e-12)


def test_band_energy_conserved_two_level(twisted):
    E, _, _ = twisted
    z0 = np.random.default_rng(5).uniform(-2, 2, (4, 2))
    assert sc.classical_flow(E, z0, 10.0, dt=1e-3).energy_drift() < 1e-8


def test_backward_flow_inverts_forward():
    z0 = np.array([0.4, 0.9])
    fwd = sc.classical_flow(PENDULUM, z0, 1.5, dt=1e-3).points[-1]
    back = sc.classical_flow(PENDULUM, fwd, -1.5, dt=1e-3).points[-1]
    assert_allclose(back, z0, atol=1e-10)


def test_flow_rejects_matrix_energy():
    with pytest.raises(CapabilityError):
        sc.classical_flow(SPIN, np.zeros(2), 1.0)


def test_zero_coupling_gives_identity_transport():
    traj = sc.classical_flow(PENDULUM, np.array([0.1, 0.5]), 1.0, dt=1e-2)
    frame = sc.spin_transport(ConstantSymbol(np.zeros((2, 2)), 1), traj)
    assert_allclose(frame.D, np.broadcast_to(np.eye(2), frame.D.shape), atol=0)


def test_constant_coupling_matches_expm():
    h = np.array([[0.4, 0.2 - 0.5j], [0.2 + 0.5j, -0.1]])
    traj = sc.classical_flow(PENDULUM, np.array([0.1, 0.5]), 2.0, dt=1e-3)
    frame = sc.spin_transport(ConstantSymbol(h, 1), traj)
    assert_allclose(frame.D[-1], expm(-2j * h), atol=1e-9)


def test_transport_group_property():
    # D(z, t + s) = D(Phi^s z, t) D(z, s)
    z = np.array([0.3, -0.4])
    s, t, dt = 0.7, 0.8, 1e-3
    whole = sc.spin_transport(SPIN, sc.classical_flow(PENDULUM, z, s + t, dt))
    first = sc.spin_transport(SPIN, sc.classical_flow(PENDULUM, z, s, dt))
    zs = first.trajectory.points[-1]
    second = sc.spin_transport(SPIN, sc.classical_flow(PENDULUM, zs, t, dt))
    assert_allclose(whole.D[-1], second.D[-1] @ first.D[-1], atol=1e-9)
    assert whole.unitarity_defect() < 1e-12


def test_evolved_observable_trivial_cases():
    z = np.array([[0.3, 0.2], [-1.0, 0.7]])
    one = ConstantSymbol(np.eye(2), 1)
    assert_allclose(sc.egorov_evolve(one, PENDULUM, SPIN, z, 1.0), np.broadcast_to(np.eye(2),
                                                                                 (2, 2, 2)),
                    atol=1e-12)
    f = _scalar(lambda c: F.sin(c[0]) + c[1])
    coupling = ConstantSymbol(np.array([[0.7]]), 1)
    got = sc.egorov_evolve(f, PENDULUM, coupling, z, 1.0)
    end = sc.classical_flow(PENDULUM, z, 1.0).points[-1]
    assert_allclose(got[:, 0, 0], np.sin(end[:, 0]) + end[:, 1], atol=1e-12)


def _time_derivative(family, z, t, dl):
    return (family(t + dl)(z) - family(t - dl)(z)) / (2 * dl)


def test_leading_observable_solves_transport_equation(twisted):
    # d/dt a0(t) = {E_r, a0(t)} in the scalar band
    E, h1, a0 = twisted
    z = np.random.default_rng(0).uniform([-3, -1], [3, 1], (6, 2))
    t = 1.0
    dadt = _time_derivative(lambda s: sc.EvolvedObservable(a0, E, h1, s), z, t, 1e-2)
    res = dadt - poisson_bracket(E, sc.EvolvedObservable(a0, E, h1, t), z)
    assert np.abs(res).max() < 1e-5


def test_matrix_observable_solves_transport_equation():
    # d/dt a0(t) = {E_r, a0(t)} + i[h1, a0(t)]; the residual is the central
    # difference error in t and falls by four per halving
    z = np.random.default_rng(1).uniform(-1, 1, (3, 2))
    t = 1.0
    E = PENDULUM * ConstantSymbol(np.eye(2), 1)
    At = sc.EvolvedObservable(MATRIX_OBS, PENDULUM, SPIN, t)
    av, hv = At(z), SPIN(z)
    rhs = poisson_bracket(E, At, z) + 1j * (hv @ av - av @ hv)
    family = lambda s: sc.EvolvedObservable(MATRIX_OBS, PENDULUM, SPIN, s)
    errs = [np.abs(_time_derivative(family, z, t, dl) - rhs).max() for dl in (1e-2, 5e-3)]
    assert errs[1] < 5e-5
    assert 3.0 < errs[0] / errs[1] < 5.0


def test_first_correction_solves_inhomogeneous_equation(twisted):
    # d/dt a1 = {E_r, a1} + (1/2)({h1, a0(t)} - {a0(t), h1}) for scalar a0
    E, h1, a0 = twisted
    z = np.random.default_rng(0).uniform([-3, -1], [3, 1], (6, 2))
    t = 1.0

    def a1(s):
        return FunctionSymbol(lambda w: sc.egorov_correct(a0, E, h1, w, s), 1, (1, 1))

    At = sc.EvolvedObservable(a0, E, h1, t)
    inhom = 0.5 * (poisson_bracket(h1, At, z) - poisson_bracket(At, h1, z))
    res = _time_derivative(a1, z, t, 1e-2) - poisson_bracket(E, a1(t), z) - inhom
    assert np.abs(res).max() < 1e-4


def test_matrix_path_agrees_with_scalar_path(twisted):
    E, h1, a0 = twisted
    z = np.array([[0.4, 0.3], [-1.2, -0.5]])
    fast = sc.egorov_correct(a0, E, h1, z, 0.6)
    slow = sc.egorov_correct(a0, E, h1, z, 0.6, h2=ConstantSymbol(np.zeros((1, 1)), 1),
                             scalar=False, quad_nodes=11)
    assert_allclose(slow, fast, atol=1e-7)


def test_correction_vanishes_without_coupling():
    zero = ConstantSymbol(np.zeros((1, 1)), 1)
    f = _scalar(lambda c: F.cos(c[0]) * c[1])
    got = sc.egorov_correct(f, PENDULUM, zero, np.array([[0.2, 0.4]]), 1.0)
    assert_allclose(got, 0, atol=1e-14)


def test_egorov_capabilities(twisted):
    E, h1, a0 = twisted
    with pytest.raises(CapabilityError):
        sc.egorov_correct(a0, E, h1, np.zeros(2), 1.0, n=2)
    with pytest.raises(CapabilityError):
        sc.egorov_correct(MATRIX_OBS, PENDULUM, SPIN, np.zeros(2), 1.0)


def test_position_correction_in_field_gradient():
    # A = (b/2) q3 (-q2, q1, 0) gives B = b q3 e3 plus a transverse part that
    # vanishes on the axis.  A slow electron there feels a force along q3
    # proportional to the spin, so the first correction of q3 grows like
    # (hbar e b / (4 m^2 c)) sigma_3 t^2.
    b = 0.1

    def A(qs):
        q1, q2, q3 = qs
        return [-0.5 * b * q3 * q2, 0.5 * b * q3 * q1, 0 * q1]

    model = M.DiracModel(M.DiracParams(A=A, phi=lambda qs: 0 * qs[0]))
    h1 = h1_block_symbol(model.context())
    height = SmoothSymbol(lambda c: F.matrix([[c[2], 0 * c[0]], [0 * c[0], c[2]]]), 3, (2, 2),
                          hermitian=True)
    z = np.array([[0.0, 0.0, 0.5, 0.0, 0.0, 1e-3]])
    pr = model.params
    for t in (0.5, 1.0):
        a1 = sc.egorov_correct(height, model.electron_energy, h1, z, t)[0]
        expected = pr.hbar * pr.e * b / (4 * pr.m ** 2 * pr.c) * t ** 2
        assert_allclose(np.diag(a1).real, [expected, -expected], rtol=0.05)
        assert abs(a1[0, 1]) < 1e-10


def test_spin_along_axis_is_fixed():
    s = sc.bmt_evolve(lambda t: np.array([0.0, 0.0, 1.7]), np.array([0.0, 0.0, 0.6]), 3.0)
    assert_allclose(s.s, np.broadcast_to([0.0, 0.0, 0.6], s.s.shape), atol=1e-14)


def test_precession_sense():
    # ds/dt = -s x Omega = Omega x s: counterclockwise about Omega
    s = sc.bmt_evolve(lambda t: np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]),
                      np.pi / 2, dt=1e-3)
    assert_allclose(s.s[-1], [0.0, 1.0, 0.0], atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3),
       st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.floats(0.1, 2.0))
def test_bmt_preserves_norm(w, s0, rate):
    w = np.array(w)
    s = sc.bmt_evolve(lambda t: w * np.cos(rate * t), np.array(s0), 2.0, dt=1e-2)
    assert s.norm_drift() < 1e-12


def test_conjugated_pauli_rotation():
    # exp(i theta sigma_3 / 2) rotates sigma_1 by theta about e3
    th = 0.9
    D = expm(0.5j * th * sc.PAULI[2])
    C = sc.conjugated_pauli(D)
    assert_allclose(C[2], [0, 0, 1], atol=1e-14)
    assert_allclose(C[0], [np.cos(th), np.sin(th), 0], atol=1e-14)
    X = 0.3 * sc.PAULI[0] - 0.2 * sc.PAULI[2]
    assert_allclose(sc.pauli_coefficients(X), [0.3, 0, -0.2], atol=1e-15)


def test_uniform_field_transport_matches_precession():
    z0 = np.array([0.3, -0.2, 0.5, 0.4, 0.1, -0.3])
    out = bmt_run(uniform_field_dirac(), z0, T=3.0)
    assert out["literal"] < 1e-10
    assert out["state_picture"] < 1e-10
    assert out["norm_drift"] < 1e-12


def test_varying_field_state_picture_identity():
    z0 = np.array([0.3, -0.2, 0.5, 0.4, 0.1, -0.3])
    out = bmt_run(M.DiracModel(), z0, T=3.0)
    assert out["state_picture"] < 1e-10
    assert out["omega_spread"] > 0.1


def test_export_csv(tmp_path):
    traj = sc.classical_flow(PENDULUM, np.array([0.1, 0.5]), 0.1, dt=1e-2)
    frame = sc.spin_transport(SPIN, traj)
    spin = sc.bmt_evolve(lambda t: np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]), 0.1,
                         dt=1e-2)
    path = tmp_path / "traj.csv"
    sc.export_csv(path, traj, frame, spin)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "q1", "p1", "E_r", "ReD11", "ImD11", "ReD12", "ImD12", "ReD21",
                       "ImD21", "ReD22", "ImD22", "s1", "s2", "s3"]
    assert len(rows) == 12
    data = np.array(rows[1:], dtype=float)
    assert_allclose(data[:, 1:3], traj.points, atol=0)
    assert_allclose(data[-1, 4] + 1j * data[-1, 5], frame.D[-1, 0, 0], atol=0)
