"""Classical flow, spin transport, Egorov evolution and spin precession.

Flows are integrated with the classical fourth-order Runge-Kutta method.  The
transport matrix ``D`` and the spin vector are advanced by the exponential of
the generator frozen at the step midpoint, which keeps them exactly unitary,
respectively norm preserving.  Midpoints come from cubic Hermite
interpolation of the stored flow.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import simpson
from scipy.linalg import expm

from .errors import CapabilityError, IntegratorError, NumericError
from .jets import Jet
from .symbols import FunctionSymbol, MatrixSymbol, as_points

UNITARITY_TOL = 1e-9


def _herm(x):
    return np.conj(np.swapaxes(x, -1, -2))


def _unit(nvar, i):
    return tuple(1 if k == i else 0 for k in range(nvar))


@dataclass
class Trajectory:
    """Samples of the flow of a scalar band energy.

    Attributes
    ----------
    times : ndarray (T+1,)
    points : ndarray (T+1, *batch, 2d)
    energy : ndarray (T+1, *batch)
    midpoints : ndarray (T, *batch, 2d)
        Flow at ``times[k] + dt/2``.
    jacobians : ndarray (T+1, *batch, 2d, 2d) or None
        ``D Phi^t`` at the initial point(s).
    """

    times: np.ndarray
    points: np.ndarray
    energy: np.ndarray
    midpoints: np.ndarray
    jacobians: Optional[np.ndarray] = None

    @property
    def d(self) -> int:
        return self.points.shape[-1] // 2

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def energy_drift(self) -> float:
        return float(np.max(np.abs(self.energy - self.energy[0])))


def _vector_field(E_r: MatrixSymbol, z: np.ndarray, hessian: bool = False):
    d = z.shape[-1] // 2
    j = E_r.jet(z, 2 if hessian else 1)
    grad = np.stack([j.derivative_value(_unit(2 * d, i))[..., 0, 0].real for i in range(2 * d)],
                    axis=-1)
    f = np.concatenate([grad[..., d:], -grad[..., :d]], axis=-1)
    if not np.all(np.isfinite(f)):
        raise NumericError("non-finite vector field")
    if not hessian:
        return f, j.value[..., 0, 0].real
    hess = np.zeros(z.shape + (2 * d,))
    for a in range(2 * d):
        for b in range(2 * d):
            g = tuple(x + y for x, y in zip(_unit(2 * d, a), _unit(2 * d, b)))
            hess[..., a, b] = j.derivative_value(g)[..., 0, 0].real
    # d f / d z = J_symplectic @ Hessian
    jac = np.concatenate([hess[..., d:, :], -hess[..., :d, :]], axis=-2)
    return f, j.value[..., 0, 0].real, jac


def classical_flow(E_r: MatrixSymbol, z0, T: float, dt: float = 1e-3,
                   jacobian: bool = False) -> Trajectory:
    """Integrate ``q' = grad_p E_r``, ``p' = -grad_q E_r`` with RK4.

    Parameters
    ----------
    E_r : MatrixSymbol
        ``1 x 1`` band energy.
    z0 : array_like (..., 2d)
        Initial point(s); all are integrated simultaneously.
    T : float
        Final time; negative values integrate backwards.
    dt : float
        Step size (positive).
    jacobian : bool
        Also integrate the variational equation for ``D Phi^t``.
    """
    if E_r.shape != (1, 1):
        raise CapabilityError("classical_flow needs a scalar (1 x 1) energy symbol")
    if dt <= 0:
        raise ValueError("dt must be positive")
    z = np.array(as_points(z0), dtype=float)
    steps = max(1, int(round(abs(T) / dt)))
    h = T / steps
    nvar = z.shape[-1]
    pts = np.zeros((steps + 1,) + z.shape)
    mids = np.zeros((steps,) + z.shape)
    energy = np.zeros((steps + 1,) + z.shape[:-1])
    jacs = None
    pts[0] = z
    if jacobian:
        jacs = np.zeros((steps + 1,) + z.shape + (nvar,))
        jacs[0] = np.eye(nvar)
        Jm = jacs[0].copy()

    def rhs(y, Jv=None):
        if Jv is None:
            f, e = _vector_field(E_r, y)
            return f, e, None
        f, e, A = _vector_field(E_r, y, hessian=True)
        return f, e, A @ Jv

    f0, e0, dJ0 = rhs(z, Jm if jacobian else None)
    energy[0] = e0
    for k in range(steps):
        y = pts[k]
        if jacobian:
            Jk = jacs[k]
            k1, _, l1 = f0, None, dJ0
            k2, _, l2 = rhs(y + 0.5 * h * k1, Jk + 0.5 * h * l1)
            k3, _, l3 = rhs(y + 0.5 * h * k2, Jk + 0.5 * h * l2)
            k4, _, l4 = rhs(y + h * k3, Jk + h * l3)
            jacs[k + 1] = Jk + h / 6 * (l1 + 2 * l2 + 2 * l3 + l4)
        else:
            k1 = f0
            k2 = rhs(y + 0.5 * h * k1)[0]
            k3 = rhs(y + 0.5 * h * k2)[0]
            k4 = rhs(y + h * k3)[0]
        y1 = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y1)):
            raise NumericError(f"flow left the finite range at step {k}")
        pts[k + 1] = y1
        f1, e1, dJ1 = rhs(y1, jacs[k + 1] if jacobian else None)
        mids[k] = 0.5 * (y + y1) + h / 8 * (f0 - f1)
        energy[k + 1] = e1
        f0, dJ0 = f1, dJ1
    times = np.linspace(0.0, T, steps + 1)
    return Trajectory(times, pts, energy, mids, jacs)


@dataclass
class SpinFrame:
    """Transport matrices ``D(z, t)`` along a trajectory, shape ``(T+1, *batch, l, l)``."""

    trajectory: Trajectory
    D: np.ndarray

    def unitarity_defect(self) -> float:
        ell = self.D.shape[-1]
        return float(np.max(np.abs(_herm(self.D) @ self.D - np.eye(ell))))


def _expm_hermitian(h: np.ndarray, tau: float) -> np.ndarray:
    """``exp(-i tau h)`` for a batch of hermitian matrices."""
    h = 0.5 * (h + _herm(h))
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * tau * w)[..., None, :]) @ _herm(v)


def spin_transport(h1, traj: Trajectory, check_tol: float = UNITARITY_TOL) -> SpinFrame:
    """Solve ``dD/dt = -i h1(Phi^t z) D``, ``D(0) = 1`` along ``traj``.

    ``h1`` is an ``l x l`` symbol or a callable on points.  Each step applies
    ``exp(-i dt h1(z_mid))``.
    """
    mids = traj.midpoints
    hv = h1(mids)
    ell = hv.shape[-1]
    steps = mids.shape[0]
    D = np.zeros((steps + 1,) + hv.shape[1:], dtype=complex)
    D[0] = np.broadcast_to(np.eye(ell), hv.shape[1:])
    h = traj.times[1] - traj.times[0]
    step = _expm_hermitian(hv, h)
    for k in range(steps):
        D[k + 1] = step[k] @ D[k]
    frame = SpinFrame(traj, D)
    defect = frame.unitarity_defect()
    if defect > check_tol:
        raise IntegratorError(f"transport lost unitarity: {defect:.2e}")
    return frame


def egorov_evolve(a0, E_r: MatrixSymbol, h1, z, t: float, dt: float = 1e-3) -> np.ndarray:
    """``a0(z, t) = D*(z, t) a0(Phi^t z) D(z, t)``."""
    traj = classical_flow(E_r, z, t, dt)
    frame = spin_transport(h1, traj)
    D = frame.D[-1]
    return _herm(D) @ a0(traj.points[-1]) @ D


class EvolvedObservable(FunctionSymbol):
    """``a0(t)`` as a symbol in the initial point, with finite-difference jets."""

    def __init__(self, a0, E_r, h1, t: float, dt: float = 1e-3, fd_step: float = 1e-4):
        self.t = t

        def evaluator(z):
            return egorov_evolve(a0, E_r, h1, z, t, dt)

        super().__init__(evaluator, E_r.d, a0.shape, hermitian=a0.hermitian, max_jet_order=1,
                         name="evolved observable", fd_step=fd_step)


def _poisson_scalar_right(h1_jet: Jet, grad_a: np.ndarray, d: int) -> np.ndarray:
    """``{h1, a}`` for scalar ``a`` given its gradient ``(..., 2d)``."""
    out = 0
    for j in range(d):
        dph = h1_jet.derivative_value(_unit(2 * d, d + j))
        dqh = h1_jet.derivative_value(_unit(2 * d, j))
        out = out + dph * grad_a[..., j, None, None] - dqh * grad_a[..., d + j, None, None]
    return out


def egorov_correct(a0, E_r: MatrixSymbol, h1, z, t: float, h2=None, n: int = 1,
                   dt: float = 1e-3, scalar: Optional[bool] = None,
                   quad_nodes: int = 41) -> np.ndarray:
    """First-order Egorov correction ``a1(z, t)`` via the Duhamel formula.

    ``a1(t) = int_0^t U(t - s) I1(s) ds`` with
    ``I1 = (1/2)({h1, a0(s)} - {a0(s), h1}) + i[h2, a0(s)]``, the order-``eps``
    part of ``(i/eps)[h, a]_#`` beyond the transport terms.

    For a scalar principal symbol ``a0 = f 1`` (detected automatically unless
    ``scalar`` is given) the ``h2`` term vanishes and
    ``I1(s)(w) = {h1, f o Phi^s}(w)``; the gradient of ``f o Phi^s`` at
    ``w = Phi^tau z`` is ``grad f(Phi^t z) J(t) J(tau)^{-1}``, so a single
    trajectory with its Jacobian and transport matrices suffices.  Matrix
    valued ``a0`` requires ``h2`` and uses finite-difference jets of the
    evolved observable at ``quad_nodes`` Simpson nodes.
    """
    if n != 1:
        raise CapabilityError("Egorov corrections are implemented for n = 1 only")
    z = as_points(z)
    d = z.shape[-1] // 2
    if scalar is None:
        probe = a0(z)
        ell = probe.shape[-1]
        scalar = bool(np.allclose(probe, probe[..., :1, :1] * np.eye(ell), atol=1e-14))
    if not scalar:
        if h2 is None:
            raise CapabilityError("matrix-valued a0 needs h2 for the first Egorov correction")
        return _egorov_correct_matrix(a0, E_r, h1, h2, z, t, dt, quad_nodes)
    traj = classical_flow(E_r, z, t, dt, jacobian=True)
    frame = spin_transport(h1, traj)
    J = traj.jacobians
    zt = traj.points[-1]
    aj = a0.jet(zt, 1)
    grad_f = np.stack([aj.derivative_value(_unit(2 * d, i))[..., 0, 0] for i in range(2 * d)],
                      axis=-1)
    # row vector grad f(Phi^t z) J(t) J(tau)^{-1} at every stored tau
    row = np.einsum("...i,...ij->...j", grad_f, J[-1])
    Jinv = np.linalg.inv(J)
    grads = np.einsum("...i,k...ij->k...j", row, Jinv)
    h1j = h1.jet(traj.points, 1)
    integrand = _poisson_scalar_right(h1j, grads, d)
    D = frame.D
    integrand = _herm(D) @ integrand @ D
    return simpson(integrand, x=traj.times, axis=0)


def _egorov_correct_matrix(a0, E_r, h1, h2, z, t, dt, nodes):
    d = z.shape[-1] // 2
    taus = np.linspace(0.0, t, nodes)
    vals = []
    for tau in taus:
        if tau > 0:
            traj = classical_flow(E_r, z, tau, dt)
            D = spin_transport(h1, traj).D[-1]
            w = traj.points[-1]
        else:
            w = z
            D = np.broadcast_to(np.eye(a0.shape[0]), z.shape[:-1] + a0.shape)
        s = t - tau
        if s > 0:
            aj = EvolvedObservable(a0, E_r, h1, s, dt).jet(w, 1)
        else:
            aj = a0.jet(w, 1)
        hj = h1.jet(w, 1)
        pb_ha = 0
        pb_ah = 0
        for j in range(d):
            ep, eq = _unit(2 * d, d + j), _unit(2 * d, j)
            pb_ha = pb_ha + hj.derivative_value(ep) @ aj.derivative_value(eq) \
                - hj.derivative_value(eq) @ aj.derivative_value(ep)
            pb_ah = pb_ah + aj.derivative_value(ep) @ hj.derivative_value(eq) \
                - aj.derivative_value(eq) @ hj.derivative_value(ep)
        h2v = h2(w)
        av = aj.value
        inhom = 0.5 * (pb_ha - pb_ah) + 1j * (h2v @ av - av @ h2v)
        vals.append(_herm(D) @ inhom @ D)
    return simpson(np.array(vals), x=taus, axis=0)


# --------------------------------------------------------------------------
# Spin precession


@dataclass
class SpinVector:
    """Spin vectors ``s(t)``, shape ``(T+1, *batch, 3)``."""

    times: np.ndarray
    s: np.ndarray

    def norm_drift(self) -> float:
        n = np.linalg.norm(self.s, axis=-1)
        return float(np.max(np.abs(n - n[0])))


def _rotation(theta: np.ndarray) -> np.ndarray:
    """Right-handed rotation by the angle ``|theta|`` about ``theta``."""
    ang = np.linalg.norm(theta, axis=-1)
    safe = np.where(ang > 0, ang, 1.0)
    k = theta / safe[..., None]
    K = np.zeros(theta.shape[:-1] + (3, 3))
    K[..., 0, 1], K[..., 0, 2] = -k[..., 2], k[..., 1]
    K[..., 1, 0], K[..., 1, 2] = k[..., 2], -k[..., 0]
    K[..., 2, 0], K[..., 2, 1] = -k[..., 1], k[..., 0]
    s, c = np.sin(ang)[..., None, None], np.cos(ang)[..., None, None]
    return np.eye(3) + s * K + (1 - c) * (K @ K)


def bmt_evolve(omega: Callable, s0, T: float, dt: float = 1e-3, omega_mid=None,
               check_tol: float = UNITARITY_TOL) -> SpinVector:
    """Solve ``ds/dt = -s x Omega(t)`` by exact rotations over each step.

    Parameters
    ----------
    omega : callable or None
        ``omega(t)`` returning ``(..., 3)``; evaluated at step midpoints.
    s0 : array_like (..., 3)
        Initial spin vector(s).
    omega_mid : ndarray, optional
        Precomputed midpoint values ``(steps, ..., 3)``; overrides ``omega``.
    """
    s0 = np.asarray(s0, dtype=float)
    if omega_mid is None:
        steps = max(1, int(round(abs(T) / dt)))
        h = T / steps
        tm = (np.arange(steps) + 0.5) * h
        omega_mid = np.stack([np.broadcast_to(omega(t), s0.shape) for t in tm])
    else:
        omega_mid = np.asarray(omega_mid, dtype=float)
        steps = omega_mid.shape[0]
        h = T / steps
    R = _rotation(omega_mid * h)
    s = np.zeros((steps + 1,) + s0.shape)
    s[0] = s0
    for k in range(steps):
        s[k + 1] = np.einsum("...ij,...j->...i", R[k], s[k])
    out = SpinVector(np.linspace(0.0, T, steps + 1), s)
    if out.norm_drift() > check_tol * max(1.0, float(np.max(np.linalg.norm(s0, axis=-1)))):
        raise IntegratorError(f"spin norm drift {out.norm_drift():.2e}")
    return out


PAULI = np.array([[[0, 1], [1, 0]], [[0, -1j], [1j, 0]], [[1, 0], [0, -1]]], dtype=complex)


def pauli_coefficients(X: np.ndarray) -> np.ndarray:
    """Real vector ``c`` with ``X = c . sigma`` for traceless hermitian ``2 x 2`` ``X``."""
    return np.stack([0.5 * np.trace(PAULI[k] @ X, axis1=-2, axis2=-1).real for k in range(3)],
                    axis=-1)


def conjugated_pauli(D: np.ndarray) -> np.ndarray:
    """Coefficient vectors of ``D* sigma_k D``, shape ``(..., 3 (k), 3)``."""
    return np.stack([pauli_coefficients(_herm(D) @ PAULI[k] @ D) for k in range(3)], axis=-2)


# --------------------------------------------------------------------------
# Export


def export_csv(path, traj: Trajectory, frame: Optional[SpinFrame] = None,
               spin: Optional[SpinVector] = None, index: int = 0) -> None:
    """Write one trajectory (batch entry ``index``) as CSV.

    Columns: ``t``, ``q*``, ``p*``, ``E_r``, ``ReD_ij``/``ImD_ij``, ``s*``.
    """
    d = traj.d
    pts = traj.points.reshape(traj.points.shape[0], -1, 2 * d)[:, index]
    en = traj.energy.reshape(traj.energy.shape[0], -1)[:, index]
    header = ["t"] + [f"q{j + 1}" for j in range(d)] + [f"p{j + 1}" for j in range(d)] + ["E_r"]
    cols = [traj.times[:, None], pts, en[:, None]]
    if frame is not None:
        ell = frame.D.shape[-1]
        D = frame.D.reshape(frame.D.shape[0], -1, ell, ell)[:, index].reshape(-1, ell * ell)
        for i in range(ell):
            for j in range(ell):
                header += [f"ReD{i + 1}{j + 1}", f"ImD{i + 1}{j + 1}"]
        inter = np.empty((D.shape[0], 2 * ell * ell))
        inter[:, 0::2], inter[:, 1::2] = D.real, D.imag
        cols.append(inter)
    if spin is not None:
        header += ["s1", "s2", "s3"]
        cols.append(spin.s.reshape(spin.s.shape[0], -1, 3)[:, index])
    data = np.concatenate(cols, axis=1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in data:
            w.writerow([repr(float(x)) for x in row])
