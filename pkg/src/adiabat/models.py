"""Shipped model symbols with closed-form reference data.

* :class:`TwoLevelModel`: bounded, q-periodic two-level benchmark.
* :class:`BornOppenheimerModel`: ``kappa(p) 1 + V(q)`` with Berry potential and
  the closed-form second-order band Hamiltonian.
* :class:`DiracModel`: the Dirac symbol in external fields with the
  Foldy-Wouthuysen frame, precession vector and spin Hamiltonian.
* :class:`TimeDepHamiltonian`, :func:`howland`, :func:`time_adiabatic_h`:
  time-adiabatic theory via the extended symbol ``eta + H(t)``.

Model functions are written with :data:`adiabat.jets.F` so that the same code
produces values and exact Taylor jets.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .bands import BandSpec, BandSymbols, spectral_decomposition
from .errors import CapabilityError, ConfigError, NumericError
from .expansion import ExpansionContext, effective_symbol, h1_block, h2_block
from .jets import F, Jet, coordinate_jet, index_table
from .symbols import (ConstantSymbol, FormalSymbol, FunctionSymbol, MatrixSymbol, SmoothSymbol,
                      as_points, zero_symbol)

SIGMA = np.array([[[0, 1], [1, 0]], [[0, -1j], [1j, 0]], [[1, 0], [0, -1]]], dtype=complex)


def _herm(x):
    return np.conj(np.swapaxes(x, -1, -2))


# --------------------------------------------------------------------------
# Two-level benchmark


@dataclass(frozen=True)
class TwoLevelParams:
    """Parameters of the two-level benchmark.

    ``twist`` rotates the Bloch vector out of the x-z plane by the azimuth
    ``twist * cos(2 pi q / L)``, which makes the eigenframe genuinely complex.
    ``h1_amp`` adds the subprincipal symbol ``h1_amp sin(2 pi q/L) tanh(p) sigma_1``.
    Both default to zero.  A positive ``momentum_period`` ``P`` replaces ``p`` by
    ``(P / 2 pi) sin(2 pi p / P)`` everywhere, which makes the symbol periodic in
    momentum as well (used on periodic grids).
    """

    a: float = 1.0
    b: float = 0.5
    c_amp: float = 0.3
    d_amp: float = 0.5
    L: float = 8.0
    twist: float = 0.0
    h1_amp: float = 0.0
    momentum_period: float = 0.0

    def __post_init__(self):
        for name in ("a", "b", "c_amp", "d_amp", "L", "twist", "h1_amp", "momentum_period"):
            if not np.isfinite(getattr(self, name)):
                raise ConfigError("must be finite", name)
        if self.L <= 0:
            raise ConfigError("must be positive", "L")
        if self.momentum_period < 0:
            raise ConfigError("must be non-negative", "momentum_period")


class TwoLevelModel:
    """``H0 = e 1 + n . sigma`` with ``n = (sin t cos f, sin t sin f, cos t)``.

    ``t = a sin(2 pi q/L) + b tanh(p)``, ``f = twist cos(2 pi q/L)`` and
    ``e = c_amp cos(2 pi q/L) + d_amp p^2/(1 + p^2)``.  The upper band
    ``E = e + 1`` is selected; the gap is 2 everywhere.
    """

    d = 1
    n = 2

    def __init__(self, params: Optional[TwoLevelParams] = None):
        self.params = params or TwoLevelParams()
        pr = self.params
        k = 2 * np.pi / pr.L
        P = pr.momentum_period

        def fold(p):
            return (P / (2 * np.pi)) * F.sin((2 * np.pi / P) * p) if P else p

        def angles(c):
            q, p = c[0], fold(c[1])
            theta = pr.a * F.sin(k * q) + pr.b * F.tanh(p)
            phi = pr.twist * F.cos(k * q)
            shift = pr.c_amp * F.cos(k * q) + pr.d_amp * (p * p) * F.recip(1 + p * p)
            return theta, phi, shift

        self._angles = angles

        def h0(c):
            theta, phi, shift = angles(c)
            st, ct = F.sin(theta), F.cos(theta)
            off = st * F.expi(-1 * phi) if pr.twist else st
            off_c = st * F.expi(phi) if pr.twist else st
            return F.matrix([[shift + ct, off], [off_c, shift - ct]])

        def h1(c):
            q, p = c[0], fold(c[1])
            f = pr.h1_amp * F.sin(k * q) * F.tanh(p)
            return F.matrix([[0.0, f], [f, 0.0]])

        def frame_star(c):
            theta, phi, _ = angles(c)
            cs, sn = F.cos(theta * 0.5), F.sin(theta * 0.5)
            if pr.twist:
                return F.matrix([[cs, -1 * (sn * F.expi(-1 * phi))], [sn * F.expi(phi), cs]])
            return F.matrix([[cs, -1 * sn], [sn, cs]])

        def energy(c):
            return F.matrix([[angles(c)[2] + 1.0]])

        self.H0 = SmoothSymbol(h0, 1, (2, 2), hermitian=True, name="two-level H0")
        self.energy_symbol = SmoothSymbol(energy, 1, (1, 1), hermitian=True,
                                          name="two-level upper band energy")
        terms = [self.H0]
        if pr.h1_amp:
            terms.append(SmoothSymbol(h1, 1, (2, 2), hermitian=True, name="two-level H1"))
        self.H = FormalSymbol(terms)
        self.band = BandSpec.upper(2, gap_floor=1.0)
        self.frame_star = SmoothSymbol(frame_star, 1, (2, 2), name="two-level u0*")
        self.u0 = self.frame_star.H

    # closed forms ---------------------------------------------------------
    def bloch_vector(self, z) -> np.ndarray:
        z = as_points(z)
        theta, phi, _ = self._angles([z[..., 0], z[..., 1]])
        return np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi),
                         np.cos(theta)], axis=-1)

    def energy(self, z) -> np.ndarray:
        z = as_points(z)
        return self._angles([z[..., 0], z[..., 1]])[2] + 1.0

    def projector(self, z) -> np.ndarray:
        nv = self.bloch_vector(z)
        return 0.5 * (np.eye(2) + np.einsum("...k,kij->...ij", nv, SIGMA))

    def frame(self, z) -> np.ndarray:
        """Upper eigenvector ``(cos(t/2), e^{if} sin(t/2))`` as an ``n x 1`` array."""
        return self.frame_star(as_points(z))[..., :, :1]

    def context(self, N: int = 1, closed_frame: bool = True) -> ExpansionContext:
        """Expansion context using the closed-form frame (or the Nagy frame)."""
        return ExpansionContext(self.H, self.band, N, u0=self.u0 if closed_frame else None)


# --------------------------------------------------------------------------
# Born-Oppenheimer


class BornOppenheimerModel:
    """``H0(q, p) = kappa(p) 1 + V(q)`` on ``R^{2d}``.

    Parameters
    ----------
    potential : callable
        ``potential(qs)`` takes the list of ``d`` position coordinates (arrays
        or scalar jets) and returns the ``n x n`` hermitian matrix via
        :data:`adiabat.jets.F`.
    d, n : int
        Configuration-space and fiber dimensions.
    band : BandSpec
        Electronic band of ``V``.
    eta : float
        Mollifier strength; ``kappa(p) = p^2 / (2 (1 + eta p^2))`` per
        component sum, ``eta = 0`` is the raw kinetic energy.
    frame_star : callable, optional
        ``frame_star(qs)`` returning a unitary whose first ``l`` columns
        span the band.  Defaults to the Nagy-gauge frame.
    """

    def __init__(self, potential: Callable, d: int, n: int, band: BandSpec, eta: float = 0.0,
                 frame_star: Optional[Callable] = None):
        if eta < 0:
            raise ConfigError("must be >= 0", "eta")
        self.d, self.n, self.band, self.eta = d, n, band, float(eta)
        self.potential = potential
        eye = np.eye(n)

        def kinetic(ps):
            p2 = sum(p * p for p in ps)
            if self.eta:
                return 0.5 * p2 * F.recip(1 + self.eta * p2)
            return 0.5 * p2

        self._kinetic = kinetic

        def h0(c):
            v = potential(c[:d])
            k = kinetic(c[d:])
            if isinstance(v, Jet) or isinstance(k, Jet):
                if not isinstance(k, Jet):
                    k = Jet.constant(np.broadcast_to(k, v.coeffs.shape[1:-2] + (1, 1)), 2 * d,
                                     v.order)
                return v + k * Jet.constant(np.broadcast_to(eye, v.coeffs.shape[1:]), 2 * d,
                                            v.order)
            return np.asarray(v) + np.asarray(k)[..., None, None] * eye

        self.H0 = SmoothSymbol(h0, d, (n, n), hermitian=True, name="BO H0")
        self.H = FormalSymbol([self.H0])
        if frame_star is not None:
            self.frame_star = SmoothSymbol(lambda c: frame_star(c[:d]), d, (n, n),
                                           name="BO u0*")
            self.u0 = self.frame_star.H
        else:
            self.frame_star = None
            self.u0 = None

    def context(self, N: int = 2) -> ExpansionContext:
        return ExpansionContext(self.H, self.band, N, u0=self.u0)

    def kinetic(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return self._kinetic([p[..., j] for j in range(self.d)])

    def electronic_energy(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        v = self.potential([q[..., j] for j in range(self.d)])
        return spectral_decomposition(v, self.band)["E"]

    def _frame_data(self, ctx: ExpansionContext, z):
        z = as_points(z)
        fj = ctx.frame.jet(z, 1)
        psi = fj.value
        grads = [fj.derivative_value(tuple(1 if k == j else 0 for k in range(2 * self.d)))
                 for j in range(self.d)]
        return z, psi, grads

    def berry_potential(self, ctx: ExpansionContext, z) -> np.ndarray:
        """``A_j = i <psi, d_{q_j} psi>``, shape ``(..., d, l, l)``."""
        _, psi, grads = self._frame_data(ctx, z)
        return np.stack([1j * _herm(psi) @ g for g in grads], axis=-3)

    def _require_raw(self):
        if self.eta:
            raise CapabilityError("closed forms assume the raw kinetic energy p^2/2")

    def h1_closed(self, ctx: ExpansionContext, z) -> np.ndarray:
        """``h1 = -p . A(q)``."""
        self._require_raw()
        z = as_points(z)
        A = self.berry_potential(ctx, z)
        return -np.einsum("...j,...jab->...ab", z[..., self.d:], A)

    def h2_closed(self, ctx: ExpansionContext, z) -> np.ndarray:
        """Berry-squared, ``(1 - pi0)`` curvature and resolvent terms."""
        self._require_raw()
        z, psi, grads = self._frame_data(ctx, z)
        A = np.stack([1j * _herm(psi) @ g for g in grads], axis=-3)
        P = psi @ _herm(psi)
        Q = np.eye(self.n) - P
        R = ctx.resolvent(z)
        p = z[..., self.d:]
        pg = sum(p[..., j, None, None] * grads[j] for j in range(self.d))
        out = 0.5 * np.einsum("...jab,...jbc->...ac", A, A)
        out = out + 0.5 * sum(_herm(g) @ Q @ g for g in grads)
        return out - _herm(pg) @ R @ pg

    def h3_closed(self, ctx: ExpansionContext, z, eps: float) -> np.ndarray:
        """Effective band Hamiltonian through second order with the square completed."""
        self._require_raw()
        z, psi, grads = self._frame_data(ctx, z)
        ell = psi.shape[-1]
        A = np.stack([1j * _herm(psi) @ g for g in grads], axis=-3)
        p = z[..., self.d:]
        eye = np.eye(ell)
        kin = 0
        for j in range(self.d):
            m = p[..., j, None, None] * eye - eps * A[..., j, :, :]
            kin = kin + 0.5 * m @ m
        P = psi @ _herm(psi)
        Q = np.eye(self.n) - P
        R = ctx.resolvent(z)
        pg = sum(p[..., j, None, None] * grads[j] for j in range(self.d))
        er = self.electronic_energy(z[..., :self.d])
        out = kin + er[..., None, None] * eye
        out = out + 0.5 * eps ** 2 * sum(_herm(g) @ Q @ g for g in grads)
        return out - eps ** 2 * _herm(pg) @ R @ pg


def spin_in_field(theta: Callable, phi: Callable, scale: float = 1.0):
    """Potential ``scale * n(q) . sigma`` and its closed-form frame.

    ``theta`` and ``phi`` map the position coordinates to the polar and
    azimuthal angles of ``n``.  Returns ``(potential, frame_star)``; the upper
    eigenvector is ``(cos(t/2), e^{i f} sin(t/2))``.
    """

    def potential(qs):
        t, f = theta(qs), phi(qs)
        st, ct = F.sin(t), F.cos(t)
        return F.matrix([[scale * ct, scale * (st * F.expi(-1 * f))],
                         [scale * (st * F.expi(f)), -scale * ct]])

    def frame_star(qs):
        t, f = theta(qs), phi(qs)
        cs, sn = F.cos(t * 0.5), F.sin(t * 0.5)
        return F.matrix([[cs, -1 * (sn * F.expi(-1 * f))], [sn * F.expi(f), cs]])

    return potential, frame_star


def born_oppenheimer(V: Callable, d: int, n: int, band: BandSpec, eta: float = 0.0,
                     frame_star: Optional[Callable] = None) -> BornOppenheimerModel:
    """Build a Born-Oppenheimer model; see :class:`BornOppenheimerModel`."""
    return BornOppenheimerModel(V, d, n, band, eta, frame_star)


def mollifier_report(model: BornOppenheimerModel, p_window: float, npts: int = 201) -> dict:
    """Largest difference between raw and mollified kinetic energy on ``|p| <= p_window``."""
    p = np.linspace(-p_window, p_window, npts)
    pts = np.zeros((npts, model.d))
    pts[:, 0] = p
    raw = 0.5 * np.sum(pts ** 2, axis=-1)
    moll = model.kinetic(pts)
    return {"p_window": p_window, "eta": model.eta, "max_difference": float(np.max(np.abs(raw - moll)))}


# --------------------------------------------------------------------------
# Dirac


def _default_vector_potential(qs):
    q1, q2, q3 = qs
    return [0.3 * F.sin(q2) + 0.1 * F.cos(q3), 0.25 * F.sin(q3) - 0.1 * F.sin(q1),
            0.2 * F.sin(q1) * F.cos(q2)]


def _default_scalar_potential(qs):
    q1, q2, q3 = qs
    return 0.4 * F.cos(q1) * F.cos(q2) + 0.2 * F.sin(q3)


@dataclass(frozen=True)
class DiracParams:
    """Physical constants and external fields of the Dirac model.

    ``A(qs)`` returns three components and ``phi(qs)`` a scalar; both receive
    the list ``[q1, q2, q3]`` and must use :data:`adiabat.jets.F`.
    """

    hbar: float = 1.0
    c: float = 1.0
    m: float = 1.0
    e: float = 1.0
    A: Callable = field(default=_default_vector_potential)
    phi: Callable = field(default=_default_scalar_potential)

    def __post_init__(self):
        for name in ("hbar", "c", "m", "e"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ConfigError("must be a positive finite number", name)


def _dirac_matrices():
    eye2 = np.eye(2)
    z2 = np.zeros((2, 2))
    alpha = np.array([np.block([[z2, s], [s, z2]]) for s in SIGMA])
    beta = np.block([[eye2, z2], [z2, -eye2]]).astype(complex)
    return alpha, beta


ALPHA, BETA = _dirac_matrices()


class DiracModel:
    """``H_D = c alpha.(p - (e/c) A(q)) + beta m c^2 + e phi(q)`` with ``d = 3``, ``n = 4``.

    The expansion parameter of the generic machinery is ``eps * hbar``, so the
    physical first-order electron Hamiltonian is ``hbar`` times the generic
    :func:`~adiabat.expansion.h1_block`.
    """

    d = 3
    n = 4

    def __init__(self, params: Optional[DiracParams] = None):
        self.params = pr = params or DiracParams()
        eye = np.eye(4)

        def kinetic(c):
            a = pr.A(c[:3])
            return [c[3 + j] - (pr.e / pr.c) * a[j] for j in range(3)]

        self._kinetic = kinetic

        def hd(c):
            k = kinetic(c)
            phi = pr.phi(c[:3])
            rows = [[0] * 4 for _ in range(4)]
            for i in range(4):
                for j in range(4):
                    entry = pr.m * pr.c ** 2 * BETA[i, j].real + (pr.e * phi if i == j else 0)
                    for a in range(3):
                        if ALPHA[a, i, j] != 0:
                            entry = entry + (pr.c * ALPHA[a, i, j]) * k[a]
                    rows[i][j] = entry
            return F.matrix(rows)

        def fw(c):
            # u0 = (p0 + mc + beta alpha.k) / sqrt(2 p0 (p0 + mc))
            k = kinetic(c)
            p0 = F.sqrt(pr.m ** 2 * pr.c ** 2 + sum(x * x for x in k))
            norm = F.power(2 * (p0 * (p0 + pr.m * pr.c)), -0.5)
            ba = BETA @ ALPHA
            rows = [[0] * 4 for _ in range(4)]
            for i in range(4):
                for j in range(4):
                    entry = (p0 + pr.m * pr.c) * eye[i, j] if i == j else 0
                    for a in range(3):
                        if ba[a, i, j] != 0:
                            entry = entry + ba[a, i, j] * k[a]
                    rows[i][j] = entry * norm if not isinstance(entry, (int, float)) else entry
            return F.matrix(rows)

        self.H0 = SmoothSymbol(hd, 3, (4, 4), hermitian=True, name="Dirac H0")
        self.H = FormalSymbol([self.H0])
        self.band = BandSpec.upper(4, multiplicity=2, gap_floor=1e-3)
        self.u0 = SmoothSymbol(fw, 3, (4, 4), name="Foldy-Wouthuysen u0")
        self.ref_basis = np.eye(4)[:, :2]

        def electron_energy(c):
            k = kinetic(c)
            p0 = F.sqrt(pr.m ** 2 * pr.c ** 2 + sum(x * x for x in k))
            return F.matrix([[pr.c * p0 + pr.e * pr.phi(c[:3])]])

        self.electron_energy = SmoothSymbol(electron_energy, 3, (1, 1), hermitian=True,
                                            name="electron energy")

    def context(self, N: int = 1) -> ExpansionContext:
        return ExpansionContext(self.H, self.band, N, u0=self.u0, ref_basis=self.ref_basis)

    # closed forms ---------------------------------------------------------
    def kinetic_momentum(self, z) -> np.ndarray:
        z = as_points(z)
        return np.stack(self._kinetic([z[..., i] for i in range(6)]), axis=-1).real

    def p0(self, z) -> np.ndarray:
        k = self.kinetic_momentum(z)
        pr = self.params
        return np.sqrt(pr.m ** 2 * pr.c ** 2 + np.sum(k ** 2, axis=-1))

    def velocity(self, z) -> np.ndarray:
        return self.params.c * self.kinetic_momentum(z) / self.p0(z)[..., None]

    def gamma(self, z) -> np.ndarray:
        return self.p0(z) / (self.params.m * self.params.c)

    def energies(self, z):
        """``(E_+, E_-) = (c p0 + e phi, -c p0 + e phi)``."""
        z = as_points(z)
        pr = self.params
        phi = np.real(pr.phi([z[..., 0], z[..., 1], z[..., 2]]))
        cp0 = pr.c * self.p0(z)
        return cp0 + pr.e * phi, -cp0 + pr.e * phi

    def projectors(self, z):
        """``P_pm = (1 pm (alpha.k + beta m c)/p0) / 2``."""
        k = self.kinetic_momentum(z)
        pr = self.params
        X = np.einsum("...a,aij->...ij", k, ALPHA) + pr.m * pr.c * BETA
        X = X / self.p0(z)[..., None, None]
        eye = np.eye(4)
        return 0.5 * (eye + X), 0.5 * (eye - X)

    def electron_frame(self, z) -> np.ndarray:
        """Columns ``psi_+``, ``psi_-`` (spin up/down along ``e_3``), shape ``(..., 4, 2)``."""
        pr = self.params
        k = self.kinetic_momentum(z)
        p0 = self.p0(z)
        mc = pr.m * pr.c
        pref = np.sqrt(p0 / (2 * (p0 + mc)))
        v = k / p0[..., None]  # v / c
        top = (p0 + mc) / p0
        zero = np.zeros_like(p0)
        up = np.stack([top, zero, v[..., 2], v[..., 0] + 1j * v[..., 1]], axis=-1)
        down = np.stack([zero, top, v[..., 0] - 1j * v[..., 1], -v[..., 2]], axis=-1)
        return pref[..., None, None] * np.stack([up, down], axis=-1)

    def magnetic_field(self, q) -> np.ndarray:
        """``B = curl A`` from exact first-order jets of ``A``."""
        q = np.asarray(q, dtype=float)
        pts = np.concatenate([q, np.zeros_like(q)], axis=-1)
        cj = [coordinate_jet(pts, i, 1) for i in range(3)]
        A = self.params.A(cj)
        grad = np.zeros(q.shape[:-1] + (3, 3))
        for a in range(3):
            comp = A[a]
            for j in range(3):
                if isinstance(comp, Jet):
                    g = tuple(1 if k == j else 0 for k in range(6))
                    grad[..., a, j] = comp.derivative_value(g)[..., 0, 0].real
        return np.stack([grad[..., 2, 1] - grad[..., 1, 2], grad[..., 0, 2] - grad[..., 2, 0],
                         grad[..., 1, 0] - grad[..., 0, 1]], axis=-1)

    def electric_field(self, q) -> np.ndarray:
        """``E = -grad phi`` from exact first-order jets."""
        q = np.asarray(q, dtype=float)
        pts = np.concatenate([q, np.zeros_like(q)], axis=-1)
        cj = [coordinate_jet(pts, i, 1) for i in range(3)]
        phi = self.params.phi(cj)
        out = np.zeros(q.shape[:-1] + (3,))
        if isinstance(phi, Jet):
            for j in range(3):
                g = tuple(1 if k == j else 0 for k in range(6))
                out[..., j] = -phi.derivative_value(g)[..., 0, 0].real
        return out

    def omega(self, z) -> np.ndarray:
        """Precession vector ``(e/mc)(B/gamma - v x E / (c (1 + gamma)))``."""
        z = as_points(z)
        pr = self.params
        B = self.magnetic_field(z[..., :3])
        E = self.electric_field(z[..., :3])
        g = self.gamma(z)[..., None]
        v = self.velocity(z)
        return pr.e / (pr.m * pr.c) * (B / g - np.cross(v, E) / (pr.c * (1 + g)))

    def omega_momentum_form(self, z) -> np.ndarray:
        """Same vector written as ``(e/p0)(B - p0 v x E / (c (p0 + mc)))``."""
        z = as_points(z)
        pr = self.params
        B = self.magnetic_field(z[..., :3])
        E = self.electric_field(z[..., :3])
        p0 = self.p0(z)[..., None]
        v = self.velocity(z)
        return pr.e / p0 * (B - p0 / (pr.c * (p0 + pr.m * pr.c)) * np.cross(v, E))

    def h1_closed(self, z) -> np.ndarray:
        """``-(hbar/2) sigma . Omega``."""
        om = self.omega(z)
        return -0.5 * self.params.hbar * np.einsum("...k,kij->...ij", om, SIGMA)

    def h1_generic(self, z, ctx: Optional[ExpansionContext] = None) -> np.ndarray:
        """``hbar`` times the generic first-order band Hamiltonian on the FW frame."""
        ctx = ctx or self.context()
        return self.params.hbar * h1_block(ctx, z)


def dirac_1d(c: float = 1.0, m: float = 1.0, A: Optional[Callable] = None,
             phi: Optional[Callable] = None) -> SmoothSymbol:
    """One-dimensional two-component Dirac symbol ``c s1 (p - A) + s3 m c^2 + phi``."""
    A = A or (lambda q: 0.2 * F.sin(q))
    phi = phi or (lambda q: 0.3 * F.cos(q))

    def fn(cc):
        q, p = cc
        k = c * (p - A(q))
        f = phi(q)
        return F.matrix([[m * c ** 2 + f, k], [k, f - m * c ** 2]])

    return SmoothSymbol(fn, 1, (2, 2), hermitian=True, name="1D Dirac")


# --------------------------------------------------------------------------
# Time-adiabatic theory


class TimeDepHamiltonian:
    """Hermitian ``H(t)`` written with :data:`adiabat.jets.F`.

    Parameters
    ----------
    fn : callable
        ``fn(t)`` returning an ``n x n`` matrix for an array or jet ``t``.
    n : int
        Fiber dimension.
    band : BandSpec
        Relevant band.
    """

    def __init__(self, fn: Callable, n: int, band: BandSpec):
        self.fn = fn
        self.n = n
        self.band = band

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = self.fn(t)
        return np.broadcast_to(np.asarray(out, dtype=complex), t.shape + (self.n, self.n))

    def check(self, times, tol: float = 1e-10) -> float:
        """Hermiticity and gap along sampled times; returns the smallest gap."""
        vals = self(np.asarray(times, dtype=float))
        if np.max(np.abs(vals - _herm(vals))) > tol:
            raise NumericError("H(t) is not hermitian")
        return float(np.min(spectral_decomposition(vals, self.band)["gap"]))


def avoided_crossing(a: float = 1.0, g: float = 0.5, omega: float = 0.7) -> TimeDepHamiltonian:
    """``H(t) = a tanh(t) sigma_3 + g (cos(w t) sigma_1 + sin(w t) sigma_2)``."""

    def fn(t):
        z = a * F.tanh(t)
        x, y = g * F.cos(omega * t), g * F.sin(omega * t)
        return F.matrix([[z, x + (-1j) * y], [x + 1j * y, -1 * z]])

    return TimeDepHamiltonian(fn, 2, BandSpec.upper(2, gap_floor=1e-3))


def constant_hamiltonian(M) -> TimeDepHamiltonian:
    M = np.asarray(M, dtype=complex)
    n = M.shape[0]
    return TimeDepHamiltonian(lambda t: M if not isinstance(t, Jet) else F.matrix(
        [[t * 0 + M[i, j] for j in range(n)] for i in range(n)]), n, BandSpec.upper(n))


def howland(Hd: TimeDepHamiltonian) -> FormalSymbol:
    """Extended symbol ``K(t, eta) = eta + H(t)`` on the phase space ``(t, eta)``."""
    n = Hd.n

    def fn(c):
        t, eta = c
        h = Hd.fn(t)
        if isinstance(h, Jet) or isinstance(eta, Jet):
            rows = [[(eta if i == j else 0) for j in range(n)] for i in range(n)]
            e = F.matrix(rows)
            if not isinstance(h, Jet):
                h = Jet.constant(np.broadcast_to(h, e.coeffs.shape[1:]), 2, e.order)
            return e + h
        return np.asarray(h) + np.asarray(eta)[..., None, None] * np.eye(n)

    return FormalSymbol([SmoothSymbol(fn, 1, (n, n), hermitian=True, name="Howland K")])


class KatoFrame(MatrixSymbol):
    """Kato transport ``X' = [pi', pi] X``, ``X(0) = 1`` as a symbol in ``(t, eta)``.

    ``X`` plays the role of ``u0*``; values come from an adaptive ODE solve and
    higher Taylor coefficients from the recursion
    ``X_{k+1} = sum_j M_j X_{k-j} / (k + 1)`` with ``M = [pi', pi]``.
    """

    def __init__(self, K: FormalSymbol, band: BandSpec, rtol: float = 1e-12):
        n = K.n
        super().__init__(1, (n, n), False, K.term(0).max_jet_order - 1, "Kato frame")
        self.spectral = BandSymbols(K.term(0), band)
        self.rtol = rtol
        self._values = {}

    def _generator(self, t):
        z = np.array([t, 0.0])
        pj = self.spectral.projector.jet(z, 1)
        dp = pj.derivative_value((1, 0))
        p = pj.value
        return dp @ p - p @ dp

    def values(self, times) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        flat = times.ravel()
        n = self.n
        out = np.zeros((flat.size, n, n), dtype=complex)
        rhs = lambda t, y: (self._generator(t) @ y.reshape(n, n)).ravel()
        uniq, inverse = np.unique(flat, return_inverse=True)
        vals = np.zeros((uniq.size, n, n), dtype=complex)
        vals[uniq == 0] = np.eye(n)
        for sel in (np.nonzero(uniq > 0)[0], np.nonzero(uniq < 0)[0][::-1]):
            if sel.size == 0:
                continue
            tt = uniq[sel]
            sol = solve_ivp(rhs, (0.0, tt[-1]), np.eye(n, dtype=complex).ravel(), method="DOP853",
                            t_eval=tt, rtol=self.rtol, atol=self.rtol * 1e-2)
            if not sol.success:
                raise NumericError(f"Kato transport failed: {sol.message}")
            vals[sel] = sol.y.T.reshape(-1, n, n)
        out = vals[inverse]
        return out.reshape(times.shape + (n, n))

    def _compute_jet(self, z, K):
        t = z[..., 0]
        X0 = self.values(t)
        table = index_table(2, K)
        coeffs = np.zeros((table.size,) + X0.shape, dtype=complex)
        coeffs[0] = X0
        if K == 0:
            return Jet(coeffs, 2, K, z)
        pj = self.spectral.projector.jet(z, K + 1)
        dp = pj.derivative((1, 0))
        p = pj.truncate(K)
        M = dp @ p - p @ dp
        Mt = [M.coeffs[table.position[(k, 0)]] for k in range(K)]
        Xt = [X0]
        for k in range(K):
            acc = sum(Mt[j] @ Xt[k - j] for j in range(k + 1))
            Xt.append(acc / (k + 1))
        for k in range(1, K + 1):
            coeffs[table.position[(k, 0)]] = Xt[k]
        return Jet(coeffs, 2, K, z)


class TimeAdiabaticH:
    """Explicit effective Hamiltonian of time-adiabatic theory in the Kato frame.

    ``h(t) = e_r - i eps <phi, phi'> - eps^2 <phi', R0 phi'>`` with
    ``phi(t) = X(t) phi(0)`` and ``R0 = (H - e_r)^{-1}(1 - pi0)``.  The
    second-order coefficient follows from ``h = <Psi, H Psi> - i eps <Psi, Psi'>``
    for the corrected frame ``Psi = phi + i eps R0 phi' + O(eps^2)``; it is
    checked against the exact Schroedinger phase in the test suite.
    """

    def __init__(self, Hd: TimeDepHamiltonian, order: int = 2):
        if order > 2:
            raise CapabilityError("explicit time-adiabatic formula is available through order 2")
        self.Hd = Hd
        self.order = order
        self.K = howland(Hd)
        self.kato = KatoFrame(self.K, Hd.band)
        s0 = spectral_decomposition(Hd(np.array(0.0)), Hd.band)
        self.ref_basis = s0["basis"]

    def terms(self, t):
        t = np.asarray(t, dtype=float)
        z = np.stack([t, np.zeros_like(t)], axis=-1)
        X = self.kato.values(t)
        pj = self.kato.spectral.projector.jet(z, 1)
        p, dp = pj.value, pj.derivative_value((1, 0))
        phi = X @ self.ref_basis
        dphi = (dp @ p - p @ dp) @ phi
        e = self.kato.spectral.energy(z)[..., 0, 0].real
        R = self.kato.spectral.resolvent(z)
        ell = phi.shape[-1]
        out = [e[..., None, None] * np.eye(ell)]
        if self.order >= 1:
            out.append(-1j * _herm(phi) @ dphi)
        if self.order >= 2:
            out.append(-(_herm(dphi) @ R @ dphi))
        return out

    def __call__(self, t, eps: float) -> np.ndarray:
        return sum(eps ** j * h for j, h in enumerate(self.terms(t)))

    def context(self, N: int = 2) -> ExpansionContext:
        """Generic expansion context on the extended phase space with the Kato frame."""
        return ExpansionContext(self.K, self.Hd.band, N, u0=self.kato.H,
                                ref_basis=self.ref_basis)

    def generic_terms(self, t, N: int = 2):
        """Band blocks of ``u # K # u*`` from the generic machinery at ``eta = 0``."""
        t = np.asarray(t, dtype=float)
        z = np.stack([t, np.zeros_like(t)], axis=-1)
        ctx = self.context(N)
        h = effective_symbol(ctx, N=N)
        R = self.ref_basis
        return [_herm(R) @ h.term(j)(z) @ R for j in range(N + 1)]


def time_adiabatic_h(Hd: TimeDepHamiltonian, order: int = 2) -> TimeAdiabaticH:
    """Explicit time-adiabatic effective Hamiltonian through ``order`` (at most 2)."""
    return TimeAdiabaticH(Hd, order)
