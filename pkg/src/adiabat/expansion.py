"""Order-by-order construction of the almost-invariant projector, the
intertwining unitary and the effective Hamiltonian symbol.

All constructions return :class:`~adiabat.symbols.FormalSymbol` objects whose
terms are lazily evaluated symbols; nothing is computed until a term is
queried at a set of phase-space points.  Only bands consisting of a single
(possibly degenerate) eigenvalue are supported.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bands import BandSpec, BandSymbols
from .errors import DefectError, DimensionError, NumericError
from .jets import Jet, jet_poisson
from .symbols import (ConstantSymbol, FormalSymbol, JetMap, MatrixSymbol, MoyalTermSymbol,
                      as_formal, as_points, fd_step_scale, moyal_mul, uses_order)


@dataclass
class ExpansionContext:
    """Everything the constructions need.

    Parameters
    ----------
    H : FormalSymbol
        Hermitian symbol ``H0 + eps H1 + ...``.
    band : BandSpec
        Relevant band of ``H0`` (single eigenvalue of multiplicity ``l``).
    N : int
        Target order.
    u0 : MatrixSymbol, optional
        Unitary with ``u0 pi0 u0* = pi_r``.  Defaults to the adjoint of the
        Nagy-gauge eigenframe, for which ``pi_r = diag(1_l, 0)``.
    ref_basis : ndarray, optional
        ``n x l`` orthonormal basis ``chi_alpha`` of ``Ran pi_r``.
    """

    H: FormalSymbol
    band: BandSpec
    N: int = 1
    u0: Optional[MatrixSymbol] = None
    ref_basis: Optional[np.ndarray] = None
    spectral: BandSymbols = field(init=False, repr=False)

    def __post_init__(self):
        self.H = as_formal(self.H)
        n = self.H.n
        ell = self.band.multiplicity
        self.spectral = BandSymbols(self.H.term(0), self.band)
        if self.u0 is None:
            self.u0 = self.spectral.unitary_frame.H
        if self.ref_basis is None:
            self.ref_basis = np.eye(n)[:, :ell]
        self.ref_basis = np.asarray(self.ref_basis, dtype=complex)
        if self.ref_basis.shape != (n, ell):
            raise DimensionError("ref_basis must be n x l")
        if self.u0.shape != (n, n) or self.u0.d != self.H.d:
            raise DimensionError("u0 must be an n x n symbol on the same phase space")

    @property
    def d(self) -> int:
        return self.H.d

    @property
    def n(self) -> int:
        return self.H.n

    @property
    def ell(self) -> int:
        return self.band.multiplicity

    @property
    def pi_r(self) -> np.ndarray:
        return self.ref_basis @ self.ref_basis.conj().T

    @property
    def pi0(self) -> MatrixSymbol:
        return self.spectral.projector

    @property
    def energy(self) -> MatrixSymbol:
        return self.spectral.energy

    @property
    def resolvent(self) -> MatrixSymbol:
        return self.spectral.resolvent

    @property
    def frame(self) -> MatrixSymbol:
        """``psi_alpha = u0* chi_alpha`` as an ``n x l`` symbol."""
        return self.u0.H @ ConstantSymbol(self.ref_basis, self.d)

    def validate(self, samples, tol: float = 1e-8) -> dict:
        """Check the intertwining relation and unitarity of ``u0`` at samples."""
        z = as_points(samples)
        pr = self.pi_r
        if not np.allclose(pr @ pr, pr) or abs(np.trace(pr).real - self.ell) > 1e-10:
            raise NumericError("pi_r is not a rank-l projector")
        u = self.u0(z)
        eye = np.eye(self.n)
        unit = float(np.max(np.abs(u @ np.conj(np.swapaxes(u, -1, -2)) - eye)))
        inter = float(np.max(np.abs(u @ self.pi0(z) @ np.conj(np.swapaxes(u, -1, -2)) - pr)))
        if unit > tol or inter > tol:
            raise NumericError(f"u0 invalid: unitarity {unit:.2e}, intertwining {inter:.2e}")
        return {"unitarity": unit, "intertwining": inter}


def _identity(ctx) -> MatrixSymbol:
    return ConstantSymbol(np.eye(ctx.n), ctx.d, name="identity")


def _series(terms) -> FormalSymbol:
    return FormalSymbol(list(terms))


def moyal_projector(ctx: ExpansionContext, N: Optional[int] = None) -> FormalSymbol:
    """Moyal projector ``pi = pi0 + eps pi1 + ...`` through order ``N``.

    Each order follows four steps: the idempotency defect ``G``, the block
    diagonal part fixed by it, the commutator defect ``F`` of the corrected
    series, and the off-diagonal part solving ``[H0, pi_od] = -F``.
    """
    N = ctx.N if N is None else N
    P0 = ctx.pi0
    R0 = ctx.resolvent
    eye = np.eye(ctx.n)
    pi = _series([P0])
    H = ctx.H
    for k in range(1, N + 1):
        G = MoyalTermSymbol(pi, pi, k)

        def diag_part(j):
            g, p = j
            q = eye - p
            return -(p @ g @ p) + q @ g @ q

        PD = JetMap([G, P0], diag_part, (ctx.n, ctx.n), hermitian=True, name=f"pi{k} diag")
        omega = pi.extend(PD)
        F = MoyalTermSymbol(H, omega, k) - MoyalTermSymbol(omega, H, k)

        def offdiag(j):
            f, p, r = j
            return p @ f @ r - r @ f @ p

        POD = JetMap([F, P0, R0], offdiag, (ctx.n, ctx.n), hermitian=True,
                     name=f"pi{k} offdiag")
        term = PD + POD
        term.hermitian = True
        term.name = f"pi{k}"
        pi = pi.extend(term)
    return pi


def projector_defects(pi: FormalSymbol, H: FormalSymbol, z, N: Optional[int] = None) -> dict:
    """Largest entry of each order of ``pi#pi - pi``, ``pi - pi*`` and ``[H, pi]_#``."""
    N = pi.N if N is None else N
    z = as_points(z)
    out = {"idempotency": [], "hermiticity": [], "commutation": []}
    sq = moyal_mul(pi, pi, N)
    comm_a = moyal_mul(H, pi, N)
    comm_b = moyal_mul(pi, H, N)
    for k in range(N + 1):
        pk = pi.term(k)(z)
        out["idempotency"].append(float(np.max(np.abs(sq.term(k)(z) - pk))))
        out["hermiticity"].append(float(np.max(np.abs(pk - np.conj(np.swapaxes(pk, -1, -2))))))
        out["commutation"].append(float(np.max(np.abs(comm_a.term(k)(z) - comm_b.term(k)(z)))))
    return out


def check_defects(defects: dict, tol: float) -> None:
    """Raise :class:`DefectError` if any per-order defect exceeds ``tol``."""
    worst = max(max(v) for v in defects.values())
    if worst > tol:
        raise DefectError(f"series defect {worst:.3e} exceeds {tol:.1e}", defects)


def pi1_closed_symbol(ctx: ExpansionContext, include_diagonal: bool = True) -> MatrixSymbol:
    """Closed form of the first-order projector correction.

    With ``R0 = (H0 - E)^{-1}(1 - pi0)``::

        pi1_od = (i/2)(R0 {H0 + E, pi0} pi0 + pi0 {pi0, H0 + E} R0)
                 - pi0 H1 R0 - R0 H1 pi0
        pi1    = pi1_od + (i/2)(pi0 {pi0, pi0} pi0 - (1 - pi0) {pi0, pi0} (1 - pi0))

    The diagonal part follows from idempotency alone.
    """
    d, n = ctx.d, ctx.n
    eye = np.eye(n)
    H0, H1 = ctx.H.term(0), ctx.H.term(1)

    def fn(j):
        h0, h1, p, r, e = j
        s = h0 + e * Jet.constant(np.broadcast_to(eye, h0.coeffs.shape[1:]), h0.nvar, h0.order)
        out = 0.5j * (r @ jet_poisson(s, p, d) @ p + p @ jet_poisson(p, s, d) @ r)
        out = out - p @ h1 @ r - r @ h1 @ p
        if include_diagonal:
            pp = jet_poisson(p, p, d)
            q = eye - p
            out = out + 0.5j * (p @ pp @ p - q @ pp @ q)
        return out

    return JetMap([H0, H1, ctx.pi0, ctx.resolvent, ctx.energy], fn, (n, n),
                  extra=[1, 0, 1, 0, 1], hermitian=True, name="pi1 closed")


def pi1_closed(ctx: ExpansionContext, z, include_diagonal: bool = True) -> np.ndarray:
    """Value of the closed-form ``pi1`` at ``z`` (oracle for :func:`moyal_projector`)."""
    return pi1_closed_symbol(ctx, include_diagonal)(z)


def moyal_unitary(ctx: ExpansionContext, pi: Optional[FormalSymbol] = None,
                  N: Optional[int] = None) -> FormalSymbol:
    """Moyal unitary ``u`` with ``u#u* = 1`` and ``u#pi#u* = pi_r`` through order ``N``.

    ``u_k = (a_k + b_k) u0`` with the hermitian part ``a_k = -A_k / 2`` fixed by
    unitarity and the antihermitian part ``b_k = [pi_r, B_k]`` fixed by the
    intertwining relation.  The free block-diagonal antihermitian part is zero.
    """
    N = ctx.N if N is None else N
    if pi is None:
        pi = moyal_projector(ctx, N)
    u0 = ctx.u0
    pr = ConstantSymbol(ctx.pi_r, ctx.d, name="pi_r")
    u = _series([u0])
    for k in range(1, N + 1):
        A = MoyalTermSymbol(u, u.H, k)
        a = A * (-0.5)
        w = u.extend(a @ u0)
        wp = moyal_mul(w, pi.truncate(k), k)
        B = MoyalTermSymbol(wp, w.H, k)
        b = pr @ B - B @ pr
        term = (a + b) @ u0
        term.name = f"u{k}"
        u = u.extend(term)
    return u


def unitary_defects(u: FormalSymbol, pi: FormalSymbol, pi_r: np.ndarray, z,
                    N: Optional[int] = None) -> dict:
    """Per-order defects of ``u#u* - 1``, ``u*#u - 1`` and ``u#pi#u* - pi_r``."""
    N = u.N if N is None else N
    z = as_points(z)
    n = u.n
    eye = np.eye(n)
    uu = moyal_mul(u, u.H, N)
    uu2 = moyal_mul(u.H, u, N)
    inter = moyal_mul(moyal_mul(u, pi, N), u.H, N)
    out = {"unitarity": [], "co-unitarity": [], "intertwining": []}
    for k in range(N + 1):
        ref = eye if k == 0 else 0
        refp = pi_r if k == 0 else 0
        out["unitarity"].append(float(np.max(np.abs(uu.term(k)(z) - ref))))
        out["co-unitarity"].append(float(np.max(np.abs(uu2.term(k)(z) - ref))))
        out["intertwining"].append(float(np.max(np.abs(inter.term(k)(z) - refp))))
    return out


def u1_closed_symbol(ctx: ExpansionContext, adjoint: bool = False) -> MatrixSymbol:
    """Closed form of ``u1`` (or ``u1*`` with ``adjoint=True``).

    ``u1* = u0* ( (i/4){u0, u0*} + [u0 pi1_od u0*, pi_r]
    + (i/4)[{u0, pi0} u0* + u0 {pi0, u0*}, pi_r] )``.

    The first term is the hermitian part forced by ``(u # u*)_1 = 0``; it
    vanishes whenever ``u0`` depends on ``q`` only or on ``p`` only.
    """
    d, n = ctx.d, ctx.n
    pr = ctx.pi_r
    pod = pi1_closed_symbol(ctx, include_diagonal=False)

    def fn(j):
        u, p, od = j
        us = u.H
        k = od.order
        u_k, us_k, p_k = u.truncate(k), us.truncate(k), p.truncate(k)
        inner = 0.25j * jet_poisson(u, us, d)
        x = u_k @ od @ us_k
        inner = inner + (x @ pr - pr @ x)
        y = jet_poisson(u, p, d) @ us_k + u_k @ jet_poisson(p, us, d)
        inner = inner + 0.25j * (y @ pr - pr @ y)
        out = us_k @ inner
        return out if adjoint else out.H

    return JetMap([ctx.u0, ctx.pi0, pod], fn, (n, n), extra=[1, 1, 0],
                  name="u1* closed" if adjoint else "u1 closed")


def u1_closed(ctx: ExpansionContext, z, adjoint: bool = False) -> np.ndarray:
    """Value of the closed-form first-order unitary correction at ``z``."""
    return u1_closed_symbol(ctx, adjoint)(z)


def effective_symbol(ctx: ExpansionContext, u: Optional[FormalSymbol] = None,
                     N: Optional[int] = None) -> FormalSymbol:
    """Effective Hamiltonian ``h = u # H # u*`` through order ``N``."""
    N = ctx.N if N is None else N
    if u is None:
        u = moyal_unitary(ctx, N=N)
    return moyal_mul(moyal_mul(u, ctx.H, N), u.H, N)


def block(ctx: ExpansionContext, A, z=None):
    """Reference-space block ``<chi_a, A chi_b>`` of a symbol or array."""
    R = ctx.ref_basis
    if isinstance(A, MatrixSymbol):
        return ConstantSymbol(R.conj().T, ctx.d) @ A @ ConstantSymbol(R, ctx.d)
    return R.conj().T @ A @ R


def block_defects(ctx: ExpansionContext, h: FormalSymbol, z) -> dict:
    """Commutator with ``pi_r`` and hermiticity defect of each ``h_j``."""
    z = as_points(z)
    pr = ctx.pi_r
    out = {"block": [], "hermiticity": []}
    for t in h.terms:
        v = t(z)
        out["block"].append(float(np.max(np.abs(v @ pr - pr @ v))))
        out["hermiticity"].append(float(np.max(np.abs(v - np.conj(np.swapaxes(v, -1, -2))))))
    return out


def h1_block_symbol(ctx: ExpansionContext) -> MatrixSymbol:
    """``l x l`` first-order effective Hamiltonian in the frame ``psi``.

    ``h1_ab = <psi_a, H1 psi_b> - i <psi_a, {E, psi_b}>
    - (i/2) <psi_a, {H0 - E, psi_b}>``.
    """
    d, n, ell = ctx.d, ctx.n, ctx.ell
    eye = np.eye(n)

    def fn(j):
        psi, h0, h1, e = j
        k = h1.order
        psi_k = psi.truncate(k)
        ps = psi_k.H
        shifted = h0 - e * Jet.constant(np.broadcast_to(eye, h0.coeffs.shape[1:]), h0.nvar,
                                        h0.order)
        out = ps @ h1 @ psi_k
        out = out - 1j * (ps @ jet_poisson(e, psi, d))
        out = out - 0.5j * (ps @ jet_poisson(shifted, psi, d))
        return out

    return JetMap([ctx.frame, ctx.H.term(0), ctx.H.term(1), ctx.energy], fn, (ell, ell),
                  extra=[1, 1, 0, 1], hermitian=True, name="h1 block")


def h1_block(ctx: ExpansionContext, z) -> np.ndarray:
    """Value of the first-order band Hamiltonian at ``z``."""
    return h1_block_symbol(ctx)(z)


def h2_block_symbol(ctx: ExpansionContext, u1: Optional[MatrixSymbol] = None) -> MatrixSymbol:
    """``l x l`` second-order effective Hamiltonian.

    Assembles ``pi_r ( u0 H2 + u1 H1 - h1 u1 + (u1#H0)_1 + (u0#H1)_1 - (E#u1)_1
    - (h1#u0)_1 + (u0#H0)_2 - (E#u0)_2 ) u0* pi_r`` with ``u1`` from the closed
    form unless given.
    """
    d, n = ctx.d, ctx.n
    R = ConstantSymbol(ctx.ref_basis, d)
    Rs = ConstantSymbol(ctx.ref_basis.conj().T, d)
    u0 = ctx.u0
    if u1 is None:
        u1 = u1_closed_symbol(ctx)
    H0, H1, H2 = ctx.H.term(0), ctx.H.term(1), ctx.H.term(2)
    E = ctx.energy * ConstantSymbol(np.eye(n), d)
    h1 = R @ h1_block_symbol(ctx) @ Rs

    def m(a, b, k):
        return MoyalTermSymbol(FormalSymbol([a]), FormalSymbol([b]), k)

    total = (u0 @ H2 + u1 @ H1 - h1 @ u1 + m(u1, H0, 1) + m(u0, H1, 1) - m(E, u1, 1)
             - m(h1, u0, 1) + m(u0, H0, 2) - m(E, u0, 2))
    out = Rs @ total @ u0.H @ R
    out.name = "h2 block"
    out.hermitian = True
    return out


def h2_block(ctx: ExpansionContext, z) -> np.ndarray:
    """Value of the second-order band Hamiltonian at ``z``."""
    return h2_block_symbol(ctx)(z)


def h2_conditioning(ctx: ExpansionContext, z, factor: float = 0.5) -> dict:
    """Sensitivity of ``h2`` to the finite-difference step of the base jets.

    ``h2`` contains derivatives of ``h1``, which itself depends on frame
    derivatives.  The relative change of ``h2`` when all steps are scaled by
    ``factor`` is reported together with the gap and resolvent size.
    """
    z = as_points(z)
    ref = h2_block_symbol(ctx)(z)
    with fd_step_scale(factor):
        alt = h2_block_symbol(ctx)(z)
    scale = max(1e-300, float(np.max(np.abs(ref))))
    R = ctx.resolvent(z)
    return {"relative_change": float(np.max(np.abs(ref - alt))) / scale,
            "resolvent_norm": float(np.max(np.linalg.norm(R, ord=2, axis=(-2, -1)))),
            "h2_norm": scale}
