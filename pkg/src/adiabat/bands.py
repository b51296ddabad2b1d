"""Pointwise spectral data of a hermitian principal symbol.

Values come from a hermitian eigendecomposition.  Jets of the band projector,
band energy, reduced resolvent and a gauge-fixed frame are obtained from the
jet of the symbol by Rayleigh-Schroedinger-type recursions, so they are exact
Taylor data of the spectral quantities of the (jet-truncated) symbol.  The
eigensolver gauge never enters a derivative: frames near a point are produced
by Nagy transport of the eigenbasis at that point.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (BandIdentificationError, GapViolation, NumericError,
                     TransportDomainError)
from .jets import Jet, index_table, inverse_sqrt_coefficients
from .symbols import MatrixSymbol, PhasePoint, _fd_state, as_points

DEGENERACY_RTOL = 1e-8


@dataclass(frozen=True)
class BandSpec:
    """Selection of the relevant band.

    Parameters
    ----------
    indices : tuple of int, optional
        Positions in the ascending eigenvalue list (default selection rule).
    window : (float, float) or callable, optional
        Energy window ``(lo, hi)`` or predicate on eigenvalues.
    multiplicity : int
        Expected number of selected eigenvalues ``l``.
    gap_floor : float
        Smallest acceptable distance to the rest of the spectrum.
    """

    indices: Optional[Tuple[int, ...]] = None
    window: Optional[Union[Tuple[float, float], Callable]] = None
    multiplicity: int = 1
    gap_floor: float = 1e-6

    def __post_init__(self):
        if self.multiplicity < 1:
            raise ValueError("multiplicity must be >= 1")
        if self.gap_floor <= 0:
            raise ValueError("gap_floor must be positive")
        if (self.indices is None) == (self.window is None):
            raise ValueError("give exactly one of indices or window")
        if self.indices is not None:
            object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
            if len(self.indices) != self.multiplicity:
                raise ValueError("number of indices differs from multiplicity")

    @classmethod
    def upper(cls, n: int, multiplicity: int = 1, gap_floor: float = 1e-6) -> "BandSpec":
        return cls(indices=tuple(range(n - multiplicity, n)), multiplicity=multiplicity,
                   gap_floor=gap_floor)

    @classmethod
    def lower(cls, multiplicity: int = 1, gap_floor: float = 1e-6) -> "BandSpec":
        return cls(indices=tuple(range(multiplicity)), multiplicity=multiplicity,
                   gap_floor=gap_floor)

    def select(self, evals: np.ndarray) -> np.ndarray:
        """Boolean mask ``(..., n)`` of selected eigenvalues (ascending input)."""
        n = evals.shape[-1]
        if self.indices is not None:
            mask = np.zeros(evals.shape, dtype=bool)
            mask[..., [i % n for i in self.indices]] = True
        elif callable(self.window):
            mask = np.asarray(self.window(evals), dtype=bool)
        else:
            lo, hi = self.window
            mask = (evals >= lo) & (evals <= hi)
        counts = mask.sum(axis=-1)
        if np.any(counts != self.multiplicity):
            raise BandIdentificationError(
                f"selected {int(counts.min())}..{int(counts.max())} eigenvalues, "
                f"expected {self.multiplicity}")
        return mask


@dataclass
class EigFrame:
    """Spectral data of ``H0`` at one point."""

    z: PhasePoint
    E_r: float
    pi0: np.ndarray
    basis: np.ndarray
    gap: float
    complement: np.ndarray = field(repr=False, default=None)
    resolvent: np.ndarray = field(repr=False, default=None)


def _fix_phase(vecs: np.ndarray) -> np.ndarray:
    """Deterministic gauge: largest component of each column real positive."""
    idx = np.argmax(np.abs(vecs) > np.max(np.abs(vecs), axis=-2, keepdims=True) - 1e-12,
                    axis=-2)
    lead = np.take_along_axis(vecs, idx[..., None, :], axis=-2)
    phase = lead / np.abs(lead)
    return vecs / phase


def spectral_decomposition(values: np.ndarray, band: BandSpec, check_gap: bool = True):
    """Band data for a batch of hermitian matrices ``(..., n, n)``.

    Returns a dict with ``E`` (band energy), ``P`` (projector), ``basis``
    (n x l), ``complement`` (n x (n - l)), ``R`` (reduced resolvent),
    ``gap`` and ``width`` (spread of the band eigenvalues).
    """
    values = np.asarray(values, dtype=complex)
    if not np.all(np.isfinite(values)):
        raise NumericError("non-finite matrix in spectral decomposition")
    evals, vecs = np.linalg.eigh(values)
    mask = band.select(evals)
    n = evals.shape[-1]
    ell = band.multiplicity
    order = np.argsort(~mask, axis=-1, kind="stable")
    evals_s = np.take_along_axis(evals, order, axis=-1)
    vecs_s = np.take_along_axis(vecs, order[..., None, :], axis=-1)
    vecs_s = _fix_phase(vecs_s)
    band_vals = evals_s[..., :ell]
    rest = evals_s[..., ell:]
    E = band_vals.mean(axis=-1)
    width = band_vals.max(axis=-1) - band_vals.min(axis=-1)
    scale = np.maximum(1.0, np.max(np.abs(evals), axis=-1))
    if ell > 1 and np.any(width > DEGENERACY_RTOL * scale):
        raise BandIdentificationError(
            f"band eigenvalues split by {float(width.max()):.3e} beyond degeneracy tolerance")
    if rest.shape[-1]:
        gap = np.min(np.abs(rest - E[..., None]), axis=-1)
    else:
        gap = np.full(E.shape, np.inf)
    if check_gap and np.any(gap < band.gap_floor):
        k = np.unravel_index(np.argmin(gap), gap.shape)
        raise GapViolation(f"spectral gap {float(gap[k]):.3e} below floor {band.gap_floor}",
                           gap=float(gap[k]), point=k)
    basis = vecs_s[..., :ell]
    comp = vecs_s[..., ell:]
    P = basis @ np.conj(np.swapaxes(basis, -1, -2))
    with np.errstate(divide="ignore"):
        inv = 1.0 / (rest - E[..., None])
    R = (comp * inv[..., None, :]) @ np.conj(np.swapaxes(comp, -1, -2))
    return {"E": E, "P": P, "basis": basis, "complement": comp, "R": R, "gap": gap,
            "width": width, "evals": evals}


def spectral_projector(H0: MatrixSymbol, z, band: BandSpec) -> np.ndarray:
    """Orthogonal projector onto the selected eigenspace of ``H0(z)``."""
    return spectral_decomposition(H0(as_points(z)), band)["P"]


def band_energy(H0: MatrixSymbol, z, band: BandSpec):
    """Eigenvalue ``E_r(z)`` of the selected band."""
    E = spectral_decomposition(H0(as_points(z)), band)["E"]
    return float(E) if np.ndim(E) == 0 else E


def reduced_resolvent(H0: MatrixSymbol, z, band: BandSpec) -> np.ndarray:
    """``(H0 - E_r)^{-1} (1 - pi0)`` built on the orthogonal complement."""
    return spectral_decomposition(H0(as_points(z)), band)["R"]


def eig_frame(H0: MatrixSymbol, z, band: BandSpec) -> EigFrame:
    zz = as_points(z)
    s = spectral_decomposition(H0(zz), band)
    return EigFrame(PhasePoint.from_array(zz), float(s["E"]), s["P"], s["basis"],
                    float(s["gap"]), s["complement"], s["R"])


@dataclass
class GapReport:
    min_gap: float
    argmin: np.ndarray
    violations: list
    max_width: float
    max_energy: float

    @property
    def ok(self) -> bool:
        return not self.violations


def gap_check(H0: MatrixSymbol, band: BandSpec, samples) -> GapReport:
    """Gap and band-width diagnostics over a sample set (never raises on gaps)."""
    pts = np.atleast_2d(as_points(samples))
    s = spectral_decomposition(H0(pts), band, check_gap=False)
    gap = s["gap"]
    k = int(np.argmin(gap))
    viol = [(pts[i].copy(), float(gap[i])) for i in np.nonzero(gap < band.gap_floor)[0]]
    return GapReport(float(gap[k]), pts[k].copy(), viol, float(np.max(s["width"])),
                     float(np.max(np.abs(s["E"]))))


def _inv_sqrt_psd_complement(X: np.ndarray) -> np.ndarray:
    """``(1 - X)^{-1/2}`` for hermitian ``0 <= X < 1`` via eigendecomposition."""
    w, v = np.linalg.eigh(X)
    if np.any(w >= 1.0 - 1e-14):
        raise TransportDomainError("projectors too far apart for Nagy transport")
    return (v * (1.0 / np.sqrt(1.0 - w))[..., None, :]) @ np.conj(np.swapaxes(v, -1, -2))


def nagy_transport(pi_a, pi_b) -> np.ndarray:
    """Unitary ``w`` with ``w pi_b w* = pi_a`` (Nagy formula).

    ``w = [1 - (pi_a - pi_b)^2]^{-1/2} [pi_a pi_b + (1 - pi_a)(1 - pi_b)]``.
    Requires ``||pi_a - pi_b|| < 1``.
    """
    pi_a = np.asarray(pi_a, dtype=complex)
    pi_b = np.asarray(pi_b, dtype=complex)
    diff = pi_a - pi_b
    if np.max(np.linalg.norm(diff, ord=2, axis=(-2, -1))) >= 1.0:
        raise TransportDomainError("||pi_a - pi_b|| >= 1")
    eye = np.eye(pi_a.shape[-1])
    S = _inv_sqrt_psd_complement(diff @ diff)
    return S @ (pi_a @ pi_b + (eye - pi_a) @ (eye - pi_b))


# --------------------------------------------------------------------------
# Jets of spectral quantities


def _spectral_jets(Hj: Jet, band: BandSpec):
    """Exact jets of ``P``, ``E``, ``R`` and the Nagy frames from a jet of H0."""
    s = spectral_decomposition(Hj.value, band)
    t = Hj.table
    H = Hj.coeffs
    n = H.shape[-1]
    eye = np.eye(n)
    P0, Q0, R0 = s["P"], eye - s["P"], s["R"]
    P = np.zeros_like(H, dtype=complex)
    P[0] = P0
    first, second, target = t.pair_first, t.pair_second, t.pair_target
    for m in range(1, t.order + 1):
        for gi in range(t.count[m - 1], t.count[m]):
            sel = target == gi
            f, g = first[sel], second[sel]
            inner = (f != 0) & (g != 0)
            G = np.einsum("k...ij,k...jl->...il", P[f[inner]], P[g[inner]])
            PD = -P0 @ G @ P0 + Q0 @ G @ Q0
            lower = g != gi  # exclude H_0 P_gamma
            Hf, Pg = H[f[lower]], P[g[lower]]
            F = np.einsum("k...ij,k...jl->...il", Hf, Pg) - np.einsum(
                "k...ij,k...jl->...il", Pg, Hf)
            F = F + H[0] @ PD - PD @ H[0]
            P[gi] = PD + P0 @ F @ R0 - R0 @ F @ P0
    Pj = Jet(P, Hj.nvar, Hj.order, Hj.center)
    ell = band.multiplicity
    Ej = (Hj @ Pj).trace() / ell
    Rj = (Hj - Ej * Jet.constant(np.broadcast_to(eye, H.shape[1:]), Hj.nvar, Hj.order)
          + Pj).inv() - Pj
    # Nagy transport from the center keeps the frame gauge fixed at the point
    D = Pj - P0
    X = D @ D
    S = X.power_series(inverse_sqrt_coefficients(t.order // 2 + 1))
    Qj = Jet.constant(np.broadcast_to(eye, H.shape[1:]), Hj.nvar, Hj.order) - Pj
    W = S @ (Pj @ P0 + Qj @ Q0)
    full = np.concatenate([s["basis"], s["complement"]], axis=-1)
    return {"P": Pj, "E": Ej, "R": Rj, "frame": W @ s["basis"], "unitary_frame": W @ full,
            "data": s}


class _SpectralCore:
    """Shared jet computation for all spectral views of one symbol."""

    def __init__(self, H0: MatrixSymbol, band: BandSpec):
        self.H0 = H0
        self.band = band
        self._memo = {}

    def jets(self, z, K):
        key = (z.shape, z.tobytes(), K, _fd_state["scale"])
        hit = self._memo.get(key)
        if hit is None:
            hit = _spectral_jets(self.H0.jet(z, K), self.band)
            if len(self._memo) > 4:
                self._memo.pop(next(iter(self._memo)))
            self._memo[key] = hit
        return hit


class SpectralView(MatrixSymbol):
    def __init__(self, core: _SpectralCore, key: str, shape, hermitian: bool, name: str):
        H0 = core.H0
        super().__init__(H0.d, shape, hermitian, H0.max_jet_order, name)
        self.core = core
        self.key = key

    def _compute_jet(self, z, K):
        return self.core.jets(z, K)[self.key]


class BandSymbols:
    """Spectral symbols of ``H0`` for one band, sharing a single computation.

    Attributes
    ----------
    projector : MatrixSymbol
        ``pi0``.
    energy : MatrixSymbol
        ``E_r`` as a ``1 x 1`` symbol.
    resolvent : MatrixSymbol
        ``R0 = (H0 - E_r)^{-1}(1 - pi0)``.
    frame : MatrixSymbol
        ``n x l`` orthonormal basis of ``Ran pi0``.  Its jets at a point use
        the eigenbasis there, transported to neighbours by the Nagy formula.
    unitary_frame : MatrixSymbol
        Full unitary whose first ``l`` columns are :attr:`frame`.
    """

    def __init__(self, H0: MatrixSymbol, band: BandSpec):
        n = H0.shape[0]
        ell = band.multiplicity
        core = _SpectralCore(H0, band)
        self.H0 = H0
        self.band = band
        self.projector = SpectralView(core, "P", (n, n), True, "pi0")
        self.energy = SpectralView(core, "E", (1, 1), True, "E_r")
        self.resolvent = SpectralView(core, "R", (n, n), True, "R0")
        self.frame = SpectralView(core, "frame", (n, ell), False, "frame")
        self.unitary_frame = SpectralView(core, "unitary_frame", (n, n), False, "frame*")


def smooth_frame(H0: MatrixSymbol, band: BandSpec, z, K: int) -> Jet:
    """Jet of a gauge-fixed orthonormal basis of the band eigenspace at ``z``.

    Neighbouring frames are ``w(pi0(z'), pi0(z)) psi(z)`` with ``w`` the Nagy
    transport, so the derivatives are free of eigensolver phase noise.
    """
    return BandSymbols(H0, band).frame.jet(z, K)
