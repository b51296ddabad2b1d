"""Exact quantum reference on a periodic one-dimensional grid.

Operators are dense ``(n m) x (n m)`` matrices with the site index outermost,
so ``matrix.reshape(n, m, n, m)[j, :, l, :]`` is the fiber block coupling
sites ``j`` and ``l``.  Wavefunctions are ``(n, m)`` arrays normalized with the
weight ``L / n``.

The Weyl kernel is assembled per midpoint on the half grid ``x_l + r dx / 2``
(``r`` the minimal-image separation) by one discrete Fourier transform over
the momentum lattice ``p_k = 2 pi eps k / L``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .bands import nagy_transport
from .errors import ClusterViolation, DimensionError, NumericError
from .symbols import MatrixSymbol

EDGE_TOL = 1e-6
CLUSTER_WINDOW = (0.25, 0.75)


@dataclass(frozen=True)
class Grid1D:
    """Periodic grid ``q in [-L/2, L/2)`` with ``n_points`` sites.

    Parameters
    ----------
    n_points : int
        Power of two.
    L : float
        Period.
    m_fiber : int
        Fiber dimension.
    eps : float
        Semiclassical parameter.
    """

    n_points: int
    L: float
    m_fiber: int
    eps: float

    def __post_init__(self):
        n = self.n_points
        if n < 2 or n & (n - 1):
            raise ValueError("n_points must be a power of two")
        if not (self.L > 0 and self.eps > 0 and self.m_fiber >= 1):
            raise ValueError("L and eps must be positive, m_fiber at least 1")

    @property
    def dx(self) -> float:
        return self.L / self.n_points

    @property
    def x(self) -> np.ndarray:
        return -0.5 * self.L + self.dx * np.arange(self.n_points)

    @property
    def dp(self) -> float:
        return 2 * np.pi * self.eps / self.L

    @property
    def p(self) -> np.ndarray:
        """Momenta in natural order, ``k = -n/2 .. n/2 - 1``."""
        n = self.n_points
        return self.dp * np.arange(-n // 2, n // 2)

    @property
    def momentum_period(self) -> float:
        return self.dp * self.n_points

    @property
    def size(self) -> int:
        return self.n_points * self.m_fiber

    @property
    def half_grid(self) -> np.ndarray:
        """Midpoints ``-L/2 + s dx / 2`` for ``s = 0 .. 2n - 1``."""
        return -0.5 * self.L + 0.5 * self.dx * np.arange(2 * self.n_points)

    def lattice_points(self) -> np.ndarray:
        """Phase-space lattice ``(2n, n, 2)`` of midpoints and momenta."""
        X, P = np.meshgrid(self.half_grid, self.p, indexing="ij")
        return np.stack([X, P], axis=-1)


@dataclass
class WaveFn:
    """Wavefunction samples ``(n, m)`` on a grid."""

    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.ndim == 1 and self.grid.m_fiber == 1:
            self.values = self.values[:, None]
        if self.values.shape != (self.grid.n_points, self.grid.m_fiber):
            raise DimensionError(f"wavefunction shape {self.values.shape} does not fit the grid")

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) * self.grid.dx))

    def normalized(self) -> "WaveFn":
        return WaveFn(self.grid, self.values / self.norm)

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def inner(self, other: "WaveFn") -> complex:
        return complex(np.vdot(self.flat, other.flat) * self.grid.dx)

    @classmethod
    def gaussian(cls, grid: Grid1D, q0: float, p0: float, width: float = 1.0,
                 spinor=None) -> "WaveFn":
        """Coherent state ``exp(-(x - q0)^2 / (2 eps w^2) + i p0 x / eps)`` (periodized)."""
        x = grid.x
        d = (x - q0 + 0.5 * grid.L) % grid.L - 0.5 * grid.L
        amp = np.exp(-d ** 2 / (2 * grid.eps * width ** 2) + 1j * p0 * d / grid.eps)
        spinor = np.ones(grid.m_fiber) if spinor is None else np.asarray(spinor, dtype=complex)
        return cls(grid, amp[:, None] * spinor[None, :]).normalized()


@dataclass
class DenseOp:
    """Dense operator on ``grid``; ``hermitian`` is verified when claimed."""

    grid: Grid1D
    matrix: np.ndarray
    hermitian: bool = False
    _eig: Optional[tuple] = field(default=None, repr=False)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=complex)
        if self.matrix.shape != (self.grid.size, self.grid.size):
            raise DimensionError(f"operator shape {self.matrix.shape} does not fit the grid")
        if self.hermitian:
            err = np.max(np.abs(self.matrix - self.matrix.conj().T))
            scale = max(1.0, np.max(np.abs(self.matrix)))
            if err > 1e-10 * scale:
                raise NumericError(f"operator claimed hermitian, defect {err:.2e}")
            self.matrix = 0.5 * (self.matrix + self.matrix.conj().T)

    def __matmul__(self, other):
        if isinstance(other, DenseOp):
            return DenseOp(self.grid, self.matrix @ other.matrix)
        if isinstance(other, WaveFn):
            return WaveFn(self.grid, (self.matrix @ other.flat).reshape(other.values.shape))
        return self.matrix @ other

    def __add__(self, other):
        return DenseOp(self.grid, self.matrix + _mat(other))

    def __sub__(self, other):
        return DenseOp(self.grid, self.matrix - _mat(other))

    def __mul__(self, scalar):
        return DenseOp(self.grid, self.matrix * scalar)

    __rmul__ = __mul__

    @property
    def H(self) -> "DenseOp":
        return DenseOp(self.grid, self.matrix.conj().T, self.hermitian)

    def norm(self) -> float:
        """Operator norm (largest singular value)."""
        return op_norm(self.matrix)

    def eigh(self):
        if not self.hermitian:
            raise NumericError("eigendecomposition requested for a non-hermitian operator")
        if self._eig is None:
            self._eig = np.linalg.eigh(self.matrix)
        return self._eig

    def exp(self, tau: float) -> "DenseOp":
        """``exp(-i tau A)`` for hermitian ``A``."""
        w, v = self.eigh()
        return DenseOp(self.grid, (v * np.exp(-1j * tau * w)) @ v.conj().T)

    @classmethod
    def identity(cls, grid: Grid1D) -> "DenseOp":
        return cls(grid, np.eye(grid.size), hermitian=True)

    @classmethod
    def fiber_constant(cls, grid: Grid1D, M) -> "DenseOp":
        """``1 (x) M`` for a constant ``m x m`` matrix."""
        M = np.asarray(M, dtype=complex)
        return cls(grid, np.kron(np.eye(grid.n_points), M),
                   hermitian=bool(np.allclose(M, M.conj().T)))


def _mat(x):
    return x.matrix if isinstance(x, DenseOp) else np.asarray(x)


def op_norm(M: np.ndarray) -> float:
    return float(np.linalg.norm(M, 2))


# --------------------------------------------------------------------------
# Quantization


def edge_mismatch(samples_lo: np.ndarray, samples_hi: np.ndarray, scale: float) -> float:
    return float(np.max(np.abs(samples_hi - samples_lo)) / max(scale, 1.0))


def _check_edges(symbol, grid: Grid1D, tol: float, sup: float) -> float:
    x = grid.half_grid
    P = grid.momentum_period
    lo = symbol(np.stack([x, np.full_like(x, -0.5 * P)], axis=-1))
    hi = symbol(np.stack([x, np.full_like(x, 0.5 * P)], axis=-1))
    mis = edge_mismatch(lo, hi, sup)
    if mis > tol:
        raise NumericError(
            f"symbol is not negligible or periodic at the momentum edge |p| = {0.5 * P:.4g} "
            f"(mismatch {mis:.2e}); refine the grid or use a momentum-periodic symbol")
    return mis


def weyl_from_samples(samples: np.ndarray, grid: Grid1D, hermitian: bool = False) -> DenseOp:
    """Weyl operator from symbol samples on :meth:`Grid1D.lattice_points`.

    ``samples`` has shape ``(2n, n, m, m)`` with momenta in natural order.
    """
    n, m = grid.n_points, grid.m_fiber
    samples = np.asarray(samples, dtype=complex)
    if samples.shape != (2 * n, n, m, m):
        raise DimensionError(f"expected samples of shape {(2 * n, n, m, m)}, got {samples.shape}")
    # sum_k A(s, p_k) exp(2 pi i k r / n) for every shift r (k in natural order)
    shifted = np.fft.ifftshift(samples, axes=1)
    A_hat = np.fft.ifft(shifted, axis=1)  # includes 1/n
    K = np.zeros((n, m, n, m), dtype=complex)
    cols = np.arange(n)
    for r in range(-n // 2, n // 2):
        rows = (cols + r) % n
        if r == -n // 2:
            s1 = (2 * cols + r) % (2 * n)
            s2 = (2 * cols - r) % (2 * n)
            block = 0.5 * (A_hat[s1, r % n] + A_hat[s2, r % n])
        else:
            block = A_hat[(2 * cols + r) % (2 * n), r % n]
        K[rows, :, cols, :] = block
    mat = K.reshape(n * m, n * m)
    if hermitian:
        err = np.max(np.abs(mat - mat.conj().T))
        if err > 1e-10 * max(1.0, np.max(np.abs(mat))):
            raise NumericError(f"quantized hermitian symbol has defect {err:.2e}")
    return DenseOp(grid, mat, hermitian=hermitian)


def weyl_quantize(A, grid: Grid1D, check_edges: bool = True, edge_tol: float = EDGE_TOL,
                  hermitian: Optional[bool] = None) -> DenseOp:
    """Discrete Weyl quantization of an ``m x m`` symbol on ``grid``.

    The symbol is sampled on :meth:`Grid1D.lattice_points`; the momentum edge
    is checked for aliasing unless ``check_edges`` is false.
    """
    pts = grid.lattice_points()
    samples = np.asarray(A(pts), dtype=complex)
    if samples.shape[-2:] != (grid.m_fiber, grid.m_fiber):
        raise DimensionError("symbol fiber size does not match the grid")
    if check_edges:
        _check_edges(A, grid, edge_tol, float(np.max(np.abs(samples))))
    if hermitian is None:
        hermitian = bool(getattr(A, "hermitian", False))
    return weyl_from_samples(samples, grid, hermitian=hermitian)


class PeriodicInterpolant:
    """Trigonometric interpolant of a matrix function on a periodic phase space.

    Parameters
    ----------
    samples : ndarray (nq, np, r, c)
        Values on ``q = q0 + i Lq / nq``, ``p = p0 + j Lp / np``.
    periods : (float, float)
        Periods ``(Lq, Lp)``.
    origin : (float, float)
        ``(q0, p0)``.

    Even sample counts are handled with the symmetric (cosine) convention
    for the Nyquist mode.
    """

    def __init__(self, samples, periods, origin=(0.0, 0.0), hermitian: bool = False):
        self.samples = np.asarray(samples, dtype=complex)
        self.coeffs = np.fft.fft2(self.samples, axes=(0, 1)) / np.prod(self.samples.shape[:2])
        self.periods = tuple(float(x) for x in periods)
        self.origin = tuple(float(x) for x in origin)
        self.shape = self.samples.shape[2:]
        self.hermitian = hermitian

    @classmethod
    def from_function(cls, fn, resolution, periods, origin=(0.0, 0.0), hermitian=False):
        nq, np_ = resolution
        q = origin[0] + periods[0] * np.arange(nq) / nq
        p = origin[1] + periods[1] * np.arange(np_) / np_
        Q, P = np.meshgrid(q, p, indexing="ij")
        return cls(fn(np.stack([Q, P], axis=-1)), periods, origin, hermitian)

    @staticmethod
    def _basis(x, n, period, origin):
        k = np.fft.fftfreq(n, d=1.0 / n)
        phase = 2j * np.pi * np.multiply.outer(x - origin, k) / period
        B = np.exp(phase)
        if n % 2 == 0:
            B[..., n // 2] = np.cos(phase[..., n // 2].imag)
        return B

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        nq, np_ = self.coeffs.shape[:2]
        Bq = self._basis(z[..., 0], nq, self.periods[0], self.origin[0])
        Bp = self._basis(z[..., 1], np_, self.periods[1], self.origin[1])
        return np.einsum("...a,abij,...b->...ij", Bq, self.coeffs, Bp, optimize=True)

    def tail(self) -> float:
        """Largest coefficient magnitude in the outer quarter of modes (resolution check)."""
        c = np.abs(self.coeffs).max(axis=(2, 3))
        nq, np_ = c.shape
        kq = np.abs(np.fft.fftfreq(nq, 1.0 / nq))[:, None]
        kp = np.abs(np.fft.fftfreq(np_, 1.0 / np_))[None, :]
        outer = (kq >= nq // 4) | (kp >= np_ // 4)
        return float(c[outer].max())


def fourier_multiplier(fn, grid: Grid1D) -> DenseOp:
    """``fn(-i eps d/dx)`` (scalar ``fn``) tensored with the fiber identity."""
    n = grid.n_points
    k = np.fft.fftfreq(n, d=1.0 / n)
    F = np.fft.fft(np.eye(n), axis=0)
    mult = (F.conj().T * fn(grid.dp * k)) @ F / n
    return DenseOp(grid, np.kron(mult, np.eye(grid.m_fiber)))


# --------------------------------------------------------------------------
# Dynamics and projections


def propagate(H: DenseOp, psi: WaveFn, s: float, norm_tol: float = 1e-12) -> WaveFn:
    """``exp(-i H s) psi``; pass ``s = t / eps`` for macroscopic time ``t``."""
    out = H.exp(s) @ psi
    drift = abs(out.norm - psi.norm)
    if drift > norm_tol * max(1.0, psi.norm):
        raise NumericError(f"propagation changed the norm by {drift:.2e}")
    return out


def project_spectral(pi_hat: DenseOp, window=CLUSTER_WINDOW) -> DenseOp:
    """Spectral projector of ``pi_hat`` onto eigenvalues above one half.

    Raises :class:`ClusterViolation` if an eigenvalue falls in ``window``.
    """
    M = 0.5 * (pi_hat.matrix + pi_hat.matrix.conj().T)
    w, v = np.linalg.eigh(M)
    bad = (w > window[0]) & (w < window[1])
    if np.any(bad):
        raise ClusterViolation(
            f"{int(bad.sum())} eigenvalue(s) of the approximate projector lie in "
            f"[{window[0]}, {window[1]}]; decrease eps or raise the order")
    keep = v[:, w > 0.5]
    return DenseOp(pi_hat.grid, keep @ keep.conj().T, hermitian=True)


def _inv_sqrt_psd(M: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (M + M.conj().T))
    if np.min(w) <= 0:
        raise NumericError("matrix is not positive definite")
    return (v / np.sqrt(w)) @ v.conj().T


def unitarize(u_hat: DenseOp, Pi: DenseOp, Pi_r: DenseOp) -> DenseOp:
    """Polar-correct ``u_hat`` and rotate it so that ``U Pi U* = Pi_r`` exactly."""
    u = u_hat.matrix
    eye = np.eye(u.shape[0])
    gram = u.conj().T @ u
    if op_norm(gram - eye) >= 1:
        raise NumericError("u_hat is too far from unitary to be corrected")
    ut = u @ _inv_sqrt_psd(gram)
    P = ut @ Pi.matrix @ ut.conj().T
    W = nagy_transport(Pi_r.matrix, P)
    return DenseOp(u_hat.grid, W @ ut)


def leakage(H_hat: DenseOp, proj: DenseOp, time: float, mode: str = "microscopic") -> float:
    """``||(1 - proj) exp(-i H tau) proj||`` with ``tau = time`` or ``time / eps``."""
    if mode not in ("microscopic", "macroscopic"):
        raise ValueError("mode must be 'microscopic' or 'macroscopic'")
    tau = time if mode == "microscopic" else time / H_hat.grid.eps
    P = proj.matrix
    M = H_hat.exp(tau).matrix @ P
    return op_norm(M - P @ M)


def _as_op(A, grid, check_edges=True):
    if isinstance(A, DenseOp):
        return A
    return weyl_quantize(A, grid, check_edges=check_edges)


def egorov_error(h_hat: DenseOp, a0, a0_t, t: float, grid: Optional[Grid1D] = None,
                 check_edges: bool = True) -> float:
    """``||exp(i h t/eps) W(a0) exp(-i h t/eps) - W(a0(t))||`` at macroscopic ``t``.

    ``a0`` and ``a0_t`` are symbols or already quantized operators.
    """
    grid = grid or h_hat.grid
    U = h_hat.exp(t / grid.eps).matrix
    A0 = _as_op(a0, grid, check_edges).matrix
    At = _as_op(a0_t, grid, check_edges).matrix
    return op_norm(U.conj().T @ A0 @ U - At)


def effective_dynamics_error(H_hat: DenseOp, h_hat: DenseOp, u_hat: DenseOp, Pi: DenseOp,
                             s: float) -> float:
    """``||(exp(-i H s) - u* exp(-i h s) u) Pi||`` at microscopic ``s``."""
    u = u_hat.matrix
    lhs = H_hat.exp(s).matrix - u.conj().T @ h_hat.exp(s).matrix @ u
    return op_norm(lhs @ Pi.matrix)


# --------------------------------------------------------------------------
# Wigner transform


def wigner(psi: WaveFn) -> np.ndarray:
    """Matrix-valued Wigner function on :meth:`Grid1D.lattice_points`.

    Returns ``(2n, n, m, m)`` samples with ``<psi, W(a) psi> = sum Tr(a W) dq dp``
    exactly, where ``dq = dx / 2`` and ``dp = 2 pi eps / L``.
    """
    g = psi.grid
    n, m = g.n_points, g.m_fiber
    v = psi.values
    Wt = np.zeros((2 * n, n, m, m), dtype=complex)
    cols = np.arange(n)
    for r in range(-n // 2, n // 2):
        rows = (cols + r) % n
        outer = v[cols, :, None] * v[rows, None, :].conj()
        if r == -n // 2:
            Wt[(2 * cols + r) % (2 * n), r % n] += 0.5 * outer
            Wt[(2 * cols - r) % (2 * n), r % n] += 0.5 * outer
        else:
            Wt[(2 * cols + r) % (2 * n), r % n] += outer
    # sum_r Wt[s, r] exp(2 pi i k r / n), k in natural order
    W = np.fft.fftshift(np.fft.ifft(Wt, axis=1) * n, axes=1)
    dq, dp = 0.5 * g.dx, g.dp
    return W * (g.dx / (n * dq * dp))


def wigner_coarse(W: np.ndarray) -> np.ndarray:
    """Average half-grid samples onto the integer sites, shape ``(n, n, m, m)``.

    Even and odd midpoints carry ghost copies shifted by half the momentum
    period with opposite signs; the weights ``1/4, 1/2, 1/4`` cancel them.
    """
    even, odd = W[0::2], W[1::2]
    return 0.5 * even + 0.25 * (odd + np.roll(odd, 1, axis=0))


def wigner_peak(W: np.ndarray, grid: Grid1D) -> tuple:
    """Lattice point ``(q, p)`` of the largest coarse-grained ``Tr W``."""
    tr = np.einsum("skii->sk", wigner_coarse(W)).real
    j, k = np.unravel_index(np.argmax(tr), tr.shape)
    return float(grid.x[j]), float(grid.p[k])


def wigner_pairing(a_samples: np.ndarray, W: np.ndarray, grid: Grid1D) -> complex:
    """``sum Tr(a W) dq dp`` over the lattice."""
    return complex(np.einsum("skij,skji->", a_samples, W) * 0.5 * grid.dx * grid.dp)


# --------------------------------------------------------------------------
# Binary export

MAGIC = b"ADPT"
FORMAT_VERSION = 1
_DTYPES = {1: np.dtype("<c16"), 2: np.dtype("<f8")}


def write_binary(path, data: Union[np.ndarray, DenseOp, WaveFn]) -> None:
    """Write an array in the ADPT layout.

    Layout (little-endian): ``b"ADPT"``, version ``u32``, dtype code ``u32``
    (1 complex128, 2 float64), ``ndim`` ``u32``, ``ndim`` dimensions ``u64``,
    then the row-major payload.
    """
    if isinstance(data, DenseOp):
        arr = data.matrix
    elif isinstance(data, WaveFn):
        arr = data.values
    else:
        arr = np.asarray(data)
    code = 1 if np.iscomplexobj(arr) else 2
    arr = np.ascontiguousarray(arr, dtype=_DTYPES[code])
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, code, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes(order="C"))


def read_binary(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError("not an ADPT file")
        version, code, ndim = struct.unpack("<III", fh.read(12))
        if version != FORMAT_VERSION or code not in _DTYPES:
            raise ValueError(f"unsupported ADPT version {version} or dtype code {code}")
        shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
        data = np.frombuffer(fh.read(), dtype=_DTYPES[code])
    return data.reshape(shape).copy()
