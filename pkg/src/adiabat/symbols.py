"""Matrix-valued phase-space symbols and the truncated Moyal algebra.

Every symbol answers two queries: its value at a batch of phase-space points
and its Taylor jet of a given order there.  Base symbols are defined by an
evaluator, optionally with an analytic jet; otherwise jets come from central
finite differences.  Composite symbols (products, Moyal terms, spectral
quantities, ...) compute their jets from the jets of their inputs, which makes
all algebraic identities between them exact up to round-off.

Points are arrays of shape ``(..., 2 d)`` ordered ``(q_1..q_d, p_1..p_d)``.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from collections import OrderedDict
from dataclasses import dataclass
from itertools import product as iproduct
from math import comb, factorial, prod
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import CapabilityError, DimensionError, NumericError
from .jets import Jet, coordinate_jet, index_table, jet_poisson

FD_BASE_STEP = 1e-4
FD_STEP_GROWTH = 3.0

_cache_state = {"enabled": True}
_fd_state = {"scale": 1.0}


def set_jet_cache(enabled: bool) -> None:
    """Globally enable or disable per-symbol jet caching."""
    _cache_state["enabled"] = bool(enabled)


@dataclass(frozen=True)
class PhasePoint:
    """A point ``(q, p)`` of phase space ``R^{2d}``."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        if q.shape != p.shape or q.ndim != 1 or q.size < 1:
            raise DimensionError("q and p must be vectors of equal length >= 1")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise NumericError("phase-space point has non-finite entries")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def d(self) -> int:
        return self.q.size

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.q, self.p])

    @classmethod
    def from_array(cls, z) -> "PhasePoint":
        z = np.asarray(z, dtype=float)
        d = z.size // 2
        return cls(z[:d], z[d:])


def as_points(z) -> np.ndarray:
    """Normalize a PhasePoint or array to a float array ``(..., 2d)``."""
    if isinstance(z, PhasePoint):
        return z.as_array()
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise NumericError("phase-space point has non-finite entries")
    return z


def fd_stencil(nvar: int, order: int, h0: float = FD_BASE_STEP, growth: float = FD_STEP_GROWTH):
    """Offsets and weights of central differences for all ``|g| <= order``.

    Returns a list of ``(gamma, offsets (S, nvar), weights (S,))``.  The step
    for derivatives of total order ``m`` is ``h0 * growth**m``; each
    directional derivative of order ``k`` uses the ``k + 1`` point central
    formula on a symmetric (possibly half-integer) stencil.  That error is
    even in ``h``, so one Richardson step with ``h`` and ``h/2`` gives
    ``O(h^4)``.
    """
    out = []
    table = index_table(nvar, order)
    for gamma in table.indices[1:]:
        m = sum(gamma)
        h = h0 * growth ** m
        offs, wts = [], []
        for step, scale in ((h, -1.0 / 3.0), (h / 2, 4.0 / 3.0)):
            axes = [[((k / 2.0 - j) * step, (-1) ** j * comb(k, j)) for j in range(k + 1)]
                    for k in gamma]
            for combo in iproduct(*axes):
                offs.append([c[0] for c in combo])
                wts.append(scale * prod(c[1] for c in combo) / step ** m)
        out.append((gamma, np.array(offs), np.array(wts)))
    return out


@contextmanager
def fd_step_scale(factor: float):
    """Temporarily multiply every finite-difference step by ``factor``."""
    old = _fd_state["scale"]
    _fd_state["scale"] = old * float(factor)
    try:
        yield
    finally:
        _fd_state["scale"] = old


class MatrixSymbol:
    """A smooth map from phase space to complex matrices.

    Subclasses implement ``_compute_jet``.  The public :meth:`jet` adds an
    optional cache keyed by the exact bits of the points; results never
    depend on whether the cache is used.
    """

    is_zero = False
    __array_ufunc__ = None

    def __init__(self, d: int, shape, hermitian: bool = False, max_jet_order: int = 4,
                 name: str = ""):
        self.d = int(d)
        self.shape = tuple(shape)
        self.hermitian = bool(hermitian)
        self.max_jet_order = int(max_jet_order)
        self.name = name or type(self).__name__
        self._cache: "OrderedDict[tuple, Jet]" = OrderedDict()
        self._lock = threading.Lock()

    @property
    def n(self) -> int:
        return self.shape[0]

    @property
    def nvar(self) -> int:
        return 2 * self.d

    def __repr__(self):
        return f"<{self.name} d={self.d} shape={self.shape}>"

    def __call__(self, z) -> np.ndarray:
        return self.jet(z, 0).value

    def jet(self, z, K: int) -> Jet:
        """Jet of order ``K`` at the point(s) ``z``."""
        if K > self.max_jet_order:
            raise CapabilityError(f"{self.name}: jet order {K} exceeds supported "
                                  f"{self.max_jet_order}")
        z = as_points(z)
        if z.shape[-1] != self.nvar:
            raise DimensionError(f"{self.name}: expected points with {self.nvar} coordinates")
        if not _cache_state["enabled"]:
            return self._compute_jet(z, K)
        key = (z.shape, z.tobytes(), _fd_state["scale"])
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None and hit.order >= K:
            return hit.truncate(K)
        out = self._compute_jet(z, K)
        with self._lock:
            self._cache[key] = out
            self._cache.move_to_end(key)
            while len(self._cache) > 6:
                self._cache.popitem(last=False)
        return out

    def _compute_jet(self, z, K) -> Jet:
        raise NotImplementedError

    # -- algebra helpers ---------------------------------------------------
    def __add__(self, other):
        return combine([self, as_symbol(other, self)], lambda j: j[0] + j[1], name="sum")

    __radd__ = __add__

    def __sub__(self, other):
        return combine([self, as_symbol(other, self)], lambda j: j[0] - j[1], name="difference")

    def __rsub__(self, other):
        return combine([as_symbol(other, self), self], lambda j: j[0] - j[1], name="difference")

    def __neg__(self):
        return combine([self], lambda j: -j[0], name="negation")

    def __mul__(self, scalar):
        if isinstance(scalar, MatrixSymbol):
            shape = np.broadcast_shapes(self.shape, scalar.shape)
            return combine([self, scalar], lambda j: j[0] * j[1], name="scalar product",
                           shape=shape)
        return combine([self], lambda j: j[0] * scalar, name="scaled")

    __rmul__ = __mul__

    def __matmul__(self, other):
        other = as_symbol(other, self)
        return combine([self, other], lambda j: j[0] @ j[1], name="product",
                       shape=(self.shape[0], other.shape[1]))

    def __rmatmul__(self, other):
        other = as_symbol(other, self)
        return other @ self

    @property
    def H(self) -> "MatrixSymbol":
        return combine([self], lambda j: j[0].H, name="adjoint", shape=self.shape[::-1],
                       hermitian=self.hermitian)

    def check_hermitian(self, samples, tol: float = 1e-10) -> float:
        """Largest ``|A - A*|`` over the samples; raises if above ``tol``."""
        vals = self(samples)
        dev = float(np.max(np.abs(vals - np.conj(np.swapaxes(vals, -1, -2)))))
        if dev > tol * max(1.0, float(np.max(np.abs(vals)))):
            raise NumericError(f"{self.name}: not hermitian (deviation {dev:.2e})")
        return dev


class FunctionSymbol(MatrixSymbol):
    """Symbol defined by a vectorized evaluator ``z -> matrix``.

    Parameters
    ----------
    evaluator : callable
        Maps points ``(..., 2d)`` to matrices ``(..., r, c)``.
    d : int
        Half-dimension of phase space.
    shape : tuple
        Matrix shape.
    jet_fn : callable, optional
        Analytic jet ``(z, K) -> Jet``.  Used instead of finite differences.
    """

    def __init__(self, evaluator: Callable, d: int, shape, hermitian: bool = False,
                 jet_fn: Optional[Callable] = None, max_jet_order: int = 4, name: str = "",
                 fd_step: float = FD_BASE_STEP):
        super().__init__(d, shape, hermitian, max_jet_order, name)
        self.evaluator = evaluator
        self.jet_fn = jet_fn
        self.fd_step = fd_step

    def _evaluate(self, z):
        out = np.asarray(self.evaluator(z), dtype=complex)
        if out.shape != z.shape[:-1] + self.shape:
            raise DimensionError(f"{self.name}: evaluator returned shape {out.shape}")
        if not np.all(np.isfinite(out)):
            raise NumericError(f"{self.name}: non-finite evaluation")
        return out

    def _compute_jet(self, z, K):
        if self.jet_fn is not None:
            return self.jet_fn(z, K)
        value = self._evaluate(z)
        table = index_table(self.nvar, K)
        coeffs = np.zeros((table.size,) + value.shape, dtype=complex)
        coeffs[0] = value
        if K > 0:
            stencil = fd_stencil(self.nvar, K, self.fd_step * _fd_state["scale"])
            offsets = np.concatenate([s[1] for s in stencil])
            pts = z[None, ...] + offsets.reshape((-1,) + (1,) * (z.ndim - 1) + (self.nvar,))
            vals = self._evaluate(pts)
            start = 0
            for gamma, offs, wts in stencil:
                block = vals[start:start + len(wts)]
                start += len(wts)
                i = table.position[gamma]
                coeffs[i] = np.tensordot(wts, block, axes=1) / table.factorial[i]
        return Jet(coeffs, self.nvar, K, z)


class SmoothSymbol(FunctionSymbol):
    """Symbol written once for arrays and jets, giving exact Taylor data.

    ``fn(coords)`` receives the ``2d`` coordinates ``(q_1..q_d, p_1..p_d)``,
    each either an array or a scalar :class:`Jet`, and must build its result
    with the functions in :data:`adiabat.jets.F`.
    """

    def __init__(self, fn: Callable, d: int, shape, hermitian: bool = False,
                 max_jet_order: int = 8, name: str = ""):
        self.fn = fn

        def evaluator(z):
            return fn([z[..., i] for i in range(2 * d)])

        def jet_fn(z, K):
            out = fn([coordinate_jet(z, i, K) for i in range(2 * d)])
            if not isinstance(out, Jet):
                out = Jet.constant(np.broadcast_to(out, z.shape[:-1] + tuple(shape)), 2 * d, K, z)
            return out

        super().__init__(evaluator, d, shape, hermitian, jet_fn=jet_fn,
                         max_jet_order=max_jet_order, name=name)


class ConstantSymbol(MatrixSymbol):
    """A symbol independent of the phase-space point."""

    def __init__(self, matrix, d: int, name: str = "constant"):
        matrix = np.atleast_2d(np.asarray(matrix, dtype=complex))
        herm = matrix.shape[0] == matrix.shape[1] and np.allclose(matrix, matrix.conj().T)
        super().__init__(d, matrix.shape, herm, max_jet_order=64, name=name)
        self.matrix = matrix
        self.is_zero = not np.any(matrix)

    def _compute_jet(self, z, K):
        val = np.broadcast_to(self.matrix, z.shape[:-1] + self.shape)
        return Jet.constant(val, self.nvar, K, z)


def zero_symbol(d: int, shape) -> ConstantSymbol:
    return ConstantSymbol(np.zeros(shape, dtype=complex), d, name="zero")


def as_symbol(obj, like: MatrixSymbol) -> MatrixSymbol:
    if isinstance(obj, MatrixSymbol):
        if obj.d != like.d:
            raise DimensionError("phase-space dimensions differ")
        return obj
    arr = np.asarray(obj, dtype=complex)
    if arr.ndim == 0:
        arr = arr * np.eye(like.shape[0])
    return ConstantSymbol(arr, like.d)


class JetMap(MatrixSymbol):
    """Symbol whose jet is a function of the jets of other symbols.

    ``fn(jets, K)`` receives the input jets, where input ``i`` is evaluated
    at order ``K + extra[i]``, and returns a jet of order at least ``K``.
    """

    def __init__(self, inputs: Sequence[MatrixSymbol], fn: Callable, shape, extra=None,
                 hermitian: bool = False, name: str = "composite"):
        inputs = list(inputs)
        d = inputs[0].d
        for s in inputs:
            if s.d != d:
                raise DimensionError("inputs live on different phase spaces")
        extra = list(extra) if extra is not None else [0] * len(inputs)
        depth = min(s.max_jet_order - e for s, e in zip(inputs, extra))
        super().__init__(d, shape, hermitian, depth, name)
        self.inputs = inputs
        self.extra = extra
        self.fn = fn

    def _compute_jet(self, z, K):
        jets = [s.jet(z, K + e) for s, e in zip(self.inputs, self.extra)]
        out = self.fn(jets, K) if _wants_order(self.fn) else self.fn(jets)
        if out.order > K:
            out = out.truncate(K)
        return out


def _wants_order(fn) -> bool:
    return getattr(fn, "_wants_order", False)


def uses_order(fn):
    """Mark a JetMap function as taking ``(jets, K)``."""
    fn._wants_order = True
    return fn


def combine(inputs, fn, name="composite", shape=None, hermitian=False, extra=None) -> JetMap:
    inputs = list(inputs)
    if shape is None:
        shape = inputs[0].shape
    nonconst = [s for s in inputs if not isinstance(s, ConstantSymbol)]
    out = JetMap(inputs, fn, shape, extra=extra, hermitian=hermitian, name=name)
    out.is_zero = all(getattr(s, "is_zero", False) for s in inputs) and name in (
        "sum", "difference", "negation", "scaled", "product", "adjoint")
    if not nonconst:
        out.max_jet_order = 64
    return out


def derivative_symbol(A: MatrixSymbol, gamma) -> MatrixSymbol:
    """Symbol of the partial derivative ``d^gamma A``."""
    gamma = tuple(gamma)
    m = sum(gamma)
    return JetMap([A], lambda j: j[0].derivative(gamma), A.shape, extra=[m],
                  name=f"d{gamma} {A.name}")


class FormalSymbol:
    """A truncated series ``sum_{j<=N} eps^j A_j`` of matrix symbols."""

    def __init__(self, terms: Sequence[MatrixSymbol]):
        terms = list(terms)
        if not terms:
            raise ValueError("a formal symbol needs at least one term")
        d, shape = terms[0].d, terms[0].shape
        for t in terms:
            if t.d != d or t.shape != shape:
                raise DimensionError("terms of a formal symbol must share (d, shape)")
        self.terms = terms
        self.d = d
        self.shape = shape

    @property
    def N(self) -> int:
        return len(self.terms) - 1

    @property
    def n(self) -> int:
        return self.shape[0]

    def term(self, j: int) -> MatrixSymbol:
        if 0 <= j < len(self.terms):
            return self.terms[j]
        return zero_symbol(self.d, self.shape)

    def __getitem__(self, j):
        return self.term(j)

    def __len__(self):
        return len(self.terms)

    def truncate(self, N: int) -> "FormalSymbol":
        return FormalSymbol([self.term(j) for j in range(N + 1)])

    def extend(self, term: MatrixSymbol) -> "FormalSymbol":
        return FormalSymbol(self.terms + [term])

    @property
    def H(self) -> "FormalSymbol":
        return FormalSymbol([t.H for t in self.terms])

    def __add__(self, other: "FormalSymbol") -> "FormalSymbol":
        N = max(self.N, other.N)
        return FormalSymbol([self.term(j) + other.term(j) for j in range(N + 1)])

    def __sub__(self, other: "FormalSymbol") -> "FormalSymbol":
        N = max(self.N, other.N)
        return FormalSymbol([self.term(j) - other.term(j) for j in range(N + 1)])

    def __mul__(self, scalar) -> "FormalSymbol":
        return FormalSymbol([t * scalar for t in self.terms])

    __rmul__ = __mul__

    def evaluate(self, z, eps: float) -> np.ndarray:
        """Value of the truncated sum at a given ``eps``."""
        out = 0
        for j, t in enumerate(self.terms):
            if not t.is_zero:
                out = out + eps ** j * t(z)
        return out

    @classmethod
    def from_symbol(cls, A: MatrixSymbol, N: int = 0) -> "FormalSymbol":
        return cls([A] + [zero_symbol(A.d, A.shape) for _ in range(N)])


def as_formal(A) -> FormalSymbol:
    if isinstance(A, FormalSymbol):
        return A
    return FormalSymbol([A])


def poisson_bracket(A: MatrixSymbol, B: MatrixSymbol, z) -> np.ndarray:
    """Operator-valued Poisson bracket at ``z``.

    Computes ``sum_j dA/dp_j dB/dq_j - dA/dq_j dB/dp_j`` without
    antisymmetrization; for matrix symbols ``{A, B} != -{B, A}`` in general.
    """
    if A.d != B.d or A.shape[1] != B.shape[0]:
        raise DimensionError("poisson_bracket: incompatible symbols")
    return jet_poisson(A.jet(z, 1), B.jet(z, 1), A.d).value


def _moyal_pairs(d: int, m: int):
    """All ``(gamma_A, gamma_B, coefficient)`` with ``|alpha| + |beta| = m``."""
    out = []
    table = index_table(2 * d, m)
    for gamma in table.indices:
        if sum(gamma) != m:
            continue
        alpha, beta = gamma[:d], gamma[d:]
        fac = prod(factorial(x) for x in alpha) * prod(factorial(x) for x in beta)
        coeff = (2j) ** (-m) * (-1) ** sum(alpha) / fac
        out.append((tuple(alpha) + tuple(beta), tuple(beta) + tuple(alpha), coeff))
    return out


def moyal_term_jet(a_jets: dict, b_jets: dict, k: int, d: int, K: int) -> Optional[Jet]:
    """Order-``k`` Moyal coefficient from input jets.

    ``a_jets[j]`` must have order ``>= K + k - j`` and ``b_jets[l]`` order
    ``>= K + k - l``; missing keys are treated as zero.
    """
    out = None
    for j in range(k + 1):
        if j not in a_jets:
            continue
        for l in range(k + 1 - j):
            if l not in b_jets:
                continue
            m = k - j - l
            aj = a_jets[j].truncate(K + m) if a_jets[j].order > K + m else a_jets[j]
            bl = b_jets[l].truncate(K + m) if b_jets[l].order > K + m else b_jets[l]
            for ga, gb, c in _moyal_pairs(d, m):
                term = (aj.derivative(ga) @ bl.derivative(gb)) * c
                out = term if out is None else out + term
    return out


class MoyalTermSymbol(MatrixSymbol):
    """The order-``k`` coefficient ``(A # B)_k`` as a symbol in its own right."""

    def __init__(self, A: FormalSymbol, B: FormalSymbol, k: int):
        A, B = as_formal(A), as_formal(B)
        if A.d != B.d or A.shape[1] != B.shape[0]:
            raise DimensionError("moyal product of incompatible symbols")
        self.A, self.B, self.k = A, B, k
        self.a_idx = [j for j in range(min(k, A.N) + 1) if not A.term(j).is_zero]
        self.b_idx = [l for l in range(min(k, B.N) + 1) if not B.term(l).is_zero]
        depth = 64
        for j in self.a_idx:
            depth = min(depth, A.term(j).max_jet_order - (k - j))
        for l in self.b_idx:
            depth = min(depth, B.term(l).max_jet_order - (k - l))
        super().__init__(A.d, (A.shape[0], B.shape[1]), False, depth,
                         name=f"moyal{k}")
        self.is_zero = not any(j + l <= k for j in self.a_idx for l in self.b_idx)

    def _compute_jet(self, z, K):
        if self.is_zero:
            return Jet.constant(np.zeros(z.shape[:-1] + self.shape), self.nvar, K, z)
        a_jets, b_jets = {}, {}
        for j in self.a_idx:
            if any(j + l <= self.k for l in self.b_idx):
                a_jets[j] = self.A.term(j).jet(z, K + self.k - j)
        for l in self.b_idx:
            if any(j + l <= self.k for j in self.a_idx):
                b_jets[l] = self.B.term(l).jet(z, K + self.k - l)
        return moyal_term_jet(a_jets, b_jets, self.k, self.d, K)


def moyal_term(A, B, k: int, z) -> np.ndarray:
    """Value of ``(A # B)_k`` at the point(s) ``z``."""
    return MoyalTermSymbol(A, B, k)(z)


def moyal_mul(A, B, N: int) -> FormalSymbol:
    """Truncated Moyal product ``A # B`` through order ``N``."""
    return FormalSymbol([MoyalTermSymbol(A, B, k) for k in range(N + 1)])


def moyal_commutator(A, B, N: int) -> FormalSymbol:
    """``A # B - B # A`` through order ``N``."""
    return moyal_mul(A, B, N) - moyal_mul(B, A, N)


def polynomial_symbol(coefficients: dict, d: int, shape=None, name: str = "polynomial"):
    """Matrix polynomial ``sum_g C_g z^g`` with exact jets.

    Parameters
    ----------
    coefficients : dict
        Maps exponent tuples of length ``2d`` to coefficient matrices.
    """
    coefficients = {tuple(g): np.atleast_2d(np.asarray(c, dtype=complex))
                    for g, c in coefficients.items()}
    if shape is None:
        shape = next(iter(coefficients.values())).shape
    nvar = 2 * d
    degree = max(sum(g) for g in coefficients)

    def evaluate(z):
        out = np.zeros(z.shape[:-1] + tuple(shape), dtype=complex)
        for g, c in coefficients.items():
            mono = np.prod(z ** np.array(g), axis=-1)
            out = out + mono[..., None, None] * c
        return out

    def jet_fn(z, K):
        table = index_table(nvar, K)
        coeffs = np.zeros((table.size,) + z.shape[:-1] + tuple(shape), dtype=complex)
        for g, c in coefficients.items():
            # Taylor coefficient of z^g at the center for every nu <= g
            for i, nu in enumerate(table.indices):
                if any(a > b for a, b in zip(nu, g)):
                    continue
                w = np.prod([comb(b, a) for a, b in zip(nu, g)])
                powers = np.prod(z ** (np.array(g) - np.array(nu)), axis=-1)
                coeffs[i] = coeffs[i] + w * powers[..., None, None] * c
        return Jet(coeffs, nvar, K, z)

    herm = all(np.allclose(c, c.conj().T) for c in coefficients.values()) and \
        shape[0] == shape[1]
    sym = FunctionSymbol(evaluate, d, shape, hermitian=herm, jet_fn=jet_fn,
                         max_jet_order=64, name=name)
    sym.degree = degree
    return sym
