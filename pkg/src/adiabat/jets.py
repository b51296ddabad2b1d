"""Truncated multivariate Taylor jets of matrix-valued functions.

A jet of order ``K`` at a phase-space point stores every Taylor coefficient
``c_g = d^g A / g!`` with total degree ``|g| <= K``.  The variables are ordered
``(q_1, ..., q_d, p_1, ..., p_d)``.  Coefficients are kept in an array of shape
``(M, *batch, rows, cols)`` so that a whole set of phase-space points can be
processed by one call; ``M`` is the number of multi-indices.

Products follow the Leibniz rule and are exact up to the truncation order, so
identities that hold for smooth functions also hold for their jets to
round-off.
"""
from __future__ import annotations

from functools import lru_cache
from itertools import product as iproduct
from math import factorial, prod

import numpy as np


@lru_cache(maxsize=None)
def _multi_indices(nvar: int, order: int) -> tuple:
    """Multi-indices of total degree <= order, graded then lexicographic."""
    out = []
    for m in range(order + 1):
        level = []
        for idx in iproduct(range(m + 1), repeat=nvar):
            if sum(idx) == m:
                level.append(idx)
        level.sort(reverse=True)
        out.extend(level)
    return tuple(out)


class IndexTable:
    """Bookkeeping for multi-indices of ``nvar`` variables up to ``order``."""

    def __init__(self, nvar: int, order: int):
        self.nvar = nvar
        self.order = order
        self.indices = _multi_indices(nvar, order)
        self.position = {g: i for i, g in enumerate(self.indices)}
        self.degree = np.array([sum(g) for g in self.indices], dtype=int)
        self.size = len(self.indices)
        # prefix length for every truncation order
        self.count = [int(np.sum(self.degree <= k)) for k in range(order + 1)]
        self.factorial = np.array([prod(factorial(x) for x in g) for g in self.indices],
                                  dtype=float)
        first, second, target = [], [], []
        for i, a in enumerate(self.indices):
            for j, b in enumerate(self.indices):
                if self.degree[i] + self.degree[j] <= order:
                    first.append(i)
                    second.append(j)
                    target.append(self.position[tuple(x + y for x, y in zip(a, b))])
        self.pair_first = np.array(first, dtype=int)
        self.pair_second = np.array(second, dtype=int)
        self.pair_target = np.array(target, dtype=int)
        # dense scatter matrix: coefficient k collects pairs with target k
        scatter = np.zeros((self.size, len(target)))
        scatter[target, np.arange(len(target))] = 1.0
        self.scatter = scatter
        self._shift_cache = {}

    def shift(self, gamma: tuple, new_order: int):
        """Index map for d^gamma: returns (source index, factor) per target."""
        key = (gamma, new_order)
        if key not in self._shift_cache:
            src, fac = [], []
            for nu in self.indices[: self.count[new_order]]:
                full = tuple(a + b for a, b in zip(nu, gamma))
                src.append(self.position[full])
                f = 1.0
                for a, b in zip(nu, gamma):
                    f *= factorial(a + b) / factorial(a)
                fac.append(f)
            self._shift_cache[key] = (np.array(src, dtype=int), np.array(fac))
        return self._shift_cache[key]


@lru_cache(maxsize=None)
def index_table(nvar: int, order: int) -> IndexTable:
    return IndexTable(nvar, order)


class Jet:
    """Taylor jet of a matrix-valued function at one or many points.

    Parameters
    ----------
    coeffs : ndarray
        Taylor coefficients, shape ``(M, *batch, rows, cols)``.
    nvar : int
        Number of phase-space variables (``2 d``).
    order : int
        Truncation order ``K``.
    center : ndarray, optional
        The expansion point(s), shape ``(*batch, nvar)``.
    """

    __array_priority__ = 100

    def __init__(self, coeffs, nvar: int, order: int, center=None):
        self.table = index_table(nvar, order)
        coeffs = np.asarray(coeffs)
        if coeffs.shape[0] != self.table.size:
            raise ValueError(f"expected {self.table.size} coefficients, got {coeffs.shape[0]}")
        self.coeffs = coeffs
        self.nvar = nvar
        self.order = order
        self.center = center

    # -- construction -----------------------------------------------------
    @classmethod
    def constant(cls, value, nvar, order, center=None):
        value = np.asarray(value, dtype=complex)
        table = index_table(nvar, order)
        coeffs = np.zeros((table.size,) + value.shape, dtype=complex)
        coeffs[0] = value
        return cls(coeffs, nvar, order, center)

    @classmethod
    def from_derivatives(cls, derivs: dict, nvar: int, order: int, center=None):
        """Build a jet from a mapping ``multi-index -> d^g A``."""
        table = index_table(nvar, order)
        sample = np.asarray(derivs[(0,) * nvar])
        coeffs = np.zeros((table.size,) + sample.shape, dtype=complex)
        for g, val in derivs.items():
            if sum(g) <= order:
                i = table.position[tuple(g)]
                coeffs[i] = np.asarray(val) / table.factorial[i]
        return cls(coeffs, nvar, order, center)

    # -- access -----------------------------------------------------------
    @property
    def value(self):
        return self.coeffs[0]

    @property
    def shape(self):
        return self.coeffs.shape[-2:]

    @property
    def batch_shape(self):
        return self.coeffs.shape[1:-2]

    def derivative_value(self, gamma) -> np.ndarray:
        """Return the partial derivative ``d^gamma A`` at the center."""
        i = self.table.position[tuple(gamma)]
        return self.coeffs[i] * self.table.factorial[i]

    def as_dict(self) -> dict:
        return {g: self.derivative_value(g) for g in self.table.indices}

    def truncate(self, order: int) -> "Jet":
        if order > self.order:
            raise ValueError("cannot raise the order of a jet")
        if order == self.order:
            return self
        return Jet(self.coeffs[: self.table.count[order]], self.nvar, order, self.center)

    def derivative(self, gamma) -> "Jet":
        """Jet of ``d^gamma A`` with order reduced by ``|gamma|``."""
        gamma = tuple(gamma)
        m = sum(gamma)
        if m == 0:
            return self
        if m > self.order:
            raise ValueError("derivative exceeds jet order")
        src, fac = self.table.shift(gamma, self.order - m)
        fac = fac.reshape((-1,) + (1,) * (self.coeffs.ndim - 1))
        return Jet(self.coeffs[src] * fac, self.nvar, self.order - m, self.center)

    # -- algebra ----------------------------------------------------------
    def _aligned(self, other: "Jet"):
        k = min(self.order, other.order)
        return self.truncate(k), other.truncate(k), k

    def __add__(self, other):
        if isinstance(other, Jet):
            a, b, k = self._aligned(other)
            return Jet(a.coeffs + b.coeffs, self.nvar, k, self.center)
        out = self.coeffs.copy().astype(np.result_type(self.coeffs, other, complex))
        out[0] = out[0] + other
        return Jet(out, self.nvar, self.order, self.center)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.coeffs, self.nvar, self.order, self.center)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, scalar):
        if isinstance(scalar, Jet):
            return self.matmul(scalar, elementwise=True)
        return Jet(self.coeffs * scalar, self.nvar, self.order, self.center)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return Jet(self.coeffs / scalar, self.nvar, self.order, self.center)

    def matmul(self, other: "Jet", elementwise: bool = False) -> "Jet":
        """Leibniz product truncated at the common order.

        A ``1 x 1`` factor is treated as a scalar function and broadcast.
        """
        if not isinstance(other, Jet):
            other = np.asarray(other)
            return Jet(self.coeffs @ other, self.nvar, self.order, self.center)
        a, b, k = self._aligned(other)
        t = index_table(self.nvar, k)
        x = a.coeffs[t.pair_first]
        y = b.coeffs[t.pair_second]
        if elementwise or a.shape == (1, 1) or b.shape == (1, 1):
            pairs = x * y
        else:
            pairs = x @ y
        flat = pairs.reshape(pairs.shape[0], -1)
        out = (t.scatter @ flat).reshape((t.size,) + pairs.shape[1:])
        return Jet(out, self.nvar, k, self.center)

    def __matmul__(self, other):
        return self.matmul(other)

    def __rmatmul__(self, other):
        other = np.asarray(other)
        return Jet(other @ self.coeffs, self.nvar, self.order, self.center)

    @property
    def H(self) -> "Jet":
        """Pointwise adjoint (conjugate transpose of every coefficient)."""
        return Jet(np.conj(np.swapaxes(self.coeffs, -1, -2)), self.nvar, self.order, self.center)

    def trace(self) -> "Jet":
        tr = np.trace(self.coeffs, axis1=-2, axis2=-1)[..., None, None]
        return Jet(tr, self.nvar, self.order, self.center)

    def inv(self) -> "Jet":
        """Jet of the pointwise matrix inverse."""
        t = self.table
        x0 = np.linalg.inv(self.coeffs[0])
        out = np.zeros_like(self.coeffs, dtype=np.result_type(self.coeffs, complex))
        out[0] = x0
        return Jet(_recursive_solve(self.coeffs, out, t, lambda s: -x0 @ s), self.nvar,
                   self.order, self.center)

    def power_series(self, coefficients) -> "Jet":
        """Evaluate ``sum_k a_k X^k`` for a jet ``X`` with vanishing value."""
        result = Jet.constant(coefficients[0] * np.broadcast_to(
            np.eye(self.shape[0]), self.coeffs.shape[1:]), self.nvar, self.order, self.center)
        term = None
        for a in coefficients[1:]:
            term = self if term is None else term @ self
            result = result + a * term
        return result


def _recursive_solve(lhs, out, table, solve):
    """Fill ``out`` degree by degree for equations ``L_0 X_g = -sum' L_mu X_nu``.

    ``solve`` maps the accumulated right-hand side ``sum' L_mu X_nu`` (over
    ``mu + nu = g`` with ``mu != 0``) to ``X_g``.
    """
    first, second, target = table.pair_first, table.pair_second, table.pair_target
    for m in range(1, table.order + 1):
        for gi in range(table.count[m - 1], table.count[m]):
            sel = (target == gi) & (first != 0)
            acc = np.einsum("k...ij,k...jl->...il", lhs[first[sel]], out[second[sel]])
            out[gi] = solve(acc)
    return out


def jet_poisson(a: Jet, b: Jet, d: int) -> Jet:
    """Poisson bracket ``sum_j d_pj A d_qj B - d_qj A d_pj B`` on jets.

    The result has order ``min(a.order, b.order) - 1``.
    """
    out = None
    for j in range(d):
        eq = tuple(1 if i == j else 0 for i in range(2 * d))
        ep = tuple(1 if i == d + j else 0 for i in range(2 * d))
        term = a.derivative(ep) @ b.derivative(eq) - a.derivative(eq) @ b.derivative(ep)
        out = term if out is None else out + term
    return out


def inverse_sqrt_coefficients(n_terms: int):
    """Binomial coefficients of ``(1 - x)^(-1/2) = sum_k c_k x^k``."""
    return [factorial(2 * k) / (4 ** k * factorial(k) ** 2) for k in range(n_terms)]


# --------------------------------------------------------------------------
# Scalar jets and elementary functions
#
# Scalar jets are jets of shape (1, 1).  The helpers below let model code be
# written once and evaluated either on plain arrays or on jets, which yields
# exact Taylor data for the shipped models.


def coordinate_jet(z: np.ndarray, i: int, order: int) -> Jet:
    """Jet of the ``i``-th phase-space coordinate at the points ``z``."""
    nvar = z.shape[-1]
    table = index_table(nvar, order)
    coeffs = np.zeros((table.size,) + z.shape[:-1] + (1, 1), dtype=complex)
    coeffs[0, ..., 0, 0] = z[..., i]
    if order >= 1:
        unit = tuple(1 if k == i else 0 for k in range(nvar))
        coeffs[table.position[unit]] = 1.0
    return Jet(coeffs, nvar, order, z)


def apply_scalar(x: Jet, derivs: np.ndarray) -> Jet:
    """Compose a scalar function with a scalar jet.

    ``derivs[m]`` holds ``f^(m)(x0)`` for ``m = 0..order`` at every batch
    point, where ``x0`` is the value of ``x``.
    """
    delta = Jet(x.coeffs.copy(), x.nvar, x.order, x.center)
    delta.coeffs[0] = 0.0
    out = np.zeros_like(x.coeffs, dtype=complex)
    out[0] = derivs[0][..., None, None]
    power = None
    for m in range(1, x.order + 1):
        power = delta if power is None else power * delta
        out = out + power.coeffs * (derivs[m] / factorial(m))[None, ..., None, None]
    return Jet(out, x.nvar, x.order, x.center)


def _real_value(x: Jet) -> np.ndarray:
    return x.coeffs[0, ..., 0, 0].real


def _sin_derivs(x0, order):
    return np.array([np.sin(x0 + m * np.pi / 2) for m in range(order + 1)])


def _cos_derivs(x0, order):
    return np.array([np.cos(x0 + m * np.pi / 2) for m in range(order + 1)])


def _tanh_derivs(x0, order):
    c = [np.tanh(x0)]
    for k in range(order):
        s = sum(c[j] * c[k - j] for j in range(k + 1))
        c.append(((1.0 if k == 0 else 0.0) - s) / (k + 1))
    return np.array([factorial(m) * c[m] for m in range(order + 1)])


def _power_derivs(x0, order, a):
    out, coef = [], 1.0
    for m in range(order + 1):
        out.append(coef * x0 ** (a - m))
        coef *= a - m
    return np.array(out)


class _Functions:
    """Elementary functions acting on arrays or scalar jets alike."""

    @staticmethod
    def sin(x):
        if isinstance(x, Jet):
            return apply_scalar(x, _sin_derivs(_real_value(x), x.order))
        return np.sin(x)

    @staticmethod
    def cos(x):
        if isinstance(x, Jet):
            return apply_scalar(x, _cos_derivs(_real_value(x), x.order))
        return np.cos(x)

    @staticmethod
    def tanh(x):
        if isinstance(x, Jet):
            return apply_scalar(x, _tanh_derivs(_real_value(x), x.order))
        return np.tanh(x)

    @staticmethod
    def exp(x):
        if isinstance(x, Jet):
            v = np.exp(_real_value(x))
            return apply_scalar(x, np.array([v] * (x.order + 1)))
        return np.exp(x)

    @staticmethod
    def power(x, a):
        if isinstance(x, Jet):
            return apply_scalar(x, _power_derivs(_real_value(x), x.order, a))
        return np.power(x, a)

    @classmethod
    def sqrt(cls, x):
        return cls.power(x, 0.5)

    @classmethod
    def recip(cls, x):
        return cls.power(x, -1.0)

    @staticmethod
    def expi(x):
        """``exp(i x)`` for real ``x``."""
        if isinstance(x, Jet):
            v = np.exp(1j * _real_value(x))
            return apply_scalar(x, np.array([(1j) ** m * v for m in range(x.order + 1)]))
        return np.exp(1j * x)

    @staticmethod
    def matrix(rows, like=None):
        """Assemble a matrix from scalar entries (arrays, jets or numbers)."""
        flat = [e for r in rows for e in r]
        jet = next((e for e in flat if isinstance(e, Jet)), None)
        if jet is None:
            arrs = np.broadcast_arrays(*[np.asarray(e, dtype=complex) for e in flat])
            shape = arrs[0].shape
            out = np.stack(arrs, axis=-1).reshape(shape + (len(rows), len(rows[0])))
            return out
        cols = len(rows[0])
        base = jet.coeffs.shape[:-2]
        coeffs = np.zeros(base + (len(rows), cols), dtype=complex)
        for i, r in enumerate(rows):
            for k, e in enumerate(r):
                if isinstance(e, Jet):
                    coeffs[..., i, k] = e.truncate(jet.order).coeffs[..., 0, 0] \
                        if e.order > jet.order else e.coeffs[..., 0, 0]
                else:
                    coeffs[0, ..., i, k] = e
        return Jet(coeffs, jet.nvar, jet.order, jet.center)


F = _Functions()
