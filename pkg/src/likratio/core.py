"""Grids, density fields and SPD covariance representations.

Everything downstream (solvers, likelihoods, moment formulas) passes data
around as :class:`DensityField` on a :class:`PeriodicGrid` and describes
Gaussian noise with one of the :class:`Covariance` variants.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

__all__ = [
    "InvalidArgument",
    "UnsupportedInput",
    "PeriodicGrid",
    "DensityField",
    "Covariance",
    "ScalarCovariance",
    "DiagonalCovariance",
    "FullCovariance",
    "make_grid",
    "wrap",
    "loewner_compare",
    "loewner_strictly_dominates",
    "weighted_norm_sq",
]

SYMMETRY_RTOL = 1e-12
STRICTNESS_RTOL = 1e-14


class InvalidArgument(ValueError):
    """Raised for arguments outside an operation's domain."""


class UnsupportedInput(ValueError):
    """Raised when an input variant is valid but not handled by an operation."""


@dataclass(frozen=True)
class PeriodicGrid:
    """Cell-centred grid on the periodic interval ``[0, length)``."""

    length: float
    cells: int

    def __post_init__(self):
        if not (math.isfinite(self.length) and self.length > 0):
            raise InvalidArgument(f"grid length must be positive, got {self.length}")
        if int(self.cells) != self.cells or self.cells < 1:
            raise InvalidArgument(f"grid needs at least one cell, got {self.cells}")
        object.__setattr__(self, "cells", int(self.cells))
        object.__setattr__(self, "length", float(self.length))

    @property
    def dx(self) -> float:
        return self.length / self.cells

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.cells) + 0.5) * self.dx

    def cell_index(self, x: np.ndarray) -> np.ndarray:
        """Index of the cell ``[n dx, (n+1) dx)`` holding each wrapped position."""
        idx = np.floor(np.asarray(x) * (self.cells / self.length)).astype(np.int64)
        return np.clip(idx, 0, self.cells - 1)


def make_grid(length: float, cells: int) -> PeriodicGrid:
    return PeriodicGrid(length, cells)


@dataclass(frozen=True)
class DensityField:
    """Values of a density at the cell centres of ``grid``."""

    grid: PeriodicGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.cells,):
            raise InvalidArgument(
                f"expected {self.grid.cells} values, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise InvalidArgument("density values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def mass(self) -> float:
        return float(np.sum(self.values) * self.grid.dx)

    def __eq__(self, other):
        if not isinstance(other, DensityField):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.values, other.values)

    __hash__ = None


def wrap(x: float, grid: PeriodicGrid | float) -> float:
    """Map ``x`` onto ``[0, L)``."""
    length = grid.length if isinstance(grid, PeriodicGrid) else float(grid)
    if not math.isfinite(x):
        raise InvalidArgument(f"cannot wrap non-finite position {x}")
    y = math.fmod(x, length)
    if y < 0:
        y += length
    # y + L can round up to L for tiny negative y
    return 0.0 if y >= length else y


def wrap_array(x: np.ndarray, length: float) -> np.ndarray:
    """Vectorised :func:`wrap`, in place when ``x`` is a float array."""
    np.mod(x, length, out=x)
    x[x >= length] = 0.0
    return x


# ---------------------------------------------------------------------------
# covariances


class Covariance:
    """A symmetric positive definite covariance matrix.

    Subclasses store the matrix in the cheapest form available. All of
    them answer ``solve``, ``logdet`` and ``sample`` without forming an
    explicit inverse.
    """

    dim: int

    def to_dense(self) -> np.ndarray:
        raise NotImplementedError

    def diagonal(self) -> np.ndarray:
        raise NotImplementedError

    def solve(self, v: np.ndarray) -> np.ndarray:
        """Return ``Q^{-1} v`` for a vector or a stack of column vectors."""
        raise NotImplementedError

    def logdet(self) -> float:
        raise NotImplementedError

    def scaled(self, c: float) -> "Covariance":
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Draws from ``N(0, Q)``; shape ``(dim,)`` or ``(size, dim)``."""
        raise NotImplementedError

    @property
    def is_diagonal(self) -> bool:
        return True

    def trace(self) -> float:
        return float(np.sum(self.diagonal()))

    def as_diagonal(self) -> "DiagonalCovariance":
        if not self.is_diagonal:
            raise UnsupportedInput("full covariance has no diagonal representation")
        return DiagonalCovariance(self.diagonal())

    def as_full(self) -> "FullCovariance":
        return FullCovariance(self.to_dense())

    def fingerprint(self) -> str:
        """Identity of the noise model: dimension, variant and content."""
        h = hashlib.sha1()
        h.update(type(self).__name__.encode())
        h.update(str(self.dim).encode())
        h.update(np.ascontiguousarray(self._content(), dtype=float).tobytes())
        return h.hexdigest()[:16]

    def _content(self) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class ScalarCovariance(Covariance):
    """``variance * I`` of dimension ``dim``."""

    variance: float
    dim: int

    def __post_init__(self):
        if not (math.isfinite(self.variance) and self.variance > 0):
            raise InvalidArgument(f"variance must be positive, got {self.variance}")
        if self.dim < 1:
            raise InvalidArgument("covariance dimension must be at least 1")

    def to_dense(self):
        return self.variance * np.eye(self.dim)

    def diagonal(self):
        return np.full(self.dim, self.variance)

    def solve(self, v):
        return np.asarray(v, dtype=float) / self.variance

    def logdet(self):
        return self.dim * math.log(self.variance)

    def scaled(self, c):
        return ScalarCovariance(self.variance * c, self.dim)

    def sample(self, rng, size=None):
        shape = (self.dim,) if size is None else (size, self.dim)
        return math.sqrt(self.variance) * rng.standard_normal(shape)

    def _content(self):
        return np.array([self.variance])


@dataclass(frozen=True, eq=False)
class DiagonalCovariance(Covariance):
    """``diag(d)`` with strictly positive entries."""

    d: np.ndarray

    def __post_init__(self):
        d = np.array(self.d, dtype=float).ravel()
        if d.size < 1 or not np.all(np.isfinite(d)) or np.any(d <= 0):
            raise InvalidArgument("diagonal covariance entries must be positive and finite")
        d.setflags(write=False)
        object.__setattr__(self, "d", d)

    @property
    def dim(self):
        return self.d.size

    def to_dense(self):
        return np.diag(self.d)

    def diagonal(self):
        return self.d.copy()

    def solve(self, v):
        v = np.asarray(v, dtype=float)
        return v / self.d if v.ndim == 1 else v / self.d[:, None]

    def logdet(self):
        return float(np.sum(np.log(self.d)))

    def scaled(self, c):
        return DiagonalCovariance(self.d * c)

    def sample(self, rng, size=None):
        shape = (self.dim,) if size is None else (size, self.dim)
        return np.sqrt(self.d) * rng.standard_normal(shape)

    def _content(self):
        return self.d


@dataclass(frozen=True, eq=False)
class FullCovariance(Covariance):
    """Dense SPD matrix, validated by a Cholesky factorization."""

    matrix: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        q = np.array(self.matrix, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1] or q.shape[0] < 1:
            raise InvalidArgument(f"covariance must be square, got shape {q.shape}")
        if not np.all(np.isfinite(q)):
            raise InvalidArgument("covariance entries must be finite")
        scale = np.linalg.norm(q)
        if np.max(np.abs(q - q.T)) > SYMMETRY_RTOL * scale:
            raise InvalidArgument("covariance matrix is not symmetric")
        q = 0.5 * (q + q.T)
        try:
            chol = linalg.cholesky(q, lower=True)
        except linalg.LinAlgError as exc:
            raise InvalidArgument("covariance matrix is not positive definite") from exc
        if np.any(np.diag(chol) <= 0):
            raise InvalidArgument("covariance matrix is not positive definite")
        q.setflags(write=False)
        object.__setattr__(self, "matrix", q)
        object.__setattr__(self, "_chol", chol)

    @property
    def dim(self):
        return self.matrix.shape[0]

    @property
    def is_diagonal(self):
        return False

    def to_dense(self):
        return self.matrix.copy()

    def diagonal(self):
        return np.diag(self.matrix).copy()

    def solve(self, v):
        return linalg.cho_solve((self._chol, True), np.asarray(v, dtype=float))

    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self._chol))))

    def scaled(self, c):
        return FullCovariance(self.matrix * c)

    def sample(self, rng, size=None):
        shape = (self.dim,) if size is None else (size, self.dim)
        z = rng.standard_normal(shape)
        return z @ self._chol.T

    def _content(self):
        return self.matrix


def covariance_from_dense(q: np.ndarray) -> Covariance:
    return FullCovariance(q)


def _check_same_dim(a: Covariance, b: Covariance):
    if a.dim != b.dim:
        raise InvalidArgument(f"dimension mismatch: {a.dim} vs {b.dim}")


def loewner_compare(a: Covariance, b: Covariance) -> tuple[bool, bool]:
    """Decide ``a - b`` strictly positive definite.

    Returns ``(strict, boundary)``. ``strict`` requires every pivot of the
    factorization of ``a - b`` to exceed ``1e-14 * trace(a)``; ``boundary``
    flags a difference that fails the strict test but is positive
    semidefinite within that margin.
    """
    _check_same_dim(a, b)
    tol = STRICTNESS_RTOL * a.trace()
    if a.is_diagonal and b.is_diagonal:
        d = a.diagonal() - b.diagonal()
        strict = bool(np.all(d > tol))
        return strict, (not strict) and bool(np.all(d > -tol))
    diff = a.to_dense() - b.to_dense()
    diff = 0.5 * (diff + diff.T)
    strict = _min_cholesky_pivot(diff) > tol
    if strict:
        return True, False
    return False, _min_cholesky_pivot(diff + 2 * tol * np.eye(a.dim)) > 0


def _min_cholesky_pivot(m: np.ndarray) -> float:
    try:
        chol = np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        return -math.inf
    return float(np.min(np.diag(chol)) ** 2)


def loewner_strictly_dominates(a: Covariance, b: Covariance) -> bool:
    """``True`` iff ``a - b`` is strictly positive definite."""
    return loewner_compare(a, b)[0]


def weighted_norm_sq(v: np.ndarray, q: Covariance) -> float:
    """``v^T Q^{-1} v`` via an SPD solve."""
    v = np.asarray(v, dtype=float)
    if v.shape != (q.dim,):
        raise InvalidArgument(f"vector of shape {v.shape} does not match dimension {q.dim}")
    return max(float(v @ q.solve(v)), 0.0)
