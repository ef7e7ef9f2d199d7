"""Deterministic solutions of the periodic diffusion equation.

Two solvers share the same initial conditions: a spectral formula that is
exact in time (used as an oracle) and a Crank-Nicolson finite-difference
scheme, which produces the synthetic observations.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    Covariance,
    DensityField,
    InvalidArgument,
    PeriodicGrid,
    UnsupportedInput,
)
from .rng import check_seed, stream

__all__ = [
    "CosineBump",
    "TabulatedDensity",
    "InitialCondition",
    "ReferenceConfig",
    "Observation",
    "CyclicTridiagonal",
    "exact_solution",
    "fd_solve",
    "synthesize_observation",
    "steps_for",
    "write_field_csv",
    "read_field_csv",
]


class InitialCondition:
    """A nonnegative unit-mass density on ``[0, L)``."""

    def density(self, x: np.ndarray, length: float) -> np.ndarray:
        raise NotImplementedError

    def envelope(self, length: float) -> float:
        """Upper bound of the density, for rejection sampling."""
        raise NotImplementedError

    def sampled_on(self, grid: PeriodicGrid) -> DensityField:
        return exact_solution(self, 0.0, 0.0, grid)


@dataclass(frozen=True)
class CosineBump(InitialCondition):
    """``(1 + cos(2 pi x / L)) / L``: a single Fourier mode above the mean."""

    def density(self, x, length):
        return (1.0 + np.cos(2 * np.pi * np.asarray(x) / length)) / length

    def envelope(self, length):
        return 2.0 / length


@dataclass(frozen=True, eq=False)
class TabulatedDensity(InitialCondition):
    """Piecewise-constant density given by cell values."""

    field: DensityField

    def __post_init__(self):
        values = self.field.values
        if np.any(values < 0):
            raise InvalidArgument("tabulated density must be nonnegative")
        mass = self.field.mass()
        if mass <= 0:
            raise InvalidArgument("tabulated density has zero mass")
        if abs(mass - 1.0) > 1e-10:
            raise InvalidArgument(f"tabulated density must integrate to 1, got {mass!r}")

    def density(self, x, length):
        self._check_length(length)
        return self.field.values[self.field.grid.cell_index(x)]

    def envelope(self, length):
        self._check_length(length)
        return float(np.max(self.field.values))

    def _check_length(self, length):
        if not math.isclose(length, self.field.grid.length, rel_tol=1e-12):
            raise InvalidArgument("tabulated density defined on a different domain length")


@dataclass(frozen=True)
class ReferenceConfig:
    D: float
    t: float
    dt: float
    grid: PeriodicGrid

    def __post_init__(self):
        if not self.D > 0:
            raise InvalidArgument(f"diffusion coefficient must be positive, got {self.D}")
        if not self.dt > 0:
            raise InvalidArgument(f"time step must be positive, got {self.dt}")
        steps_for(self.t, self.dt)

    @property
    def steps(self) -> int:
        return steps_for(self.t, self.dt)


def steps_for(t: float, dt: float) -> int:
    """Number of steps of size ``dt`` reaching ``t``; ``t/dt`` must be integral."""
    if not (math.isfinite(t) and t >= 0):
        raise InvalidArgument(f"final time must be nonnegative, got {t}")
    if not dt > 0:
        raise InvalidArgument(f"time step must be positive, got {dt}")
    ratio = t / dt
    steps = round(ratio)
    if abs(ratio - steps) > 1e-9 * max(1.0, ratio):
        raise InvalidArgument(f"t={t} is not an integer multiple of dt={dt}")
    return int(steps)


@dataclass(frozen=True, eq=False)
class Observation:
    """Perturbed data together with the noise model that produced it."""

    field: DensityField
    noise: Covariance
    seed: int


def exact_solution(ic: InitialCondition, D: float, t: float, grid: PeriodicGrid) -> DensityField:
    """Exact solution at the cell centres: each Fourier mode decays as exp(-D k^2 t)."""
    if D < 0 or t < 0:
        raise InvalidArgument("D and t must be nonnegative")
    x = grid.centers
    if isinstance(ic, CosineBump):
        k = 2 * np.pi / grid.length
        values = (1.0 + np.cos(k * x) * math.exp(-D * k * k * t)) / grid.length
        return DensityField(grid, values)
    if isinstance(ic, TabulatedDensity):
        return DensityField(grid, _evolve_tabulated(ic.field, D, t, grid))
    raise UnsupportedInput(f"no exact solution for {type(ic).__name__}")


def _evolve_tabulated(src: DensityField, D, t, grid):
    # evaluate the trigonometric interpolant of the cell values
    g = src.grid
    if not math.isclose(g.length, grid.length, rel_tol=1e-12):
        raise UnsupportedInput("target grid has a different domain length")
    if grid == g and t == 0:
        return src.values.copy()
    n = g.cells
    coef = np.fft.rfft(src.values) / n
    m = np.arange(coef.size)
    k = 2 * np.pi * m / g.length
    coef = coef * np.exp(-D * k * k * t)
    weight = np.full(coef.size, 2.0)
    weight[0] = 1.0
    if n % 2 == 0:
        weight[-1] = 1.0
    phase = np.outer(grid.centers - 0.5 * g.dx, k)
    return (np.cos(phase) @ (weight * coef.real)) - (np.sin(phase) @ (weight * coef.imag))


class CyclicTridiagonal:
    """Constant-coefficient cyclic tridiagonal system.

    Row ``n`` reads ``lower*u[n-1] + diag*u[n] + upper*u[n+1]`` with indices
    taken modulo ``size``. The corner couplings are removed with a rank-one
    (Sherman-Morrison) correction, so each solve is two Thomas sweeps over
    a tridiagonal matrix factored once at construction.
    """

    def __init__(self, lower: float, diag: float, upper: float, size: int):
        self.lower, self.diag, self.upper, self.size = lower, diag, upper, size
        if size <= 2:
            self._dense = np.linalg.inv(self._small_matrix())
            return
        n = size
        # corners: A[0, n-1] = lower, A[n-1, 0] = upper
        self._gamma = -diag
        b = np.full(n, float(diag))
        b[0] -= self._gamma
        b[-1] -= upper * lower / self._gamma
        self._cp, self._den = self._factor(b)
        u = np.zeros(n)
        u[0] = self._gamma
        u[-1] = upper
        self._z = self._thomas(u)
        self._zfac = 1.0 + self._z[0] + lower * self._z[-1] / self._gamma

    def _small_matrix(self):
        if self.size == 1:
            return np.array([[self.lower + self.diag + self.upper]])
        off = self.lower + self.upper
        return np.array([[self.diag, off], [off, self.diag]])

    def _factor(self, b):
        n = b.size
        cp = np.empty(n)
        den = np.empty(n)
        den[0] = b[0]
        cp[0] = self.upper / den[0]
        for i in range(1, n):
            den[i] = b[i] - self.lower * cp[i - 1]
            cp[i] = self.upper / den[i]
        return cp, den

    def _thomas(self, d):
        n = d.size
        cp, den, a = self._cp, self._den, self.lower
        x = np.empty(n)
        x[0] = d[0] / den[0]
        for i in range(1, n):
            x[i] = (d[i] - a * x[i - 1]) / den[i]
        for i in range(n - 2, -1, -1):
            x[i] -= cp[i] * x[i + 1]
        return x

    def solve(self, d: np.ndarray) -> np.ndarray:
        d = np.asarray(d, dtype=float)
        if self.size <= 2:
            return self._dense @ d
        y = self._thomas(d)
        fact = (y[0] + self.lower * y[-1] / self._gamma) / self._zfac
        return y - fact * self._z

    def matvec(self, u: np.ndarray) -> np.ndarray:
        return self.lower * np.roll(u, 1) + self.diag * u + self.upper * np.roll(u, -1)


def fd_solve(ic: InitialCondition, cfg: ReferenceConfig) -> DensityField:
    """Crank-Nicolson steps of the periodic central-difference Laplacian."""
    grid = cfg.grid
    u = ic.sampled_on(grid).values.copy()
    steps = cfg.steps
    if steps == 0:
        return DensityField(grid, u)
    r = cfg.D * cfg.dt / grid.dx**2
    implicit = CyclicTridiagonal(-0.5 * r, 1.0 + r, -0.5 * r, grid.cells)
    for _ in range(steps):
        rhs = u + 0.5 * r * (np.roll(u, 1) - 2.0 * u + np.roll(u, -1))
        u = implicit.solve(rhs)
    return DensityField(grid, u)


def synthesize_observation(field: DensityField, noise: Covariance, seed: int) -> Observation:
    """``field`` plus one seeded draw of ``N(0, noise)``."""
    if noise.dim != field.grid.cells:
        raise InvalidArgument(
            f"noise dimension {noise.dim} does not match grid with {field.grid.cells} cells"
        )
    seed = check_seed(seed)
    eta = noise.sample(stream(seed, 0))
    return Observation(DensityField(field.grid, field.values + eta), noise, seed)


# ---------------------------------------------------------------------------
# CSV

FIELD_HEADER = ["cell_index", "x_center", "value"]


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_field_csv(field: DensityField, path=None) -> str:
    """Serialize ``field``; writes to ``path`` if given and returns the text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FIELD_HEADER)
    for n, (x, v) in enumerate(zip(field.grid.centers, field.values)):
        w.writerow([n, _fmt(x), _fmt(v)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def read_field_csv(path, length: float) -> DensityField:
    """Read a field written by :func:`write_field_csv` on a domain of ``length``."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if rows[0] != FIELD_HEADER:
        raise InvalidArgument(f"unexpected header {rows[0]}")
    values = [float(r[2]) for r in rows[1:]]
    return DensityField(PeriodicGrid(length, len(values)), np.array(values))
