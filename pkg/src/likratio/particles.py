"""Monte Carlo particle solver: the noisy forward map.

Particles start from the initial density, take Euler-Maruyama steps of
the Brownian motion whose Fokker-Planck equation is the diffusion
equation, and are binned into a histogram on the grid. Work is split into
fixed-size chunks, each with its own random substream, so the output
depends only on ``(seed, chunk_size)`` and never on the thread count.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import DensityField, InvalidArgument, PeriodicGrid, wrap_array
from .reference import InitialCondition, steps_for
from .rng import check_seed, derive_seed, stream

__all__ = [
    "ParticleEnsemble",
    "ParticleConfig",
    "ForwardOutput",
    "sample_initial",
    "propagate",
    "bin",
    "estimate_cell_variances",
    "replicate_cell_variances",
    "forward",
    "write_forward_csv",
    "read_forward_csv",
    "DEFAULT_CHUNK_SIZE",
]

DEFAULT_CHUNK_SIZE = 1 << 18


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    positions: np.ndarray
    grid: PeriodicGrid

    def __post_init__(self):
        x = np.asarray(self.positions, dtype=float)
        if x.ndim != 1 or x.size < 1:
            raise InvalidArgument("an ensemble needs at least one particle")
        if np.any(x < 0) or np.any(x >= self.grid.length):
            raise InvalidArgument("particle positions must lie in [0, L)")
        object.__setattr__(self, "positions", x)

    @property
    def P(self) -> int:
        return self.positions.size


@dataclass(frozen=True)
class ParticleConfig:
    """Settings of one forward run. ``dt`` defaults to a single step of size ``t``."""

    P: int
    D: float
    t: float
    grid: PeriodicGrid
    seed: int
    dt: float | None = None
    chunk_size: int = DEFAULT_CHUNK_SIZE
    threads: int = 1

    def __post_init__(self):
        if int(self.P) != self.P or self.P < 1:
            raise InvalidArgument(f"ensemble size must be a positive integer, got {self.P}")
        if not self.D >= 0:
            raise InvalidArgument(f"diffusion coefficient must be nonnegative, got {self.D}")
        if self.dt is None:
            object.__setattr__(self, "dt", self.t if self.t > 0 else 1.0)
        steps_for(self.t, self.dt)
        check_seed(self.seed)
        if self.chunk_size < 1 or self.threads < 1:
            raise InvalidArgument("chunk_size and threads must be positive")

    @property
    def steps(self) -> int:
        return steps_for(self.t, self.dt)

    def with_D(self, D: float) -> "ParticleConfig":
        return ParticleConfig(self.P, D, self.t, self.grid, self.seed, self.dt,
                              self.chunk_size, self.threads)

    def with_seed(self, seed: int) -> "ParticleConfig":
        return ParticleConfig(self.P, self.D, self.t, self.grid, seed, self.dt,
                              self.chunk_size, self.threads)


@dataclass(frozen=True, eq=False)
class ForwardOutput:
    """Binned density with its per-cell variance estimate.

    ``sigma_delta`` is the square root of the largest cell variance.
    """

    field: DensityField
    cell_variances: np.ndarray
    sigma_delta: float
    P: int
    seed: int | None = None


def _draw_initial(ic: InitialCondition, n: int, grid: PeriodicGrid, rng) -> np.ndarray:
    length = grid.length
    bound = ic.envelope(length)
    if not bound > 0:
        raise InvalidArgument("initial condition has zero mass")
    out = np.empty(n)
    filled = 0
    while filled < n:
        # acceptance rate is mass / (L * bound); oversample to finish in ~1 pass
        want = n - filled
        batch = int(want * length * bound * 1.1) + 16
        x = rng.random(batch) * length
        u = rng.random(batch) * bound
        acc = x[u < ic.density(x, length)]
        take = min(acc.size, want)
        out[filled:filled + take] = acc[:take]
        filled += take
    return out


def _step(x: np.ndarray, D: float, dt: float, steps: int, length: float, rng) -> np.ndarray:
    if D == 0 or steps == 0:
        return x
    scale = math.sqrt(2.0 * D * dt)
    for _ in range(steps):
        x += scale * rng.standard_normal(x.size)
        wrap_array(x, length)
    return x


def sample_initial(ic: InitialCondition, P: int, grid: PeriodicGrid, seed: int) -> ParticleEnsemble:
    """``P`` i.i.d. draws from ``ic`` by rejection against a uniform envelope."""
    if P < 1:
        raise InvalidArgument("P must be positive")
    rng = stream(seed, 0)
    return ParticleEnsemble(_draw_initial(ic, int(P), grid, rng), grid)


def propagate(ens: ParticleEnsemble, D: float, dt: float, steps: int, seed: int) -> ParticleEnsemble:
    """Euler-Maruyama steps ``X += sqrt(2 D dt) W``, wrapped after every step."""
    if D < 0 or dt <= 0 or steps < 0:
        raise InvalidArgument("need D >= 0, dt > 0 and steps >= 0")
    x = ens.positions.copy()
    _step(x, D, dt, steps, ens.grid.length, stream(seed, 1))
    return ParticleEnsemble(x, ens.grid)


def _counts(x: np.ndarray, grid: PeriodicGrid) -> np.ndarray:
    return np.bincount(grid.cell_index(x), minlength=grid.cells)


def _density_from_counts(counts: np.ndarray, P: int, grid: PeriodicGrid) -> DensityField:
    return DensityField(grid, counts / (P * grid.dx))


def bin(ens: ParticleEnsemble) -> DensityField:  # noqa: A001 - name mirrors the histogram step
    """Histogram estimate ``count_n / (P dx)``."""
    return _density_from_counts(_counts(ens.positions, ens.grid), ens.P, ens.grid)


def estimate_cell_variances(field: DensityField, P: int) -> np.ndarray:
    """Binomial plug-in variance ``p(1-p) / (P dx^2)`` with ``p = value * dx``."""
    if P < 1:
        raise InvalidArgument("P must be positive")
    dx = field.grid.dx
    p = np.clip(field.values * dx, 0.0, 1.0)
    return p * (1.0 - p) / (P * dx * dx)


def _chunk_sizes(P: int, chunk_size: int) -> list[int]:
    full, rest = divmod(P, chunk_size)
    return [chunk_size] * full + ([rest] if rest else [])


def _chunk_counts(ic, cfg: ParticleConfig, index: int, n: int) -> np.ndarray:
    rng = stream(cfg.seed, 2, index)
    x = _draw_initial(ic, n, cfg.grid, rng)
    _step(x, cfg.D, cfg.dt, cfg.steps, cfg.grid.length, rng)
    return _counts(x, cfg.grid)


def simulate_counts(cfg: ParticleConfig, ic: InitialCondition) -> np.ndarray:
    """Cell counts of a full forward run, summed over chunks in index order."""
    sizes = _chunk_sizes(cfg.P, cfg.chunk_size)
    jobs = list(enumerate(sizes))
    if cfg.threads == 1 or len(jobs) == 1:
        parts = [_chunk_counts(ic, cfg, i, n) for i, n in jobs]
    else:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            parts = list(pool.map(lambda job: _chunk_counts(ic, cfg, *job), jobs))
    total = np.zeros(cfg.grid.cells, dtype=np.int64)
    for part in parts:
        total += part
    return total


def replicate_cell_variances(D: float, cfg: ParticleConfig, ic: InitialCondition,
                             replicates: int) -> np.ndarray:
    """Per-cell sample variance over independent forward runs."""
    if replicates < 2:
        raise InvalidArgument("need at least two replicates for a sample variance")
    base = cfg.with_D(D)
    runs = np.array([
        simulate_counts(base.with_seed(derive_seed(cfg.seed, 3, r)), ic) / (cfg.P * cfg.grid.dx)
        for r in range(replicates)
    ])
    return runs.var(axis=0, ddof=1)


def forward(D: float, cfg: ParticleConfig, ic: InitialCondition,
            variance: str = "plugin", replicates: int = 16) -> ForwardOutput:
    """Noisy forward map: sample, propagate, bin and estimate the solver noise.

    ``variance="replicates"`` replaces the binomial plug-in by the sample
    variance over ``replicates`` extra runs with derived seeds.
    """
    run = cfg.with_D(D)
    field = _density_from_counts(simulate_counts(run, ic), cfg.P, cfg.grid)
    if variance == "plugin":
        var = estimate_cell_variances(field, cfg.P)
    elif variance == "replicates":
        var = replicate_cell_variances(D, cfg, ic, replicates)
    else:
        raise InvalidArgument(f"unknown variance mode {variance!r}")
    return ForwardOutput(field, var, math.sqrt(float(np.max(var))), cfg.P, cfg.seed)


# ---------------------------------------------------------------------------
# CSV

FORWARD_HEADER = ["cell_index", "x_center", "density", "variance"]


def write_forward_csv(out: ForwardOutput, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FORWARD_HEADER)
    g = out.field.grid
    for n in range(g.cells):
        w.writerow([n, format(g.centers[n], ".17g"), format(out.field.values[n], ".17g"),
                    format(out.cell_variances[n], ".17g")])
    seed = "" if out.seed is None else out.seed
    buf.write(f"# sigma_delta={out.sigma_delta:.17g} P={out.P} seed={seed}\n")
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def read_forward_csv(path, length: float) -> ForwardOutput:
    meta = {}
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                meta = dict(kv.split("=", 1) for kv in line[1:].split())
            elif line.strip():
                rows.append(line.strip().split(","))
    if rows[0] != FORWARD_HEADER:
        raise InvalidArgument(f"unexpected header {rows[0]}")
    body = np.array([[float(v) for v in r[2:]] for r in rows[1:]])
    grid = PeriodicGrid(length, body.shape[0])
    seed = int(meta["seed"]) if meta.get("seed") else None
    return ForwardOutput(DensityField(grid, body[:, 0]), body[:, 1],
                         float(meta["sigma_delta"]), int(meta["P"]), seed)
