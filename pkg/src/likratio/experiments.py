"""Sweeps over ensemble size and observation noise.

Each replication draws a fresh observation from the finite-difference
reference solution, runs two independent particle solves (numerator and
denominator parameter) and records both log-likelihoods and their ratio.
A sweep aggregates ``replications`` of these for every pair in
``sigma_eta_list x particle_counts``.

The ``kind`` of a sweep selects what ``mean_ratio`` means:

``likelihoods``
    ratio of the mean likelihoods, ``E[l(D_num)] / E[l(D_den)]``. A
    replication in which both likelihoods underflow is left out, as a
    direct computation would return 0/0.
``ratio``, ``acceptance``
    mean of the per-replication ratios. Ratios are formed in log space, so
    every replication is usable and none is left out.
"""

from __future__ import annotations

import csv
import functools
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import PeriodicGrid, ScalarCovariance
from .likelihood import LogLikelihood, RatioSample, log_likelihood, log_mean_exp, log_ratio
from .particles import DEFAULT_CHUNK_SIZE, ParticleConfig, forward
from .reference import CosineBump, InitialCondition, ReferenceConfig, fd_solve, synthesize_observation
from .rng import check_seed, derive_seed

__all__ = [
    "SweepConfig",
    "SweepRecord",
    "Replication",
    "KINDS",
    "run_replication",
    "run_sweep",
    "write_csv",
    "read_csv",
    "SWEEP_HEADER",
]

KINDS = ("likelihoods", "ratio", "acceptance")
DEFAULT_PARTICLE_COUNTS = (10**2, 10**3, 10**4, 10**5, 10**6)
DEFAULT_SIGMA_ETA = (0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 1.0)


@dataclass(frozen=True, kw_only=True)
class SweepConfig:
    seed: int
    length: float = 10.0
    cells: int = 100
    t: float = 10.0
    d_true: float = 0.1
    d_num: float = 0.1
    d_den: float = 0.1
    particle_counts: tuple[int, ...] = DEFAULT_PARTICLE_COUNTS
    sigma_eta_list: tuple[float, ...] = DEFAULT_SIGMA_ETA
    replications: int = 1000
    reference_dt: float = 0.1
    particle_dt: float | None = None
    fixed_observation: bool = False
    shared_forward: bool = False
    chunk_size: int = DEFAULT_CHUNK_SIZE
    threads: int = 1
    ic: InitialCondition = field(default_factory=CosineBump)

    def __post_init__(self):
        check_seed(self.seed)
        object.__setattr__(self, "particle_counts", tuple(int(p) for p in self.particle_counts))
        object.__setattr__(self, "sigma_eta_list", tuple(float(s) for s in self.sigma_eta_list))
        if not self.particle_counts or not self.sigma_eta_list:
            raise ValueError("particle_counts and sigma_eta_list must be nonempty")
        positive = [self.length, self.cells, self.t, self.d_true, self.d_num, self.d_den,
                    self.replications, self.reference_dt, *self.particle_counts,
                    *self.sigma_eta_list]
        if any(not v > 0 for v in positive):
            raise ValueError("sweep settings must all be positive")
        if self.shared_forward and self.d_num != self.d_den:
            raise ValueError("shared_forward needs d_num == d_den")

    @property
    def grid(self) -> PeriodicGrid:
        return PeriodicGrid(self.length, self.cells)


@dataclass(frozen=True)
class Replication:
    numerator: LogLikelihood
    denominator: LogLikelihood
    ratio: RatioSample
    sigma_delta: float


@dataclass(frozen=True)
class SweepRecord:
    sigma_eta: float
    particle_count: int
    sigma_delta_mean: float | None
    mean_lik_num_log: float | None
    mean_lik_den_log: float | None
    mean_ratio: float | None
    mean_truncated: float | None
    n_valid: int
    n_invalid: int
    n_overflow: int


@functools.lru_cache(maxsize=8)
def _reference(cfg: SweepConfig):
    return fd_solve(cfg.ic, ReferenceConfig(cfg.d_true, cfg.t, cfg.reference_dt, cfg.grid))


def _index(values, v, name):
    try:
        return values.index(v)
    except ValueError:
        raise ValueError(f"{name}={v} is not in the sweep configuration") from None


def run_replication(cfg: SweepConfig, sigma_eta: float, P: int, rep_index: int) -> Replication:
    """One observation, one forward run per parameter, one ratio."""
    i_s = _index(cfg.sigma_eta_list, float(sigma_eta), "sigma_eta")
    i_p = _index(cfg.particle_counts, int(P), "P")
    noise = ScalarCovariance(sigma_eta**2, cfg.cells)
    if cfg.fixed_observation:
        obs_seed = derive_seed(cfg.seed, i_s, 0)
    else:
        obs_seed = derive_seed(cfg.seed, i_s, i_p, rep_index, 0)
    obs = synthesize_observation(_reference(cfg), noise, obs_seed)

    pcfg = ParticleConfig(P, cfg.d_num, cfg.t, cfg.grid, derive_seed(cfg.seed, i_s, i_p, rep_index, 1),
                          cfg.particle_dt, cfg.chunk_size, cfg.threads)
    num_out = forward(cfg.d_num, pcfg, cfg.ic)
    if cfg.shared_forward:
        den_out = num_out
    else:
        den_out = forward(cfg.d_den, pcfg.with_seed(derive_seed(cfg.seed, i_s, i_p, rep_index, 2)), cfg.ic)
    num = log_likelihood(obs, num_out.field)
    den = log_likelihood(obs, den_out.field)
    return Replication(num, den, log_ratio(num, den), den_out.sigma_delta)


def _aggregate(kind, sigma_eta, P, reps: list[Replication]) -> SweepRecord:
    if kind == "likelihoods":
        valid = [r for r in reps if not r.ratio.both_underflow]
    else:
        valid = list(reps)
    sigma_delta_mean = float(np.mean([r.sigma_delta for r in reps]))
    n_overflow = sum(r.ratio.overflowed for r in valid)
    if not valid:
        return SweepRecord(sigma_eta, P, sigma_delta_mean, None, None, None, None,
                           0, len(reps), 0)
    lik_num = log_mean_exp([r.numerator.value for r in valid])
    lik_den = log_mean_exp([r.denominator.value for r in valid])
    if kind == "likelihoods":
        log_mean_ratio = lik_num - lik_den
    else:
        log_mean_ratio = log_mean_exp([r.ratio.log_ratio for r in valid])
    if kind != "likelihoods" and n_overflow:
        mean_ratio = math.inf
    else:
        mean_ratio = math.inf if log_mean_ratio > 709.0 else math.exp(log_mean_ratio)
    mean_truncated = float(np.mean([r.ratio.truncated for r in valid]))
    return SweepRecord(sigma_eta, P, sigma_delta_mean, lik_num, lik_den, mean_ratio,
                       mean_truncated, len(valid), len(reps) - len(valid), n_overflow)


def run_sweep(cfg: SweepConfig, kind: str = "ratio", progress=None) -> list[SweepRecord]:
    """All ``(sigma_eta, P)`` pairs, ``cfg.replications`` replications each."""
    if kind not in KINDS:
        raise ValueError(f"unknown sweep kind {kind!r}; expected one of {KINDS}")
    records = []
    for sigma_eta in cfg.sigma_eta_list:
        for P in cfg.particle_counts:
            reps = [run_replication(cfg, sigma_eta, P, r) for r in range(cfg.replications)]
            records.append(_aggregate(kind, sigma_eta, P, reps))
            if progress is not None:
                progress(records[-1])
    return records


# ---------------------------------------------------------------------------
# CSV

SWEEP_HEADER = [
    "sigma_eta", "particle_count", "sigma_delta_mean", "mean_lik_num_log", "mean_lik_den_log",
    "mean_ratio", "mean_truncated", "n_valid", "n_invalid", "n_overflow",
]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(float(v), ".17g")


def write_csv(records, path=None) -> str:
    """Long-format CSV, rows sorted by ``(sigma_eta, particle_count)``."""
    if not records:
        raise ValueError("no records to write")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for r in sorted(records, key=lambda r: (r.sigma_eta, r.particle_count)):
        w.writerow([_fmt(getattr(r, name)) for name in SWEEP_HEADER])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def read_csv(path) -> list[SweepRecord]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SWEEP_HEADER:
            raise ValueError(f"unexpected header {reader.fieldnames}")
        out = []
        for row in reader:
            f = lambda k: None if row[k] == "" else float(row[k])  # noqa: E731
            out.append(SweepRecord(
                float(row["sigma_eta"]), int(row["particle_count"]), f("sigma_delta_mean"),
                f("mean_lik_num_log"), f("mean_lik_den_log"), f("mean_ratio"),
                f("mean_truncated"), int(row["n_valid"]), int(row["n_invalid"]),
                int(row["n_overflow"]),
            ))
    return out
