"""Random-walk Metropolis-Hastings over the diffusion coefficient.

The chain sees the likelihood only through a callable returning a
:class:`~likratio.likelihood.LogLikelihood`, so the same sampler runs with
the noisy particle solver, the exact solution, or a test double.

Two ways of handling the noisy current state are offered:

``refresh-both``
    the current state is re-simulated at every step, so numerator and
    denominator carry independent solver errors.
``retain-current``
    the likelihood estimate of the current state is kept until a proposal
    is accepted (pseudo-marginal).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .likelihood import LogLikelihood, RatioSample, log_likelihood, log_ratio
from .particles import ParticleConfig, forward
from .reference import InitialCondition, Observation, exact_solution
from .rng import check_seed, derive_seed, stream

__all__ = [
    "MHConfig",
    "ChainState",
    "mh_step",
    "run_chain",
    "particle_loglik",
    "exact_loglik",
    "write_chain_csv",
    "REFRESH_MODES",
]

REFRESH_MODES = ("refresh-both", "retain-current")

LogLikFn = Callable[[float, int], LogLikelihood]


def particle_loglik(obs: Observation, cfg: ParticleConfig, ic: InitialCondition) -> LogLikFn:
    """Likelihood through one particle solve per call, seeded by the caller."""
    def loglik(D, seed):
        return log_likelihood(obs, forward(D, cfg.with_seed(seed), ic).field)
    return loglik


def exact_loglik(obs: Observation, ic: InitialCondition, t: float) -> LogLikFn:
    """Noise-free likelihood through the exact solution; the seed is ignored."""
    grid = obs.field.grid

    def loglik(D, seed):
        return log_likelihood(obs, exact_solution(ic, D, t, grid))
    return loglik


@dataclass(frozen=True)
class MHConfig:
    loglik: LogLikFn
    proposal_std: float
    chain_length: int
    seed: int
    d_min: float = 0.01
    d_max: float = 1.0
    refresh_mode: str = "refresh-both"

    def __post_init__(self):
        if not 0 < self.d_min < self.d_max:
            raise ValueError(f"need 0 < d_min < d_max, got [{self.d_min}, {self.d_max}]")
        if not self.proposal_std > 0:
            raise ValueError("proposal_std must be positive")
        if self.chain_length < 1:
            raise ValueError("chain_length must be positive")
        if self.refresh_mode not in REFRESH_MODES:
            raise ValueError(f"refresh_mode must be one of {REFRESH_MODES}")
        check_seed(self.seed)

    def in_support(self, D: float) -> bool:
        return self.d_min <= D <= self.d_max


@dataclass(frozen=True)
class ChainState:
    current_D: float
    current_log_lik: LogLikelihood
    step_index: int = 0
    accept_count: int = 0


def mh_step(state: ChainState, cfg: MHConfig) -> tuple[ChainState, bool, RatioSample | None]:
    """One accept/reject step; the uniform prior and symmetric proposal cancel."""
    step = state.step_index + 1
    rng = stream(cfg.seed, 1, step)
    proposal = state.current_D + cfg.proposal_std * rng.standard_normal()
    u = rng.random()
    if not cfg.in_support(proposal):
        return replace(state, step_index=step), False, None

    prop_lik = cfg.loglik(proposal, derive_seed(cfg.seed, 2, step, 0))
    if cfg.refresh_mode == "refresh-both":
        cur_lik = cfg.loglik(state.current_D, derive_seed(cfg.seed, 2, step, 1))
    else:
        cur_lik = state.current_log_lik
    sample = log_ratio(prop_lik, cur_lik)
    accepted = u < sample.truncated
    if accepted:
        new = ChainState(proposal, prop_lik, step, state.accept_count + 1)
    else:
        new = ChainState(state.current_D, cur_lik, step, state.accept_count)
    return new, accepted, sample


@dataclass(frozen=True)
class ChainResult:
    samples: np.ndarray
    log_liks: np.ndarray
    accepted: np.ndarray
    acceptance_rate: float | None


def run_chain(cfg: MHConfig) -> ChainResult:
    """Chain of ``chain_length`` states started from a uniform prior draw."""
    rng = stream(cfg.seed, 0)
    D = cfg.d_min + (cfg.d_max - cfg.d_min) * rng.random()
    state = ChainState(D, cfg.loglik(D, derive_seed(cfg.seed, 2, 0, 0)))
    n = cfg.chain_length
    samples = np.empty(n)
    logs = np.empty(n)
    accepted = np.zeros(n, dtype=bool)
    samples[0], logs[0] = D, state.current_log_lik.value
    for i in range(1, n):
        state, accepted[i], _ = mh_step(state, cfg)
        samples[i], logs[i] = state.current_D, state.current_log_lik.value
    rate = state.accept_count / (n - 1) if n > 1 else None
    return ChainResult(samples, logs, accepted, rate)


def write_chain_csv(result: ChainResult, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "D", "log_lik", "accepted"])
    for i, (D, ll, acc) in enumerate(zip(result.samples, result.log_liks, result.accepted)):
        w.writerow([i, format(D, ".17g"), format(ll, ".17g"), int(acc)])
    rate = "" if result.acceptance_rate is None else format(result.acceptance_rate, ".17g")
    buf.write(f"# acceptance_rate={rate}\n")
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
