"""Gaussian approximate likelihoods and their ratios, kept in log space."""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass

import numpy as np

from .core import Covariance, DensityField, InvalidArgument, weighted_norm_sq

__all__ = [
    "LogLikelihood",
    "RatioSample",
    "log_likelihood",
    "log_ratio",
    "truncated_ratio",
    "LOG_MIN_NORMAL",
    "LOG_MAX",
]

# below this the density itself is not a normal double
LOG_MIN_NORMAL = math.log(sys.float_info.min)
LOG_MAX = math.log(sys.float_info.max)


@dataclass(frozen=True)
class LogLikelihood:
    value: float
    residual_norm_sq: float
    log_normalizer: float
    fingerprint: str

    @property
    def underflows(self) -> bool:
        """Whether ``exp(value)`` would fall below the smallest normal double."""
        return self.value < LOG_MIN_NORMAL


@dataclass(frozen=True)
class RatioSample:
    log_ratio: float
    numerator: LogLikelihood
    denominator: LogLikelihood
    ratio: float
    truncated: float

    @property
    def both_underflow(self) -> bool:
        """Both densities underflow, so a direct quotient would be 0/0."""
        return self.numerator.underflows and self.denominator.underflows

    @property
    def overflowed(self) -> bool:
        return math.isinf(self.ratio)


def log_likelihood(obs, model: DensityField, noise: Covariance | None = None) -> LogLikelihood:
    """Log of the Gaussian observation density at the residual ``obs - model``.

    ``obs`` is an :class:`~likratio.reference.Observation` (its noise model
    is used unless ``noise`` is given) or a bare :class:`DensityField`.
    """
    data = obs.field if hasattr(obs, "field") else obs
    if noise is None:
        noise = getattr(obs, "noise", None)
        if noise is None:
            raise InvalidArgument("no noise covariance given")
    if data.grid != model.grid:
        raise InvalidArgument("observation and model live on different grids")
    if noise.dim != data.grid.cells:
        raise InvalidArgument(f"noise dimension {noise.dim} does not match {data.grid.cells} cells")
    r = data.values - model.values
    q = weighted_norm_sq(r, noise)
    norm = -0.5 * noise.dim * math.log(2 * math.pi) - 0.5 * noise.logdet()
    return LogLikelihood(norm - 0.5 * q, q, norm, noise.fingerprint())


def truncated_ratio(log_ratio: float) -> float:
    """``min(exp(log_ratio), 1)``; never exponentiates a positive argument."""
    if math.isnan(log_ratio):
        raise InvalidArgument("log ratio is NaN")
    return math.exp(min(log_ratio, 0.0))


def log_ratio(num: LogLikelihood, den: LogLikelihood) -> RatioSample:
    """Ratio ``num / den`` from the stored quadratic forms; normalizers cancel."""
    if num.fingerprint != den.fingerprint:
        raise InvalidArgument("likelihoods were built with different noise models")
    lr = 0.5 * (den.residual_norm_sq - num.residual_norm_sq)
    ratio = math.inf if lr > LOG_MAX else math.exp(lr)
    return RatioSample(lr, num, den, ratio, truncated_ratio(lr))


def log_mean_exp(logs: np.ndarray) -> float:
    """``log(mean(exp(logs)))`` without overflow; ``-inf`` for an empty input."""
    logs = np.asarray(logs, dtype=float)
    if logs.size == 0:
        return -math.inf
    m = float(np.max(logs))
    if math.isinf(m):
        return m
    return m + math.log(float(np.mean(np.exp(logs - m))))
