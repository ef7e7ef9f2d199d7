"""Likelihood ratios of particle-solver forward models for periodic diffusion."""

from .core import (
    Covariance,
    DensityField,
    DiagonalCovariance,
    FullCovariance,
    InvalidArgument,
    PeriodicGrid,
    ScalarCovariance,
    UnsupportedInput,
    loewner_strictly_dominates,
    make_grid,
    weighted_norm_sq,
    wrap,
)
from .experiments import SweepConfig, SweepRecord, run_replication, run_sweep
from .likelihood import LogLikelihood, RatioSample, log_likelihood, log_ratio, truncated_ratio
from .mh import ChainState, MHConfig, exact_loglik, mh_step, particle_loglik, run_chain
from .moments import (
    Divergent,
    MomentQuery,
    MomentResult,
    empirical_ratio_moment,
    moment_exists,
    ratio_moment,
    scalar_query,
)
from .particles import ForwardOutput, ParticleConfig, forward
from .reference import (
    CosineBump,
    Observation,
    ReferenceConfig,
    TabulatedDensity,
    exact_solution,
    fd_solve,
    synthesize_observation,
)

__version__ = "0.1.0"
