"""Chain-level checks.

The per-transition analysis only speaks about single accept/reject
decisions; the whole-chain properties below extend it and are checked
against a quadrature posterior.
"""

import math

import numpy as np
import pytest
from scipy import stats

from helpers import quadrature_posterior
from likratio.core import PeriodicGrid, ScalarCovariance
from likratio.experiments import SweepConfig, _reference, run_sweep
from likratio.likelihood import LogLikelihood
from likratio.mh import ChainState, MHConfig, exact_loglik, mh_step, particle_loglik, run_chain, write_chain_csv
from likratio.particles import ParticleConfig
from likratio.reference import CosineBump, ReferenceConfig, fd_solve, synthesize_observation
from likratio.rng import derive_seed, stream


@pytest.fixture(scope="module")
def observation():
    grid = PeriodicGrid(10.0, 100)
    ref = fd_solve(CosineBump(), ReferenceConfig(0.1, 10.0, 0.1, grid))
    return synthesize_observation(ref, ScalarCovariance(0.05**2, 100), 2024)


@pytest.fixture(scope="module")
def exact(observation):
    return exact_loglik(observation, CosineBump(), 10.0)


@pytest.fixture(scope="module")
def posterior(exact):
    return quadrature_posterior(lambda D: exact(D, 0).value, 0.01, 1.0)


class Counting:
    def __init__(self, inner):
        self.inner, self.calls = inner, 0

    def __call__(self, D, seed):
        self.calls += 1
        return self.inner(D, seed)


def lognormal_stub(base, s=1.0):
    """Unbiased noisy likelihood: ``exp(base) * W`` with ``log W ~ N(-s^2/2, s^2)``."""
    def loglik(D, seed):
        b = base(D, seed)
        lw = s * stream(seed, 9).standard_normal() - 0.5 * s * s
        return LogLikelihood(b.value + lw, b.residual_norm_sq - 2 * lw, b.log_normalizer, b.fingerprint)
    return loglik


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(d_min=0.0), dict(d_min=0.5, d_max=0.4), dict(proposal_std=0.0),
                                    dict(chain_length=0), dict(refresh_mode="sometimes"), dict(seed=-3)])
    def test_invalid(self, exact, kw):
        base = dict(loglik=exact, proposal_std=0.1, chain_length=10, seed=1)
        base.update(kw)
        with pytest.raises(ValueError):
            MHConfig(**base)


class TestStep:
    def test_out_of_support_costs_nothing(self, exact):
        counter = Counting(exact)
        cfg = MHConfig(counter, 10.0, 400, 5, d_min=0.05, d_max=0.15)
        state = ChainState(0.1, exact(0.1, 0))
        outside = inside = 0
        for _ in range(400):
            before = counter.calls
            state, accepted, sample = mh_step(state, cfg)
            if sample is None:
                outside += 1
                assert counter.calls == before and not accepted
            else:
                inside += 1
                assert counter.calls == before + 2
        assert outside > 300 and inside > 0

    def test_retain_current_evaluates_once(self, exact):
        counter = Counting(exact)
        cfg = MHConfig(counter, 0.01, 50, 5, refresh_mode="retain-current")
        state = ChainState(0.1, exact(0.1, 0))
        for _ in range(50):
            before = counter.calls
            state, _, sample = mh_step(state, cfg)
            assert counter.calls - before == (0 if sample is None else 1)

    def test_same_state_exact_always_accepted(self, exact):
        cfg = MHConfig(exact, 1e-300, 200, 3)
        state = ChainState(0.1, exact(0.1, 0))
        for _ in range(200):
            state, accepted, sample = mh_step(state, cfg)
            assert accepted and sample.truncated == 1.0
        assert state.accept_count == 200 and state.current_D == 0.1


class TestChain:
    def test_single_state(self, exact):
        res = run_chain(MHConfig(exact, 0.1, 1, 9))
        assert res.samples.shape == (1,) and res.acceptance_rate is None
        assert 0.01 <= res.samples[0] <= 1.0
        assert write_chain_csv(res).endswith("# acceptance_rate=\n")

    def test_deterministic(self, observation):
        cfg = ParticleConfig(100, 0.1, 10.0, observation.field.grid, 0)
        ll = particle_loglik(observation, cfg, CosineBump())
        a = write_chain_csv(run_chain(MHConfig(ll, 0.05, 200, 4)))
        assert a == write_chain_csv(run_chain(MHConfig(ll, 0.05, 200, 4)))
        lines = a.splitlines()
        assert lines[0] == "step,D,log_lik,accepted" and lines[-1].startswith("# acceptance_rate=")

    def test_exact_posterior_mean(self, exact, posterior):
        res = run_chain(MHConfig(exact, 0.06, 10_000, 2024))
        assert 0.08 <= res.samples.mean() <= 0.12
        assert 0.08 <= posterior[2] <= 0.12

    @pytest.mark.slow
    def test_pseudo_marginal_stub(self, exact, posterior):
        grid, cdf, _ = posterior
        ks = {}
        for mode in ("retain-current", "refresh-both"):
            res = run_chain(MHConfig(lognormal_stub(exact), 0.06, 100_000, 2024, refresh_mode=mode))
            ks[mode] = stats.kstest(res.samples, lambda x: np.interp(x, grid, cdf)).statistic
        assert ks["retain-current"] <= 0.02
        # refreshing the current state turns the same estimator into a biased sampler
        assert ks["refresh-both"] > 2 * ks["retain-current"]

    def test_matches_acceptance_sweep(self):
        # D' = D: the acceptance rate estimates E[min(ratio, 1)] for one fixed observation
        sweep = SweepConfig(seed=31, particle_counts=(100,), sigma_eta_list=(0.1,), replications=4000,
                            fixed_observation=True)
        expected = run_sweep(sweep, "acceptance")[0].mean_truncated
        obs = synthesize_observation(_reference(sweep), ScalarCovariance(0.01, 100), derive_seed(31, 0, 0))
        ll = particle_loglik(obs, ParticleConfig(100, 0.1, 10.0, sweep.grid, 0), CosineBump())
        cfg = MHConfig(ll, 1e-300, 10_000, 12, d_min=0.1 - 1e-12, d_max=0.1 + 1e-12)
        res = run_chain(cfg)
        assert abs(res.acceptance_rate - expected) <= 0.03
