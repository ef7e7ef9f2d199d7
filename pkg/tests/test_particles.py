import numpy as np
import pytest

from likratio.core import DensityField, InvalidArgument, PeriodicGrid
from likratio.particles import (
    ParticleConfig,
    ParticleEnsemble,
    bin,
    estimate_cell_variances,
    forward,
    propagate,
    read_forward_csv,
    sample_initial,
    simulate_counts,
    write_forward_csv,
)
from likratio.reference import CosineBump, TabulatedDensity, exact_solution
from likratio.rng import derive_seed


def uniform_ic(grid):
    return TabulatedDensity(DensityField(grid, np.full(grid.cells, 1.0 / grid.length)))


class TestSampleInitial:
    def test_cosine_moment(self, standard_grid, bump):
        P = 100_000
        x = sample_initial(bump, P, standard_grid, 11).positions
        assert abs(np.mean(np.cos(2 * np.pi * x / 10.0)) - 0.5) < 4 / np.sqrt(P)

    def test_uniform_coarse_bins(self):
        grid = PeriodicGrid(10.0, 10)
        P = 1000
        counts = np.bincount(grid.cell_index(sample_initial(uniform_ic(grid), P, grid, 5).positions),
                             minlength=10)
        assert np.all(np.abs(counts - P / 10) <= 4 * np.sqrt(P / 10))

    def test_deterministic(self, standard_grid, bump):
        a = sample_initial(bump, 1000, standard_grid, 9).positions
        np.testing.assert_array_equal(a, sample_initial(bump, 1000, standard_grid, 9).positions)

    def test_zero_particles(self, standard_grid, bump):
        with pytest.raises(InvalidArgument):
            sample_initial(bump, 0, standard_grid, 0)


class TestPropagate:
    def test_zero_diffusion(self, standard_grid, bump):
        ens = sample_initial(bump, 500, standard_grid, 1)
        np.testing.assert_array_equal(propagate(ens, 0.0, 1.0, 5, 2).positions, ens.positions)

    def test_zero_steps(self, standard_grid, bump):
        ens = sample_initial(bump, 500, standard_grid, 1)
        np.testing.assert_array_equal(propagate(ens, 0.1, 1.0, 0, 2).positions, ens.positions)

    def test_increment_variance(self):
        # a long domain keeps the displacement from wrapping
        grid = PeriodicGrid(1000.0, 10)
        P = 100_000
        ens = ParticleEnsemble(np.full(P, 500.0), grid)
        disp = propagate(ens, 0.1, 10.0, 1, 3).positions - 500.0
        assert abs(np.var(disp) - 2.0) <= 4 * np.sqrt(2 / P) * 2

    def test_stays_in_domain(self, standard_grid, bump):
        ens = propagate(sample_initial(bump, 10_000, standard_grid, 1), 5.0, 1.0, 3, 2)
        assert np.all((ens.positions >= 0) & (ens.positions < 10.0))


class TestBin:
    def test_single_cell(self, standard_grid):
        field = bin(ParticleEnsemble(np.full(4, 0.05), standard_grid))
        assert field.values[0] == pytest.approx(10.0)
        assert np.all(field.values[1:] == 0)

    def test_mass(self, standard_grid, bump):
        field = bin(sample_initial(bump, 12345, standard_grid, 2))
        assert field.mass() == pytest.approx(1.0, abs=100 * np.finfo(float).eps)

    def test_uniform_cells(self, standard_grid):
        P = 1_000_000
        field = bin(sample_initial(uniform_ic(standard_grid), P, standard_grid, 3))
        tol = 5 * np.sqrt(0.01 * 0.99 / P) / 0.1
        assert np.all(np.abs(field.values - 0.1) <= tol)


class TestVariance:
    def test_empty_cell(self, standard_grid):
        field = bin(ParticleEnsemble(np.full(4, 0.05), standard_grid))
        assert estimate_cell_variances(field, 4)[1] == 0.0

    def test_hand_value(self, standard_grid):
        field = DensityField(standard_grid, np.full(100, 0.1))
        np.testing.assert_allclose(estimate_cell_variances(field, 10_000), 9.9e-5, rtol=1e-12)

    def test_zero_P(self, standard_grid):
        with pytest.raises(InvalidArgument):
            estimate_cell_variances(DensityField(standard_grid, np.full(100, 0.1)), 0)

    def test_doubling_P_halves_variance(self, standard_grid, bump):
        def empirical(P):
            cfg = ParticleConfig(P, 0.1, 10.0, standard_grid, 0)
            runs = [simulate_counts(cfg.with_seed(derive_seed(77, P, r)), bump) / (P * 0.1)
                    for r in range(200)]
            return np.var(runs, axis=0, ddof=1)
        ratio = np.mean(empirical(10_000)) / np.mean(empirical(20_000))
        assert ratio == pytest.approx(2.0, rel=0.2)

    def test_plugin_matches_replicates(self, standard_grid, bump):
        cfg = ParticleConfig(10_000, 0.1, 10.0, standard_grid, 4)
        plug = forward(0.1, cfg, bump)
        rep = forward(0.1, cfg, bump, variance="replicates", replicates=400)
        assert np.mean(rep.cell_variances) == pytest.approx(np.mean(plug.cell_variances), rel=0.1)


class TestForward:
    def test_matches_exact(self, standard_grid, bump):
        P = 1_000_000
        out = forward(0.1, ParticleConfig(P, 0.1, 10.0, standard_grid, 8, dt=10.0), bump)
        exact = exact_solution(bump, 0.1, 10.0, standard_grid).values
        se = np.sqrt(exact * 0.1 * (1 - exact * 0.1) / P) / 0.1
        assert np.all(np.abs(out.field.values - exact) <= 5 * se)
        assert out.sigma_delta**2 == pytest.approx(np.max(out.cell_variances), rel=1e-15)

    def test_sigma_delta_scaling(self, standard_grid, bump):
        small = forward(0.1, ParticleConfig(10**4, 0.1, 10.0, standard_grid, 1), bump).sigma_delta
        large = forward(0.1, ParticleConfig(10**6, 0.1, 10.0, standard_grid, 1), bump).sigma_delta
        assert small / large == pytest.approx(10.0, rel=0.25)

    def test_sigma_delta_decreasing(self, standard_grid, bump):
        sd = [forward(0.1, ParticleConfig(10**k, 0.1, 10.0, standard_grid, 2), bump).sigma_delta
              for k in range(2, 7)]
        assert all(a > b for a, b in zip(sd, sd[1:]))

    def test_one_step_vs_many(self, standard_grid, bump):
        P = 1_000_000
        one = forward(0.1, ParticleConfig(P, 0.1, 10.0, standard_grid, 5, dt=10.0), bump)
        many = forward(0.1, ParticleConfig(P, 0.1, 10.0, standard_grid, 6, dt=0.1), bump)
        se = np.sqrt(one.cell_variances + many.cell_variances)
        assert np.all(np.abs(one.field.values - many.field.values) <= 5 * se)

    def test_threads_and_repeats_identical(self, standard_grid, bump):
        cfg = ParticleConfig(100_000, 0.1, 10.0, standard_grid, 3, chunk_size=7_000)
        a = forward(0.1, cfg, bump)
        b = forward(0.1, cfg, bump)
        c = forward(0.1, ParticleConfig(100_000, 0.1, 10.0, standard_grid, 3, chunk_size=7_000,
                                        threads=8), bump)
        assert a.field == b.field == c.field
        np.testing.assert_array_equal(a.cell_variances, c.cell_variances)

    def test_config_validation(self, standard_grid):
        with pytest.raises(InvalidArgument):
            ParticleConfig(0, 0.1, 10.0, standard_grid, 0)
        with pytest.raises(InvalidArgument):
            ParticleConfig(10, 0.1, 10.0, standard_grid, 0, dt=3.0)
        assert ParticleConfig(10, 0.1, 10.0, standard_grid, 0).steps == 1


def test_forward_csv_round_trip(tmp_path, standard_grid, bump):
    out = forward(0.1, ParticleConfig(5000, 0.1, 10.0, standard_grid, 12), bump)
    text = write_forward_csv(out, tmp_path / "o.csv")
    assert text.splitlines()[0] == "cell_index,x_center,density,variance"
    assert text.splitlines()[-1].startswith("# sigma_delta=")
    back = read_forward_csv(tmp_path / "o.csv", 10.0)
    assert back.field == out.field
    np.testing.assert_array_equal(back.cell_variances, out.cell_variances)
    assert (back.sigma_delta, back.P, back.seed) == (out.sigma_delta, out.P, out.seed)
