"""Random query generators shared by the moment tests."""

import numpy as np
from scipy import linalg

from likratio.core import FullCovariance
from likratio.moments import MomentQuery


def random_spd(rng, n, floor=0.1):
    a = rng.standard_normal((n, n)) / np.sqrt(n)
    return a @ a.T + floor * np.eye(n)


def random_query(rng, dim, margin=0.2, max_p=3, offset=0.5, spread=(0.05, 0.25)):
    """Query whose moment exists with ``min eig(noise - p sigma2) >= margin * min eig(noise)``.

    ``spread`` bounds ``p sigma2`` relative to ``noise``; the default keeps the
    4p-th moment finite too, so sampled means and their standard errors are
    themselves well behaved.
    """
    p = int(rng.integers(1, max_p + 1))
    noise = random_spd(rng, dim)
    target = noise - margin * np.linalg.eigvalsh(noise).min() * np.eye(dim)
    b = random_spd(rng, dim)
    top = linalg.eigh(b, target, eigvals_only=True).max()
    sigma2 = b * rng.uniform(*spread) / (p * top)
    sigma1 = random_spd(rng, dim) * rng.uniform(0.1, 1.0) / p
    scale = np.sqrt(np.diag(noise) / p)
    vec = lambda: offset * scale * rng.standard_normal(dim)  # noqa: E731
    return MomentQuery(p, vec(), vec(), vec(), vec(), FullCovariance(sigma1),
                       FullCovariance(sigma2), FullCovariance(noise))


def convolution_factors(q):
    """Both factors from Gaussian convolution identities, independent of the
    completed-square algebra: ``E[exp(-+|d - r|^2_{M^-1}/2)]`` for ``d ~ N(mu, S)``
    equals ``sqrt(|M| / |M +- S|) exp(-+|r - mu|^2_{(M +- S)^-1} / 2)``."""
    M = q.noise.to_dense() / q.p
    s1, s2 = q.sigma1.to_dense(), q.sigma2.to_dense()
    ld = lambda a: np.linalg.slogdet(a)[1]  # noqa: E731
    r1, r2 = q.drho1 - q.mu1, q.drho2 - q.mu2
    log1 = 0.5 * (ld(M) - ld(M + s1)) - 0.5 * r1 @ np.linalg.solve(M + s1, r1)
    log2 = 0.5 * (ld(M) - ld(M - s2)) + 0.5 * r2 @ np.linalg.solve(M - s2, r2)
    return log1, log2


def quadrature_posterior(loglik, d_min, d_max, points=200_001, every=100):
    """CDF of the unnormalized posterior ``exp(loglik(D))`` on a dense grid.

    The log-likelihood is evaluated at every ``every``-th node and
    interpolated in between; the CDF uses the cumulative trapezoid rule.
    """
    from scipy.integrate import cumulative_trapezoid

    grid = np.linspace(d_min, d_max, points)
    coarse = grid[::every]
    logs = np.array([loglik(D) for D in coarse])
    logs = np.interp(grid, coarse, logs)
    dens = np.exp(logs - logs.max())
    cdf = cumulative_trapezoid(dens, grid, initial=0.0)
    cdf /= cdf[-1]
    mean = np.trapezoid(grid * dens, grid) / np.trapezoid(dens, grid)
    return grid, cdf, mean
