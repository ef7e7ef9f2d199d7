"""Raw moments of the approximate likelihood ratio.

With independent Gaussian solver errors ``delta_i ~ N(mu_i, Sigma_i)`` the
p-th moment of ``l(D1) / l(D2)`` splits into two Gaussian integrals. The
first is always finite. The second converges only when
``Sigma_2^{-1} - M^{-1}`` is positive definite, with ``M = Sigma_eta / p``.
Inverting both sides reverses the Loewner order, so the condition reads
``Sigma_eta > p Sigma_2``: higher moments need smaller solver noise.

All values are returned on the log scale: the moments easily reach 1e30.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import linalg

from .core import (
    STRICTNESS_RTOL,
    Covariance,
    DiagonalCovariance,
    FullCovariance,
    InvalidArgument,
    ScalarCovariance,
    loewner_compare,
)
from .rng import check_seed, derive_seed, stream

__all__ = [
    "MomentQuery",
    "GaussianFactor",
    "Divergent",
    "MomentResult",
    "EmpiricalMoment",
    "moment_exists",
    "factor_one",
    "factor_two",
    "ratio_moment",
    "empirical_ratio_moment",
    "ratio_moment_batches",
    "scalar_query",
    "write_moment_csv",
    "MOMENT_HEADER",
]


@dataclass(frozen=True, eq=False)
class MomentQuery:
    p: int
    drho1: np.ndarray
    drho2: np.ndarray
    mu1: np.ndarray
    mu2: np.ndarray
    sigma1: Covariance
    sigma2: Covariance
    noise: Covariance

    def __post_init__(self):
        if int(self.p) != self.p or self.p < 1:
            raise InvalidArgument(f"moment order must be a positive integer, got {self.p}")
        n = self.noise.dim
        for name in ("drho1", "drho2", "mu1", "mu2"):
            v = np.array(getattr(self, name), dtype=float).ravel()
            if v.shape != (n,):
                raise InvalidArgument(f"{name} has length {v.size}, expected {n}")
            object.__setattr__(self, name, v)
        for name in ("sigma1", "sigma2"):
            if getattr(self, name).dim != n:
                raise InvalidArgument(f"{name} has dimension {getattr(self, name).dim}, expected {n}")

    @property
    def dim(self) -> int:
        return self.noise.dim


@dataclass(frozen=True, eq=False)
class GaussianFactor:
    """One Gaussian expectation ``sqrt(|S| / |Sigma|) exp(-C)``."""

    log_value: float
    S: Covariance
    alpha: np.ndarray
    C: float


@dataclass(frozen=True)
class Divergent:
    """The second expectation is infinite.

    ``reason`` is ``"singular"`` when ``Sigma_2^{-1} - M^{-1}`` is
    semidefinite within rounding, ``"indefinite"`` otherwise.
    """

    reason: str


@dataclass(frozen=True, eq=False)
class MomentResult:
    p: int
    exists: bool
    boundary: bool
    log_moment: float | None
    factor1: GaussianFactor
    factor2: GaussianFactor | None

    @property
    def moment(self) -> float:
        if not self.exists:
            return math.inf
        return math.exp(self.log_moment) if self.log_moment < 709.0 else math.inf


class EmpiricalMoment(NamedTuple):
    estimate: float
    standard_error: float


# ---------------------------------------------------------------------------
# precision-matrix helpers; diagonal inputs stay diagonal


def _all_diagonal(*covs: Covariance) -> bool:
    return all(c.is_diagonal for c in covs)


def _precision(c: Covariance, diagonal: bool) -> np.ndarray:
    if diagonal:
        return 1.0 / c.diagonal()
    inv = c.solve(np.eye(c.dim))
    return 0.5 * (inv + inv.T)


def _quad(prec: np.ndarray, v: np.ndarray) -> float:
    if prec.ndim == 1:
        return float(np.sum(prec * v * v))
    return float(v @ prec @ v)


def _apply(prec: np.ndarray, v: np.ndarray) -> np.ndarray:
    return prec * v if prec.ndim == 1 else prec @ v


class _Factored:
    """Cholesky factorization of a precision matrix (or its diagonal)."""

    def __init__(self, prec: np.ndarray):
        self.prec = prec
        if prec.ndim == 1:
            self.chol = None
        else:
            self.chol = linalg.cholesky(prec, lower=True)

    def solve(self, v):
        if self.chol is None:
            return v / self.prec
        return linalg.cho_solve((self.chol, True), v)

    def logdet(self) -> float:
        if self.chol is None:
            return float(np.sum(np.log(self.prec)))
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def inverse(self) -> Covariance:
        if self.chol is None:
            inv = 1.0 / self.prec
            if np.all(inv == inv[0]):
                return ScalarCovariance(float(inv[0]), inv.size)
            return DiagonalCovariance(inv)
        inv = self.solve(np.eye(self.prec.shape[0]))
        return FullCovariance(0.5 * (inv + inv.T))


def _trace(m: np.ndarray) -> float:
    return float(np.sum(m if m.ndim == 1 else np.diag(m)))


def _strictly_pd(prec: np.ndarray, scale: float) -> tuple[bool, bool]:
    """``(strict, within_margin)`` for a symmetric matrix or diagonal.

    Pivots must exceed ``1e-14 * scale``.
    """
    tol = STRICTNESS_RTOL * scale
    if prec.ndim == 1:
        strict = bool(np.all(prec > tol))
        return strict, (not strict) and bool(np.all(prec > -tol))
    try:
        chol = np.linalg.cholesky(prec)
        if float(np.min(np.diag(chol)) ** 2) > tol:
            return True, False
    except np.linalg.LinAlgError:
        pass
    try:
        np.linalg.cholesky(prec + 2 * tol * np.eye(prec.shape[0]))
        return False, True
    except np.linalg.LinAlgError:
        return False, False


def _check_dims(*items):
    dims = {np.size(x) if isinstance(x, np.ndarray) else x.dim for x in items}
    if len(dims) != 1:
        raise InvalidArgument(f"dimension mismatch among inputs: {sorted(dims)}")


# ---------------------------------------------------------------------------


def moment_exists(p: int, noise: Covariance, sigma2: Covariance) -> bool:
    """Whether the p-th moment is finite: ``noise`` strictly dominates ``p * sigma2``."""
    if p < 1:
        raise InvalidArgument("moment order must be positive")
    return loewner_compare(noise, sigma2.scaled(p))[0]


def factor_one(drho1, mu1, sigma1: Covariance, M: Covariance) -> GaussianFactor:
    """``E[exp(-|delta - drho|^2_{M^-1} / 2)]`` for ``delta ~ N(mu1, sigma1)``.

    Completing the square combines the two quadratic forms into one
    Gaussian with precision ``M^-1 + sigma1^-1``, which is always SPD.
    """
    drho1 = np.asarray(drho1, dtype=float)
    mu1 = np.asarray(mu1, dtype=float)
    _check_dims(drho1, mu1, sigma1, M)
    diag = _all_diagonal(sigma1, M)
    pm = _precision(M, diag)
    p1 = _precision(sigma1, diag)
    s_inv = _Factored(pm + p1)
    alpha = s_inv.solve(_apply(pm, drho1) + _apply(p1, mu1))
    C = 0.5 * (-_quad(s_inv.prec, alpha) + _quad(pm, drho1) + _quad(p1, mu1))
    log_value = 0.5 * (-s_inv.logdet() - sigma1.logdet()) - C
    return GaussianFactor(log_value, s_inv.inverse(), alpha, C)


def factor_two(drho2, mu2, sigma2: Covariance, M: Covariance) -> GaussianFactor | Divergent:
    """``E[exp(+|delta - drho|^2_{M^-1} / 2)]`` for ``delta ~ N(mu2, sigma2)``.

    The combined precision ``sigma2^-1 - M^-1`` has a sign flip; the
    integral is finite only when it is strictly positive definite, and a
    :class:`Divergent` is returned otherwise.
    """
    drho2 = np.asarray(drho2, dtype=float)
    mu2 = np.asarray(mu2, dtype=float)
    _check_dims(drho2, mu2, sigma2, M)
    diag = _all_diagonal(sigma2, M)
    pm = _precision(M, diag)
    p2 = _precision(sigma2, diag)
    s_dag = p2 - pm
    strict, near = _strictly_pd(s_dag, _trace(p2))
    if not strict:
        return Divergent("singular" if near else "indefinite")
    s_dag = _Factored(s_dag)
    gamma = _apply(p2, mu2) - _apply(pm, drho2)
    alpha = s_dag.solve(gamma)
    C = 0.5 * (-_quad(s_dag.prec, alpha) + _quad(p2, mu2) - _quad(pm, drho2))
    log_value = 0.5 * (-s_dag.logdet() - sigma2.logdet()) - C
    return GaussianFactor(log_value, s_dag.inverse(), alpha, C)


def ratio_moment(q: MomentQuery) -> MomentResult:
    """Closed-form p-th raw moment of the likelihood ratio."""
    M = q.noise.scaled(1.0 / q.p)
    f1 = factor_one(q.drho1, q.mu1, q.sigma1, M)
    exists, boundary = loewner_compare(q.noise, q.sigma2.scaled(q.p))
    f2 = None
    if exists:
        f2 = factor_two(q.drho2, q.mu2, q.sigma2, M)
        if isinstance(f2, Divergent):
            # the two certificates disagree only at the rounding level
            exists, boundary, f2 = False, True, None
    log_moment = f1.log_value + f2.log_value if exists else None
    return MomentResult(q.p, exists, boundary, log_moment, f1, f2)


# ---------------------------------------------------------------------------
# brute-force sampling oracle

_MC_CHUNK = 1 << 16


def _chunk_sums(q: MomentQuery, seed: int, index: int, n: int):
    rng = stream(seed, 4, index)
    d1 = q.mu1 + q.sigma1.sample(rng, n)
    d2 = q.mu2 + q.sigma2.sample(rng, n)
    r1 = q.drho1 - d1
    r2 = q.drho2 - d2
    n1 = np.einsum("ij,ji->i", r1, q.noise.solve(r1.T))
    n2 = np.einsum("ij,ji->i", r2, q.noise.solve(r2.T))
    v = 0.5 * q.p * (n2 - n1)
    m = float(np.max(v))
    e = np.exp(v - m)
    return m, float(np.sum(e)), float(np.sum(e * e))


def empirical_ratio_moment(q: MomentQuery, n_samples: int, seed: int,
                           chunk_size: int = _MC_CHUNK, threads: int = 1) -> EmpiricalMoment:
    """Sample mean and standard error of ``ratio**p`` over independent solver errors."""
    if n_samples < 2:
        raise InvalidArgument("need at least two samples")
    check_seed(seed)
    full, rest = divmod(int(n_samples), chunk_size)
    jobs = list(enumerate([chunk_size] * full + ([rest] if rest else [])))
    if threads == 1 or len(jobs) == 1:
        parts = [_chunk_sums(q, seed, i, n) for i, n in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda job: _chunk_sums(q, seed, *job), jobs))
    m = max(part[0] for part in parts)
    s1 = sum(a * math.exp(mc - m) for mc, a, _ in parts)
    s2 = sum(b * math.exp(2 * (mc - m)) for mc, _, b in parts)
    n = int(n_samples)
    log_mean = m + math.log(s1 / n)
    rel_var = max(n * s2 / (s1 * s1) - 1.0, 0.0) / (n - 1)
    estimate = math.exp(log_mean) if log_mean < 709.0 else math.inf
    return EmpiricalMoment(estimate, estimate * math.sqrt(rel_var))


def ratio_moment_batches(q: MomentQuery, n_batches: int, batch_size: int, seed: int,
                         threads: int = 1) -> np.ndarray:
    """Means of ``n_batches`` independent batches, for heavy-tail diagnostics."""
    return np.array([
        empirical_ratio_moment(q, batch_size, derive_seed(seed, 5, b), threads=threads).estimate
        for b in range(n_batches)
    ])


def scalar_query(p, sigma_eta, sigma_delta1, sigma_delta2, n=1, drho1=0.0, drho2=0.0,
                 mu1=0.0, mu2=0.0) -> MomentQuery:
    """Query with all covariances multiples of the identity.

    Residuals and means may be scalars (broadcast) or length-``n`` vectors.
    """
    vec = lambda v: np.broadcast_to(np.asarray(v, dtype=float), (n,)).copy()  # noqa: E731
    return MomentQuery(
        p, vec(drho1), vec(drho2), vec(mu1), vec(mu2),
        ScalarCovariance(sigma_delta1**2, n), ScalarCovariance(sigma_delta2**2, n),
        ScalarCovariance(sigma_eta**2, n),
    )


MOMENT_HEADER = ["p", "exists", "boundary", "log_moment", "log_factor1", "log_factor2"]


def write_moment_csv(results, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MOMENT_HEADER)
    fmt = lambda v: "" if v is None else format(v, ".17g")  # noqa: E731
    for r in results:
        w.writerow([r.p, str(r.exists).lower(), str(r.boundary).lower(), fmt(r.log_moment),
                    fmt(r.factor1.log_value), fmt(r.factor2.log_value if r.factor2 else None)])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text
