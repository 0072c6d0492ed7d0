"""
Synthetic pooled data.

``simulate_shared`` draws one frequency vector for all pools.
``simulate_timeseries`` draws frequency trajectories from a haploid
selection model whose growth rates are sums of sigmoids, keeps the most
variable of many well-behaved trajectories, and samples overdispersed
counts at the pool times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.special import expit, softmax

from .model import Dataset, PoolObservation, all_haplotypes, build_allele_count_matrix

__all__ = [
    "simulate_shared",
    "simulate_multi_marker",
    "TimeSeriesSimConfig",
    "TimeSeriesTruth",
    "simulate_timeseries",
    "growth_rates",
    "integrate_log_abundance",
    "dirmult_variance_factor",
]


def _haplotypes_for(H: int) -> list[str]:
    M = max(1, math.ceil(math.log2(H)))
    return all_haplotypes(M)[:H]


def _allele_pools(haplotypes, Z, sizes, covariates=None) -> Dataset:
    A = build_allele_count_matrix(haplotypes)
    pools = []
    for i, (z, n) in enumerate(zip(Z, sizes)):
        x = None if covariates is None else covariates[i]
        pools.append(PoolObservation(f"pool{i + 1}", int(n), A.entries @ z, A, x))
    return Dataset(tuple(haplotypes), tuple(pools))


def simulate_shared(H: int, N: int, n, conc: float, rng: np.random.Generator, haplotypes=None):
    """Frequencies ``p ~ Dir(conc)`` shared by ``N`` pools of size ``n``; observed allele counts.

    Returns ``(p, dataset, latents)``.
    """
    if H < 2:
        raise ValueError("need at least two haplotypes")
    haps = list(haplotypes) if haplotypes is not None else _haplotypes_for(H)
    sizes = np.broadcast_to(np.asarray(n, dtype=np.int64), (N,))
    p = rng.dirichlet(np.full(H, float(conc)))
    Z = np.array([rng.multinomial(int(k), p) for k in sizes], dtype=np.int64).reshape(N, H)
    return p, _allele_pools(haps, Z, sizes), Z


def simulate_multi_marker(M: int, n_haplotypes: int, N: int, n: int, conc: float, rng: np.random.Generator):
    """Shared-frequency data over ``n_haplotypes`` random distinct haplotypes of ``M`` markers."""
    idx = rng.choice(2 ** M, size=n_haplotypes, replace=False)
    haps = [format(int(k), f"0{M}b") for k in sorted(idx)]
    return simulate_shared(n_haplotypes, N, n, conc, rng, haplotypes=haps)


def dirmult_variance_factor(n: int, total_conc: float) -> float:
    """Variance of Dirichlet-multinomial counts relative to multinomial ones."""
    return (n + total_conc) / (1.0 + total_conc)


# ---------------------------------------------------------------------------
# time series


@dataclass(frozen=True)
class TimeSeriesSimConfig:
    H: int = 8
    D: int = 4
    horizon: float = 20.0
    N: int = 30
    n: int = 50
    dm_conc: float = 200.0
    accepted_runs: int = 100
    step: float = 0.01
    max_attempts: int = 100_000
    times: tuple[float, ...] | None = None

    def pool_times(self) -> np.ndarray:
        """Equally spaced pool times; for 30 pools these are ``0.66 i - 0.23``."""
        if self.times is not None:
            return np.asarray(self.times, dtype=float)
        h = 0.66 * 30 / self.N
        i = np.arange(1, self.N + 1)
        return h * i - 0.23 * h / 0.66


@dataclass
class TimeSeriesTruth:
    grid: np.ndarray
    log_abundance: np.ndarray
    rates: np.ndarray
    coefficients: dict
    variation: float
    haplotypes: tuple[str, ...]
    pool_times: np.ndarray
    latents: np.ndarray = field(default=None)

    def frequencies(self, t) -> np.ndarray:
        """True frequencies at arbitrary times, shape ``(len(t), H)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        spline = CubicHermiteSpline(self.grid, self.log_abundance, self.rates, axis=0)
        return softmax(spline(t), axis=1)

    @property
    def pool_frequencies(self) -> np.ndarray:
        return self.frequencies(self.pool_times)


def growth_rates(t, coef: dict) -> np.ndarray:
    """Growth rate of every haplotype at times ``t``, shape ``(len(t), H)``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    a, c, g = coef["alpha"], coef["c"], coef["gamma"]
    steps = (a[:, 1:] - a[:, :-1])[None] * expit((t[:, None, None] - c[None]) / g[None])
    return a[None, :, 0] + steps.sum(axis=2)


def _draw_coefficients(rng, H, D, T):
    c = np.sort(rng.uniform(0.0, T, (H, D)), axis=1)
    gamma = rng.uniform(0.2, 2.0, (H, D))
    edges = np.hstack([np.zeros((H, 1)), c, np.full((H, 1), T)])
    alpha = rng.normal(0.0, 1.0 / np.diff(edges, axis=1))
    return {"alpha": alpha, "c": c, "gamma": gamma}


def integrate_log_abundance(coef: dict, grid: np.ndarray) -> np.ndarray:
    """Fourth-order Runge-Kutta for ``d log N / dt = r(t)`` on a uniform grid, from 0."""
    h = grid[1] - grid[0]
    r0 = growth_rates(grid, coef)
    rm = growth_rates(grid[:-1] + h / 2, coef)
    incr = h / 6.0 * (r0[:-1] + 4 * rm + r0[1:])
    out = np.vstack([np.zeros((1, r0.shape[1])), np.cumsum(incr, axis=0)])
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("trajectory integration produced non-finite values")
    return out


def _variation(grid, p, lo=5, hi=14):
    idx = [int(round(t / (grid[1] - grid[0]))) for t in range(lo, hi + 2)]
    q = p[idx]
    return float(np.abs(np.diff(q, axis=0)).sum())


def simulate_timeseries(config: TimeSeriesSimConfig, rng: np.random.Generator):
    """Frequency trajectories and overdispersed pooled allele counts.

    Starting abundances are set so that every haplotype has median
    abundance 1 over the horizon. Draws whose frequencies change faster
    than 1 per unit time are discarded; among ``accepted_runs`` accepted
    draws the one with the largest variation between times 5 and 15 is kept.

    Returns ``(truth, dataset)``.
    """
    H, T = config.H, config.horizon
    grid = np.linspace(0.0, T, int(round(T / config.step)) + 1)
    best, accepted = None, 0
    for _ in range(config.max_attempts):
        coef = _draw_coefficients(rng, H, config.D, T)
        logn = integrate_log_abundance(coef, grid)
        logn = logn - np.median(logn, axis=0)
        r = growth_rates(grid, coef)
        p = softmax(logn, axis=1)
        dp = p * (r - np.sum(p * r, axis=1, keepdims=True))
        if np.max(np.abs(dp)) >= 1.0:
            continue
        accepted += 1
        v = _variation(grid, p)
        if best is None or v > best[0]:
            best = (v, coef, logn, r)
        if accepted >= config.accepted_runs:
            break
    if best is None:
        raise RuntimeError("no trajectory satisfied the rate-of-change condition")
    M = max(1, math.ceil(math.log2(H)))
    haps = tuple(all_haplotypes(M)[:H])
    times = config.pool_times()
    truth = TimeSeriesTruth(grid, best[2], best[3], best[1], best[0], haps, times)
    P = truth.pool_frequencies
    Z = np.empty((len(times), H), dtype=np.int64)
    for i, p in enumerate(P):
        q = rng.dirichlet(np.maximum(config.dm_conc * p, 1e-300))
        Z[i] = rng.multinomial(config.n, q / q.sum())
    truth.latents = Z
    data = _allele_pools(haps, Z, np.full(len(times), config.n), covariates=times[:, None])
    return truth, data
