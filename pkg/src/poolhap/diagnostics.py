"""
Evaluation of posterior output: total variation distance, rank-normalised
split R-hat and bulk effective sample size, and credible-interval coverage.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy.stats import norm, rankdata

__all__ = ["tvd", "tvd_by_haplotype", "ess", "rhat", "credible_coverage", "thin", "binomial_band"]

log = logging.getLogger(__name__)


def tvd(a, b) -> float:
    """Half the L1 distance between two frequency vectors on the same index set."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return 0.5 * float(np.abs(a - b).sum())


def tvd_by_haplotype(a: dict, b: dict) -> float:
    """TVD between frequency maps keyed by haplotype; missing haplotypes count as 0."""
    keys = set(a) | set(b)
    return 0.5 * sum(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in keys)


def _as_chains(chains) -> np.ndarray:
    x = np.asarray(chains, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError("expected draws shaped (chains, iterations)")
    return x


def _split(x: np.ndarray) -> np.ndarray:
    n = x.shape[1] // 2
    return np.vstack([x[:, :n], x[:, x.shape[1] - n:]])


def _rank_normalise(x: np.ndarray) -> np.ndarray:
    r = rankdata(x, method="average").reshape(x.shape)
    return norm.ppf((r - 3 / 8) / (x.size + 1 / 4))


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    m = 1 << (2 * n - 1).bit_length()
    xc = x - x.mean(axis=-1, keepdims=True)
    f = np.fft.rfft(xc, n=m, axis=-1)
    ac = np.fft.irfft(f * np.conj(f), n=m, axis=-1)[..., :n]
    return ac / n


def _ess_raw(x: np.ndarray) -> float:
    m, n = x.shape
    acov = _autocov(x)
    chain_mean = x.mean(axis=1)
    mean_var = acov[:, 0].mean() * n / (n - 1)
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += chain_mean.var(ddof=1)
    if var_plus <= 0:
        return float(m * n)
    rho = 1 - (mean_var - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer's initial monotone sequence over pairs of autocorrelations
    t = 0
    pairs = []
    while t + 1 < n:
        s = rho[t] + rho[t + 1]
        if s < 0:
            break
        pairs.append(s)
        t += 2
    pairs = np.minimum.accumulate(np.array(pairs)) if pairs else np.array([1.0])
    tau = -1 + 2 * pairs.sum()
    tau = max(tau, 1 / np.log10(m * n))
    return float(m * n / tau)


def ess(chains) -> float:
    """Bulk effective sample size of one scalar quantity from ``(chains, draws)``.

    Constant input (zero variance) is defined to have ESS equal to the
    total number of draws.
    """
    x = _as_chains(chains)
    if np.ptp(x) == 0:
        log.info("constant draws; ESS set to total draw count")
        return float(x.size)
    if x.shape[1] < 4:
        raise ValueError("need at least four draws per chain")
    return _ess_raw(_rank_normalise(_split(x)))


def _rhat_raw(x: np.ndarray) -> float:
    m, n = x.shape
    w = x.var(axis=1, ddof=1).mean()
    b = n * x.mean(axis=1).var(ddof=1)
    if w == 0:
        return 1.0 if b == 0 else np.inf
    var_plus = (n - 1) / n * w + b / n
    return float(np.sqrt(var_plus / w))


def rhat(chains) -> float:
    """Rank-normalised split R-hat (maximum of the bulk and folded versions).

    Raises
    ------
    ValueError
        If there are fewer than four draws per chain.
    """
    x = _as_chains(chains)
    if x.shape[1] < 4:
        raise ValueError("R-hat needs at least four draws per chain")
    if np.ptp(x) == 0:
        return 1.0
    s = _split(x)
    if np.all(s.var(axis=1) == 0):
        # every half-chain constant but at different values: no within-chain spread
        return np.inf
    bulk = _rhat_raw(_rank_normalise(s))
    folded = _rhat_raw(_rank_normalise(np.abs(s - np.median(s))))
    return max(bulk, folded)


def thin(draws: np.ndarray, per_chain: int) -> np.ndarray:
    """Keep ``per_chain`` equally spaced draws from every chain (axis 1)."""
    n = draws.shape[1]
    if per_chain >= n:
        return draws
    idx = np.linspace(0, n - 1, per_chain).round().astype(int)
    return draws[:, idx]


def credible_coverage(draws, truth, levels=(0.5, 0.8, 0.9, 0.95)) -> dict:
    """Fraction of quantities whose equal-tail interval contains the truth.

    ``draws`` has shape ``(datasets, n_draws, H)`` (or ``(n_draws, H)`` for
    a single dataset) and ``truth`` has shape ``(datasets, H)``. Entries
    whose true value is exactly 0 are excluded.
    """
    d = np.asarray(draws, dtype=float)
    t = np.asarray(truth, dtype=float)
    if d.ndim == 2:
        d, t = d[None], t[None]
    mask = t > 0
    out = {}
    for lv in levels:
        lo = np.quantile(d, (1 - lv) / 2, axis=1)
        hi = np.quantile(d, 1 - (1 - lv) / 2, axis=1)
        hit = (t >= lo) & (t <= hi)
        out[float(lv)] = float(hit[mask].mean()) if mask.any() else float("nan")
    return out


def binomial_band(n: int, p: float, mass: float = 0.95) -> tuple[float, float]:
    """Central ``mass`` interval of a Binomial(n, p) proportion."""
    from scipy.stats import binom
    lo = binom.ppf((1 - mass) / 2, n, p) / n
    hi = binom.ppf(1 - (1 - mass) / 2, n, p) / n
    return float(lo), float(hi)
