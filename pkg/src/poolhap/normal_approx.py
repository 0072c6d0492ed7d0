"""
Gaussian approximation of the pooled-count likelihood.

For a pool of size ``n`` the observed allele counts are treated as
``N(n A p, n [A (diag p - p p^T) A^T + eps I])``. The all-ones row is not
part of the Gaussian: its variance is identically zero, so only the
stabilising constant would remain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import NumericalSingularityError
from .model import ConfigurationMatrix, preprocess

__all__ = [
    "DEFAULT_EPSILON",
    "StabilizedGaussian",
    "stabilized_gaussian",
    "approx_log_likelihood",
    "approx_log_likelihood_gradient",
    "ApproxLikelihood",
]

DEFAULT_EPSILON = 1e-9
_LOG2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class StabilizedGaussian:
    mean: np.ndarray
    covariance: np.ndarray
    epsilon: float


def _allele_rows(matrix) -> np.ndarray:
    a = np.asarray(matrix.entries if isinstance(matrix, ConfigurationMatrix) else matrix, dtype=float)
    return a, ~np.all(a == 1, axis=1)


def _unit_cov(a: np.ndarray, p: np.ndarray, eps: float):
    m = a @ p
    S = (a * p) @ a.T - np.outer(m, m)
    S[np.diag_indices_from(S)] += eps
    return m, S


def _factor(S):
    try:
        return cho_factor(S, lower=True)
    except LinAlgError as exc:
        raise NumericalSingularityError(
            "approximate covariance is not positive definite; increase the stabilising constant") from exc


def stabilized_gaussian(matrix, size: int, p, epsilon: float = DEFAULT_EPSILON) -> StabilizedGaussian:
    a, keep = _allele_rows(matrix)
    m, S = _unit_cov(a[keep], np.asarray(p, float), epsilon)
    return StabilizedGaussian(size * m, size * S, epsilon)


def approx_log_likelihood(matrix, counts, size: int, p, epsilon: float = DEFAULT_EPSILON) -> float:
    """Log density of the observed counts under the stabilised Gaussian.

    Raises
    ------
    NumericalSingularityError
        If the covariance cannot be Cholesky factorised.
    """
    a, keep = _allele_rows(matrix)
    y = np.asarray(counts, float)[keep]
    if size <= 0:
        raise ValueError("pool size must be positive")
    m, S = _unit_cov(a[keep], np.asarray(p, float), epsilon)
    cf = _factor(size * S)
    r = y - size * m
    logdet = 2 * np.log(np.diag(cf[0])).sum()
    return float(-0.5 * r @ cho_solve(cf, r) - 0.5 * (logdet + len(r) * _LOG2PI))


def approx_log_likelihood_gradient(matrix, counts, size: int, p, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Gradient of :func:`approx_log_likelihood` with respect to ``p`` (unconstrained)."""
    a, keep = _allele_rows(matrix)
    a = a[keep]
    y = np.asarray(counts, float)[keep]
    p = np.asarray(p, float)
    m, S = _unit_cov(a, p, epsilon)
    cf = _factor(S)
    r = y - size * m
    w = cho_solve(cf, r) / size
    G = cho_solve(cf, np.eye(len(m)))
    aw = a.T @ w
    quad = size * aw + 0.5 * size * (aw ** 2 - 2 * aw * (m @ w))
    logdet = -0.5 * (np.einsum("rh,rs,sh->h", a, G, a) - 2 * a.T @ (G @ m))
    return quad + logdet


class ApproxLikelihood:
    """Summed Gaussian log-likelihood over many pools.

    Pools sharing a reduced matrix share one Cholesky factorisation per
    evaluation.
    """

    def __init__(self, systems, epsilon: float = DEFAULT_EPSILON):
        self.epsilon = float(epsilon)
        groups: dict[bytes, list] = {}
        for matrix, counts, size in systems:
            if int(size) == 0:
                continue
            red, y = preprocess(matrix, counts, size)
            a = red.entries[1:].astype(float)
            g = groups.setdefault(red.key, [a, [], []])
            g[1].append(y[1:].astype(float))
            g[2].append(float(size))
        self.groups = [(np.ascontiguousarray(a), np.array(ys).reshape(len(ns), a.shape[0]), np.array(ns))
                       for a, ys, ns in groups.values()]

    def value_and_grad(self, p):
        """Log-likelihood and gradient with respect to ``p``."""
        p = np.ascontiguousarray(p, dtype=float)
        val, grad = 0.0, np.zeros_like(p)
        for a, Y, n in self.groups:
            if a.shape[0] == 0:
                continue
            v, ok = _group_value_and_grad(a, Y, n, p, self.epsilon, grad)
            if not ok:
                raise NumericalSingularityError(
                    "approximate covariance is not positive definite; increase the stabilising constant")
            val += v
        return val, grad

    def value_and_grad_logp(self, logp):
        p = np.exp(logp)
        val, g = self.value_and_grad(p)
        return val, g * p


@njit(cache=True)
def _group_value_and_grad(a, Y, n, p, eps, grad):
    # one shared unit covariance for all pools of the group; accumulates into grad
    R, H = a.shape
    m = a @ p
    S = np.empty((R, R))
    for r in range(R):
        for s in range(R):
            acc = 0.0
            for h in range(H):
                acc += a[r, h] * a[s, h] * p[h]
            S[r, s] = acc - m[r] * m[s]
        S[r, r] += eps
    L = np.zeros((R, R))
    for j in range(R):
        d = S[j, j]
        for k in range(j):
            d -= L[j, k] * L[j, k]
        if not d > 0.0:
            return 0.0, False
        L[j, j] = np.sqrt(d)
        for i in range(j + 1, R):
            acc = S[i, j]
            for k in range(j):
                acc -= L[i, k] * L[j, k]
            L[i, j] = acc / L[j, j]
    logdet = 0.0
    for j in range(R):
        logdet += 2.0 * np.log(L[j, j])
    Linv = np.linalg.inv(L)
    G = Linv.T @ Linv
    val = 0.0
    log2pi = np.log(2.0 * np.pi)
    for i in range(Y.shape[0]):
        ni = n[i]
        r = Y[i] - ni * m
        w = (G @ r) / ni
        mw = 0.0
        quad = 0.0
        for k in range(R):
            mw += m[k] * w[k]
            quad += w[k] * r[k]
        val += -0.5 * quad - 0.5 * (R * (log2pi + np.log(ni)) + logdet)
        aw = a.T @ w
        for h in range(H):
            grad[h] += ni * (aw[h] + 0.5 * (aw[h] * aw[h] - 2.0 * aw[h] * mw))
    Gm = G @ m
    N = Y.shape[0]
    for h in range(H):
        acc = 0.0
        for r in range(R):
            for s in range(R):
                acc += a[r, h] * G[r, s] * a[s, h]
        accm = 0.0
        for r in range(R):
            accm += a[r, h] * Gm[r]
        grad[h] -= 0.5 * N * (acc - 2.0 * accm)
    return val, True
