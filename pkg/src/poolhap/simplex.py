"""Additive log-ratio coordinates for the probability simplex.

The last component is the reference: ``x_h = log p_h - log p_H`` for
``h < H``. The log-Jacobian of the inverse map is ``sum_h log p_h``.
"""

from __future__ import annotations

import numpy as np

__all__ = ["to_unconstrained", "to_simplex", "log_simplex", "pullback_gradient", "dirichlet_target"]


def to_unconstrained(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore"):
        lp = np.log(p)
    return lp[..., :-1] - lp[..., -1:]


def log_simplex(x) -> np.ndarray:
    """``log p`` for unconstrained coordinates ``x``."""
    x = np.asarray(x, dtype=float)
    full = np.concatenate([x, np.zeros(x.shape[:-1] + (1,))], axis=-1)
    # scipy's logsumexp carries enough per-call overhead to dominate leapfrog steps
    top = full.max(axis=-1, keepdims=True)
    return full - (top + np.log(np.exp(full - top).sum(axis=-1, keepdims=True)))


def to_simplex(x) -> np.ndarray:
    return np.exp(log_simplex(x))


def pullback_gradient(grad_logp, p) -> np.ndarray:
    """Map a gradient with respect to ``log p`` onto the unconstrained coordinates."""
    g = np.asarray(grad_logp, dtype=float)
    return g[:-1] - p[:-1] * g.sum()


def dirichlet_target(alpha: float, loglik_logp=None):
    """Log density on unconstrained coordinates for a symmetric Dirichlet prior times a likelihood.

    ``loglik_logp(log_p)`` returns the log-likelihood and its gradient with
    respect to ``log p``. The returned function includes the log-Jacobian,
    which combines with the prior into ``alpha * sum(log p)``.
    """
    def f(x):
        lp = log_simplex(x)
        p = np.exp(lp)
        val = alpha * lp.sum()
        g = np.full(len(lp), float(alpha))
        if loglik_logp is not None:
            ll, gl = loglik_logp(lp)
            val += ll
            g = g + gl
        if not np.isfinite(val):
            return -np.inf, np.zeros(len(x))
        return val, pullback_gradient(g, p)
    return f
