"""Brute-force reference computations shared by the tests."""

import itertools
import math

import numpy as np


def compositions(n, H):
    """Every nonnegative integer H-tuple summing to n (stars and bars)."""
    for cuts in itertools.combinations(range(n + H - 1), H - 1):
        prev, out = -1, []
        for c in cuts:
            out.append(c - prev - 1)
            prev = c
        out.append(n + H - 1 - prev - 1)
        yield tuple(out)


def brute_fiber(a, y, n):
    a = np.asarray(a)
    y = np.asarray(y)
    return {z for z in compositions(n, a.shape[1]) if np.array_equal(a @ np.array(z), y)}


def multinomial_pmf(z, p):
    n = sum(z)
    out = math.factorial(n)
    for zi, pi in zip(z, p):
        out = out / math.factorial(zi) * pi ** zi
    return out


def brute_likelihood(a, y, n, p):
    return sum(multinomial_pmf(z, p) for z in brute_fiber(a, y, n))


def random_binary_system(rng, H, R):
    a = rng.integers(0, 2, size=(R, H))
    return a


def grid_posterior(a, y, n, alpha=1.0, steps=200):
    """Grid points on the 4-simplex interior and normalised posterior weights.

    The prior is a symmetric Dirichlet; the likelihood sums the multinomial
    over the brute-force fiber.
    """
    from scipy.special import gammaln

    H = a.shape[1]
    assert H == 4
    zs = np.array(sorted(brute_fiber(np.vstack([np.ones(H, int), a]), np.r_[n, y], n)), dtype=float)
    lc = gammaln(n + 1) - gammaln(zs + 1).sum(axis=1)
    g = (np.arange(steps) + 0.5) / steps
    mesh = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    mesh = mesh[mesh.sum(axis=1) < 1]
    p = np.c_[mesh, 1 - mesh.sum(axis=1)]
    logp = np.log(p)
    logw = np.logaddexp.reduce(lc[None, :] + logp @ zs.T, axis=1) + (alpha - 1) * logp.sum(axis=1)
    w = np.exp(logw - logw.max())
    return p, w / w.sum()
