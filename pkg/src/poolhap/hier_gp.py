"""
Hierarchical model with pool-specific frequencies ``p_i = softmax(f(t_i))``.

Each haplotype's latent field ``f_h`` is a Gaussian process over the pool
covariate (time) with constant mean ``mu_h`` and a rational quadratic plus
white-noise kernel. The sampler works on non-centred coordinates
``f_h = mu_h + L_h eta_h`` with ``L_h`` the Cholesky factor of the kernel
matrix, free means ``mu_1..mu_{H-1}`` (the last is minus their sum), and
log-transformed scales. Three treatments of the latent counts are offered:

* ``exact``: enumerate feasible sets and marginalise inside the target;
* ``approx``: Gaussian approximation inside the target;
* ``latent``: alternate one NUTS transition with Markov-basis updates of
  every pool's latent counts under the current frequencies.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import jax
import jax.numpy as jnp
import numpy as np
from jax.scipy.special import logsumexp as jlogsumexp
from numba import njit
from scipy import stats
from scipy.linalg import LinAlgError, cholesky, solve_triangular
from scipy.special import gammaln, logsumexp

from .errors import NumericalSingularityError, ProposalStuckError
from .feasible import enumerate_feasible
from .model import Dataset, check_latent_counts
from .normal_approx import DEFAULT_EPSILON
from .nuts import NUTSSampler
from .samplers import _pack_moves, _random_walk, find_initial_latents, markov_bases_for

jax.config.update("jax_enable_x64", True)

__all__ = [
    "GPKernelParams",
    "Hyperpriors",
    "HierConfig",
    "HierDraws",
    "kernel_matrix",
    "inverse_gamma_interval",
    "log_posterior_hier",
    "propose_latent_move_hier",
    "run_hier_sampler",
    "posterior_predict",
    "predictive_summary",
]

JITTER = 1e-8


@dataclass(frozen=True)
class GPKernelParams:
    mu: np.ndarray
    s: np.ndarray
    tau: np.ndarray
    sigma: float

    def __post_init__(self):
        if np.any(np.asarray(self.s) <= 0) or np.any(np.asarray(self.tau) <= 0) or not self.sigma > 0:
            raise ValueError("kernel scales must be positive")


@dataclass(frozen=True)
class Hyperpriors:
    """Prior settings: sum-to-zero normal on the means, inverse-gamma on the scales."""

    mu_sd: float = 2.0
    s: tuple[float, float] = (3.0, 3.0)
    tau: tuple[float, float] = (3.0, 5.0)
    sigma: tuple[float, float] = (3.0, 1.0)


@dataclass(frozen=True)
class HierConfig:
    variant: str = "latent"
    chains: int = 4
    burn_in: int = 1000
    iters: int = 1000
    updates_factor: int = 10
    seed: int = 0
    target_accept: float = 0.8
    max_tree_depth: int = 10
    epsilon: float = DEFAULT_EPSILON
    max_solutions: int = 10 ** 7
    max_seconds: float = 60.0
    store_latents: bool = True

    def __post_init__(self):
        if self.variant not in ("latent", "exact", "approx"):
            raise ValueError("variant must be latent, exact or approx")


@dataclass
class HierDraws:
    """Posterior draws; leading axes are ``(chain, iteration)``."""

    haplotypes: tuple[str, ...]
    times: np.ndarray
    P: np.ndarray
    f: np.ndarray
    mu: np.ndarray
    s: np.ndarray
    tau: np.ndarray
    sigma: np.ndarray
    variant: str = ""
    latents: np.ndarray | None = None
    stats: dict = field(default_factory=dict)

    def flat(self, name: str) -> np.ndarray:
        a = getattr(self, name)
        return a.reshape((-1,) + a.shape[2:])

    def save(self, path) -> None:
        arrays = {k: getattr(self, k) for k in ("times", "P", "f", "mu", "s", "tau", "sigma")}
        if self.latents is not None:
            arrays["latents"] = self.latents
        np.savez_compressed(path, haplotypes=np.array(self.haplotypes), variant=np.array(self.variant), **arrays)

    @classmethod
    def load(cls, path) -> "HierDraws":
        d = np.load(path, allow_pickle=False)
        return cls(tuple(str(h) for h in d["haplotypes"]), d["times"], d["P"], d["f"], d["mu"], d["s"],
                   d["tau"], d["sigma"], str(d["variant"]), d["latents"] if "latents" in d else None)


def kernel_matrix(times, s: float, tau: float, sigma: float = 0.0, times2=None) -> np.ndarray:
    """Rational quadratic kernel plus white noise on the diagonal (only when ``times2`` is omitted)."""
    t1 = np.asarray(times, dtype=float)
    t2 = t1 if times2 is None else np.asarray(times2, dtype=float)
    d2 = (t1[:, None] - t2[None, :]) ** 2
    K = s ** 2 / (1.0 + d2 / (2.0 * tau ** 2))
    if times2 is None:
        K = K + sigma ** 2 * np.eye(len(t1))
    return K


def _cholesky_with_jitter(K: np.ndarray, s: float) -> np.ndarray:
    try:
        return cholesky(K, lower=True)
    except LinAlgError:
        pass
    try:
        return cholesky(K + JITTER * s ** 2 * np.eye(len(K)), lower=True)
    except LinAlgError as exc:
        raise NumericalSingularityError("kernel matrix is not positive definite after jitter") from exc


def inverse_gamma_interval(shape: float, scale: float, mass: float = 0.99) -> tuple[float, float]:
    """Central interval holding ``mass`` of an inverse-gamma distribution."""
    lo = (1 - mass) / 2
    d = stats.invgamma(shape, scale=scale)
    return float(d.ppf(lo)), float(d.ppf(1 - lo))


# ---------------------------------------------------------------------------
# target construction


def _ig_logpdf(x, a, b):
    return a * jnp.log(b) - jax.scipy.special.gammaln(a) - (a + 1) * jnp.log(x) - b / x


class _Layout:
    def __init__(self, H: int, N: int):
        self.H, self.N = H, N
        self.dim = H * N + (H - 1) + 2 * H + 1

    def unpack(self, x):
        H, N = self.H, self.N
        o = H * N
        eta = x[:o].reshape(H, N)
        mu_free = x[o:o + H - 1]
        mu = jnp.concatenate([mu_free, -jnp.sum(mu_free, keepdims=True)])
        o += H - 1
        log_s, log_tau, log_sigma = x[o:o + H], x[o + H:o + 2 * H], x[o + 2 * H]
        return eta, mu, log_s, log_tau, log_sigma


def _rq_chol(times, s, tau, sigma):
    d2 = (times[:, None] - times[None, :]) ** 2
    N = times.shape[0]
    K = s[:, None, None] ** 2 / (1.0 + d2[None] / (2.0 * tau[:, None, None] ** 2)) + sigma ** 2 * jnp.eye(N)
    L = jnp.linalg.cholesky(K)
    Lj = jnp.linalg.cholesky(K + JITTER * s[:, None, None] ** 2 * jnp.eye(N))
    bad = jnp.any(jnp.isnan(L), axis=(1, 2))
    return jnp.where(bad[:, None, None], Lj, L)


def _prior_terms(mu, s, tau, sigma, hp: Hyperpriors):
    lp = -0.5 * jnp.sum(mu ** 2) / hp.mu_sd ** 2
    lp += jnp.sum(_ig_logpdf(s, *hp.s)) + jnp.sum(_ig_logpdf(tau, *hp.tau)) + _ig_logpdf(sigma, *hp.sigma)
    return lp


def _build_likelihood(dataset: Dataset, variant: str, config: HierConfig):
    """Return ``loglik(logP, Z)`` for the chosen variant (``Z`` ignored unless latent)."""
    N = dataset.N
    if variant == "latent":
        return lambda logP, Z: jnp.sum(Z * logP)
    if variant == "exact":
        blocks, coefs, segs = [], [], []
        for i, pool in enumerate(dataset.pools):
            fs = enumerate_feasible(pool.matrix, pool.counts, pool.size,
                                    max_solutions=config.max_solutions, max_seconds=config.max_seconds)
            blocks.append(fs.solutions)
            coefs.append(fs.log_multinomial_coefs)
            segs.append(np.full(len(fs), i))
        Zall = jnp.asarray(np.vstack(blocks), dtype=jnp.float64)
        coef = jnp.asarray(np.concatenate(coefs))
        seg = jnp.asarray(np.concatenate(segs))

        def exact(logP, Z):
            sc = coef + jnp.sum(Zall * logP[seg], axis=1)
            m = jax.lax.stop_gradient(jax.ops.segment_max(sc, seg, num_segments=N))
            tot = jax.ops.segment_sum(jnp.exp(sc - m[seg]), seg, num_segments=N)
            return jnp.sum(m + jnp.log(tot))
        return exact

    groups: dict[bytes, list] = {}
    for i, pool in enumerate(dataset.pools):
        if pool.size == 0:
            continue
        red, y = pool.reduced
        g = groups.setdefault(red.key, [red.entries[1:].astype(float), [], [], []])
        g[1].append(i)
        g[2].append(y[1:].astype(float))
        g[3].append(float(pool.size))
    packed = [(jnp.asarray(a), jnp.asarray(idx), jnp.asarray(np.array(Y).reshape(len(idx), a.shape[0])),
               jnp.asarray(n)) for a, idx, Y, n in groups.values() if a.shape[0]]
    eps = config.epsilon

    def approx(logP, Z):
        total = 0.0
        for a, idx, Y, n in packed:
            p = jnp.exp(logP[idx])
            m = p @ a.T
            S = jnp.einsum("rh,kh,sh->krs", a, p, a) - m[:, :, None] * m[:, None, :] + eps * jnp.eye(a.shape[0])
            Sig = n[:, None, None] * S
            L = jnp.linalg.cholesky(Sig)
            r = Y - n[:, None] * m
            w = jax.scipy.linalg.solve_triangular(L, r[..., None], lower=True)[..., 0]
            logdet = 2 * jnp.sum(jnp.log(jnp.diagonal(L, axis1=1, axis2=2)), axis=1)
            total += jnp.sum(-0.5 * jnp.sum(w ** 2, axis=1) - 0.5 * logdet - 0.5 * a.shape[0] * jnp.log(2 * jnp.pi))
        return total
    return approx


def _make_target(dataset: Dataset, variant: str, config: HierConfig, hp: Hyperpriors):
    H, N = dataset.H, dataset.N
    layout = _Layout(H, N)
    times = jnp.asarray(dataset.covariates()[:, 0])
    loglik = _build_likelihood(dataset, variant, config)

    def logpost(x, Z):
        eta, mu, log_s, log_tau, log_sigma = layout.unpack(x)
        s, tau, sigma = jnp.exp(log_s), jnp.exp(log_tau), jnp.exp(log_sigma)
        L = _rq_chol(times, s, tau, sigma)
        f = mu[:, None] + jnp.einsum("hij,hj->hi", L, eta)
        logP = f.T - jlogsumexp(f.T, axis=1, keepdims=True)
        lp = -0.5 * jnp.sum(eta ** 2)
        lp += _prior_terms(mu, s, tau, sigma, hp) + jnp.sum(log_s) + jnp.sum(log_tau) + log_sigma
        return lp + loglik(logP, Z)

    def derived(x):
        eta, mu, log_s, log_tau, log_sigma = layout.unpack(x)
        s, tau, sigma = jnp.exp(log_s), jnp.exp(log_tau), jnp.exp(log_sigma)
        L = _rq_chol(times, s, tau, sigma)
        f = mu[:, None] + jnp.einsum("hij,hj->hi", L, eta)
        logP = f.T - jlogsumexp(f.T, axis=1, keepdims=True)
        return f, logP, mu, s, tau, sigma

    return layout, jax.jit(jax.value_and_grad(logpost)), jax.jit(derived)


def log_posterior_hier(f, params: GPKernelParams, latents, dataset: Dataset,
                       hyperpriors: Hyperpriors = Hyperpriors()):
    """Log posterior density (up to a constant) in centred coordinates, with its gradient.

    Returns ``(value, grads)`` where ``grads`` maps ``f``, ``mu``, ``s``,
    ``tau`` and ``sigma`` to gradients. Infeasible latent counts or means
    off the sum-to-zero plane give ``-inf``.
    """
    H, N = dataset.H, dataset.N
    f = np.asarray(f, dtype=float).reshape(H, N)
    Z = np.asarray(latents, dtype=np.int64)
    mu = np.asarray(params.mu, dtype=float)
    for pool, z in zip(dataset.pools, Z):
        if not check_latent_counts(pool.matrix, pool.counts, z, pool.size):
            return -np.inf, None
    if abs(mu.sum()) > 1e-9 * H:
        return -np.inf, None
    times = jnp.asarray(dataset.covariates()[:, 0])
    n = dataset.sizes
    log_coef = jnp.asarray(gammaln(n + 1) - gammaln(Z + 1).sum(axis=1))
    Zj = jnp.asarray(Z, dtype=jnp.float64)

    def fn(f, mu, s, tau, sigma):
        L = _rq_chol(times, s, tau, sigma)
        r = f - mu[:, None]
        w = jax.vmap(lambda Lh, rh: jax.scipy.linalg.solve_triangular(Lh, rh, lower=True))(L, r)
        logdet = 2 * jnp.sum(jnp.log(jnp.diagonal(L, axis1=1, axis2=2)))
        gp = -0.5 * jnp.sum(w ** 2) - 0.5 * logdet - 0.5 * H * N * jnp.log(2 * jnp.pi)
        logP = f.T - jlogsumexp(f.T, axis=1, keepdims=True)
        lik = jnp.sum(log_coef) + jnp.sum(Zj * logP)
        return gp + _prior_terms(mu, s, tau, sigma, hyperpriors) + lik

    args = (jnp.asarray(f), jnp.asarray(mu), jnp.asarray(params.s, dtype=float),
            jnp.asarray(params.tau, dtype=float), jnp.asarray(float(params.sigma)))
    val, grads = jax.value_and_grad(fn, argnums=(0, 1, 2, 3, 4))(*args)
    names = ("f", "mu", "s", "tau", "sigma")
    return float(val), {k: np.asarray(g) for k, g in zip(names, grads)}


# ---------------------------------------------------------------------------
# latent updates


def propose_latent_move_hier(z, moves, p, rng: np.random.Generator, fiber_size: int | None = None):
    """Propose ``z + d u`` with probability proportional to ``Mult(z + d u; n, p)``.

    Returns ``(proposal, forward_logprob, reverse_logprob)``; the
    Metropolis-Hastings log ratio is ``log p(z*) - log p(z) + reverse - forward``.
    """
    z = np.asarray(z, dtype=np.int64)
    moves = np.asarray(moves, dtype=np.int64).reshape(-1, len(z))
    with np.errstate(divide="ignore"):
        logp = np.log(np.asarray(p, dtype=float))

    def neighbours(x):
        out = []
        for u in moves:
            for d in (1, -1):
                c = x + d * u
                if np.all(c >= 0):
                    with np.errstate(invalid="ignore"):
                        w = float(np.sum(np.where(c > 0, c * logp, 0.0)) - np.sum(gammaln(c + 1)))
                    out.append((c, w))
        return out

    fwd = neighbours(z)
    if not fwd:
        if fiber_size is not None and fiber_size > 1:
            raise ProposalStuckError("no valid neighbour in a fiber with several elements")
        return z.copy(), 0.0, 0.0
    lw = np.array([w for _, w in fwd])
    if not np.isfinite(lw).any():
        return z.copy(), 0.0, 0.0
    pr = np.exp(lw - lw.max())
    pr /= pr.sum()
    k = rng.choice(len(fwd), p=pr)
    prop = fwd[k][0]
    rev = neighbours(prop)
    rlw = np.array([w for _, w in rev])
    back = next(i for i, (c, _) in enumerate(rev) if np.array_equal(c, z))
    return prop, float(np.log(pr[k])), float(rlw[back] - logsumexp(rlw))


@njit(cache=True)
def _hier_latent_updates(Z, logP, counts, move_start, move_end, moves, lfact, unif, buf_w, buf_k):
    """For each pool run ``counts[i]`` multinomial-weighted basis updates in place."""
    N, H = Z.shape
    pos = 0
    accepted = 0
    for i in range(N):
        m0, m1 = move_start[i], move_end[i]
        for _ in range(counts[i]):
            u0 = unif[pos, 0]
            u1 = unif[pos, 1]
            pos += 1
            nc = 0
            top = -np.inf
            for k in range(m0, m1):
                for sgn in (1, -1):
                    ok = True
                    lw = 0.0
                    for h in range(H):
                        d = sgn * moves[k, h]
                        if d != 0:
                            zn = Z[i, h] + d
                            if zn < 0:
                                ok = False
                                break
                            lw += d * logP[i, h] - lfact[zn] + lfact[Z[i, h]]
                    if ok and lw > -np.inf:
                        buf_w[nc] = lw
                        buf_k[nc] = sgn * (k + 1)
                        if lw > top:
                            top = lw
                        nc += 1
            if nc == 0:
                continue
            s = 0.0
            for c in range(nc):
                s += np.exp(buf_w[c] - top)
            lse_fwd = top + np.log(s)
            r = u0 * s
            c = 0
            acc = np.exp(buf_w[0] - top)
            while acc < r and c < nc - 1:
                c += 1
                acc += np.exp(buf_w[c] - top)
            sel = buf_k[c]
            sgn = 1 if sel > 0 else -1
            k = abs(sel) - 1
            d_star = buf_w[c]
            for h in range(H):
                Z[i, h] += sgn * moves[k, h]
            top2 = -np.inf
            nc2 = 0
            for k2 in range(m0, m1):
                for sgn2 in (1, -1):
                    ok = True
                    lw = 0.0
                    for h in range(H):
                        d = sgn2 * moves[k2, h]
                        if d != 0:
                            zn = Z[i, h] + d
                            if zn < 0:
                                ok = False
                                break
                            lw += d * logP[i, h] - lfact[zn] + lfact[Z[i, h]]
                    if ok and lw > -np.inf:
                        buf_w[nc2] = lw
                        if lw > top2:
                            top2 = lw
                        nc2 += 1
            s2 = 0.0
            for c2 in range(nc2):
                s2 += np.exp(buf_w[c2] - top2)
            lse_rev = top2 + np.log(s2)
            if np.log(u1) < lse_fwd - d_star - lse_rev:
                accepted += 1
            else:
                for h in range(H):
                    Z[i, h] -= sgn * moves[k, h]
    return accepted


# ---------------------------------------------------------------------------
# sampler


def _hier_chain(dataset, config, hp, layout, vg, derived, packed, init, seed_seq):
    rng = np.random.default_rng(seed_seq)
    H, N = dataset.H, dataset.N
    latent = config.variant == "latent"
    Z = np.array(init, dtype=np.int64) if latent else np.zeros((N, H), np.int64)
    sizes = dataset.sizes
    if latent:
        moves, mstart, mend, max_moves = packed
        cum_w = np.cumsum(np.maximum(sizes, 1).astype(float))
        if max_moves:
            _random_walk(Z, cum_w, mstart, mend, moves, rng.random((int(sizes.sum()) * 5, 2)))
        counts = config.updates_factor * sizes
        pad = int(np.abs(moves).max(initial=0)) + 2
        lfact = gammaln(np.arange(int(sizes.max(initial=0)) + pad) + 1.0)
        buf_w = np.empty(2 * max(max_moves, 1))
        buf_k = np.empty(2 * max(max_moves, 1), np.int64)
    state = {"Z": jnp.asarray(Z, dtype=jnp.float64)}

    def log_density(x):
        v, g = vg(jnp.asarray(x), state["Z"])
        v = float(v)
        if not np.isfinite(v):
            return -np.inf, np.zeros(len(x))
        return v, np.asarray(g)

    x0 = rng.uniform(-1, 1, layout.dim)
    x0[: H * N] *= 0.1
    sampler = NUTSSampler(log_density, layout.dim, rng, num_warmup=config.burn_in,
                          target_accept=config.target_accept, max_depth=config.max_tree_depth).initialize(x0)
    S = config.iters
    out = {"P": np.empty((S, N, H)), "f": np.empty((S, H, N)), "mu": np.empty((S, H)),
           "s": np.empty((S, H)), "tau": np.empty((S, H)), "sigma": np.empty(S)}
    L = np.empty((S, N, H), np.int32) if latent and config.store_latents else None
    accepted = 0
    for it in range(config.burn_in + S):
        x = sampler.step()
        f, logP, mu, s, tau, sigma = (np.asarray(v) for v in derived(jnp.asarray(x)))
        if latent:
            accepted += _hier_latent_updates(Z, np.ascontiguousarray(logP), counts, mstart, mend, moves, lfact,
                                             rng.random((int(counts.sum()), 2)), buf_w, buf_k)
            state["Z"] = jnp.asarray(Z, dtype=jnp.float64)
            sampler.refresh()
        if it >= config.burn_in:
            k = it - config.burn_in
            out["P"][k], out["f"][k], out["mu"][k] = np.exp(logP), f, mu
            out["s"][k], out["tau"][k], out["sigma"][k] = s, tau, sigma
            if L is not None:
                L[k] = Z
    post = sampler.stats[config.burn_in:]
    st = {"divergences": int(sum(t.diverged for t in post)), "step_size": sampler.step_size,
          "mean_leapfrog": float(np.mean([t.n_leapfrog for t in post])),
          "latent_accept": accepted / max(1, int(config.updates_factor * sizes.sum()) * (config.burn_in + S))}
    return out, L, st


def run_hier_sampler(dataset: Dataset, config: HierConfig = HierConfig(), bases: dict | None = None,
                     hyperpriors: Hyperpriors = Hyperpriors(), init=None) -> HierDraws:
    """Sample the hierarchical GP model; every pool needs a scalar covariate (time)."""
    times = dataset.covariates()[:, 0]
    layout, vg, derived = _make_target(dataset, config.variant, config, hyperpriors)
    packed = None
    if config.variant == "latent":
        if init is None:
            init = np.array([find_initial_latents(p) for p in dataset.pools])
        packed = _pack_moves(dataset, markov_bases_for(dataset, bases))
    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
    res = [_hier_chain(dataset, config, hyperpriors, layout, vg, derived, packed, init, s) for s in seeds]
    stack = {k: np.stack([r[0][k] for r in res]) for k in res[0][0]}
    lat = np.stack([r[1] for r in res]) if res[0][1] is not None else None
    st = {k: [r[2][k] for r in res] for k in res[0][2]}
    div = sum(st["divergences"])
    if div > 0.05 * config.chains * config.iters:
        warnings.warn(f"{div} divergent transitions after warmup")
    return HierDraws(dataset.haplotypes, times, stack["P"], stack["f"], stack["mu"], stack["s"], stack["tau"],
                     stack["sigma"], config.variant, lat, st)


def posterior_predict(draws: HierDraws, new_times, rng: np.random.Generator | None = None,
                      joint: bool = False) -> np.ndarray:
    """Predictive frequency draws at ``new_times``, shape ``(draws, len(new_times), H)``.

    For every stored draw and haplotype the field at the new times is
    sampled from its Gaussian conditional given the field at the observed
    times, including the white-noise term; a softmax across haplotypes
    gives frequencies. With ``joint=False`` each new time is sampled from
    its marginal conditional, which is all that pointwise bands need.
    """
    rng = rng or np.random.default_rng()
    t = np.asarray(draws.times, dtype=float)
    tn = np.atleast_1d(np.asarray(new_times, dtype=float))
    f, mu, s, tau, sigma = (draws.flat(k) for k in ("f", "mu", "s", "tau", "sigma"))
    D, H = mu.shape
    out = np.empty((D, len(tn), H))
    for d in range(D):
        fn = np.empty((H, len(tn)))
        for h in range(H):
            K = kernel_matrix(t, s[d, h], tau[d, h], sigma[d])
            Lk = _cholesky_with_jitter(K, s[d, h])
            Ks = kernel_matrix(tn, s[d, h], tau[d, h], times2=t)
            V = solve_triangular(Lk, Ks.T, lower=True)
            w = solve_triangular(Lk, f[d, h] - mu[d, h], lower=True)
            mean = mu[d, h] + V.T @ w
            if joint:
                cov = kernel_matrix(tn, s[d, h], tau[d, h], sigma[d]) - V.T @ V
                Lc = _cholesky_with_jitter(0.5 * (cov + cov.T), s[d, h])
                fn[h] = mean + Lc @ rng.standard_normal(len(tn))
            else:
                var = s[d, h] ** 2 + sigma[d] ** 2 - np.sum(V ** 2, axis=0)
                fn[h] = mean + np.sqrt(np.maximum(var, 0.0)) * rng.standard_normal(len(tn))
        fn -= fn.max(axis=0)
        e = np.exp(fn)
        out[d] = (e / e.sum(axis=0)).T
    return out


def predictive_summary(pred: np.ndarray, new_times, haplotypes, path=None, level: float = 0.95):
    """Rows ``(t, haplotype, mean, lower, upper)``; written as TSV when ``path`` is given."""
    lo, hi = (1 - level) / 2, 1 - (1 - level) / 2
    rows = []
    for k, t in enumerate(np.atleast_1d(new_times)):
        for h, hap in enumerate(haplotypes):
            v = pred[:, k, h]
            rows.append((float(t), hap, float(v.mean()), float(np.quantile(v, lo)), float(np.quantile(v, hi))))
    if path is not None:
        with Path(path).open("w") as fh:
            fh.write(f"t\thaplotype\tmean\tq{lo:.3f}\tq{hi:.3f}\n")
            for r in rows:
                fh.write(f"{r[0]!r}\t{r[1]}\t{r[2]!r}\t{r[3]!r}\t{r[4]!r}\n")
    return rows
