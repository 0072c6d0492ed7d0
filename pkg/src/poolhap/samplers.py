"""
Posterior samplers for haplotype frequencies.

* latent count sampling: a collapsed random-scan Metropolis-within-Gibbs
  sampler over per-pool latent counts, with the frequencies integrated
  out and drawn from their Dirichlet full conditional once per iteration;
* marginal MCMC: NUTS on additive log-ratio coordinates with either the
  exact (enumerated) likelihood or the Gaussian approximation.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit
from scipy.special import gammaln

from .errors import EnumerationOverflowError, NumericalSingularityError, ProposalStuckError
from .feasible import ExactLikelihood, enumerate_feasible, find_feasible_point
from .markov_basis import MarkovBasis, compute_markov_basis
from .model import Dataset, PoolObservation, check_latent_counts
from .normal_approx import DEFAULT_EPSILON, ApproxLikelihood
from .nuts import NUTSSampler
from .simplex import dirichlet_target, to_simplex

__all__ = [
    "DirichletPrior",
    "SamplerConfig",
    "PosteriorDraws",
    "log_joint_collapsed",
    "sample_dirichlet_conditional",
    "propose_latent_move",
    "find_initial_latents",
    "markov_bases_for",
    "run_lc_sampling",
    "run_marginal_mcmc",
    "run_inference",
]

log = logging.getLogger(__name__)

METHODS = ("exact", "approx", "latent")


@dataclass(frozen=True)
class DirichletPrior:
    concentration: float

    def __post_init__(self):
        if not self.concentration > 0:
            raise ValueError("Dirichlet concentration must be positive")


@dataclass(frozen=True)
class SamplerConfig:
    """Chain settings shared by all methods.

    ``updates_per_iter`` of ``None`` means five times the total pool size.
    """

    chains: int = 5
    burn_in: int = 500
    iters: int = 500
    updates_per_iter: int | None = None
    seed: int = 0
    method: str = "latent"
    target_accept: float = 0.8
    max_tree_depth: int = 10
    epsilon: float = DEFAULT_EPSILON
    max_solutions: int = 10 ** 7
    max_seconds: float = 60.0
    store_latents: bool = False
    scramble_init: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        for name in ("chains", "iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.burn_in < 0:
            raise ValueError("burn_in must be nonnegative")
        if self.updates_per_iter is not None and self.updates_per_iter < 1:
            raise ValueError("updates_per_iter must be positive")


@dataclass
class PosteriorDraws:
    """Frequency draws of shape ``(chains, iters, H)``, optionally with latent counts."""

    haplotypes: tuple[str, ...]
    p: np.ndarray
    method: str = ""
    latents: np.ndarray | None = None
    stats: dict = field(default_factory=dict)

    @property
    def chains(self) -> int:
        return self.p.shape[0]

    @property
    def iters(self) -> int:
        return self.p.shape[1]

    def flat(self) -> np.ndarray:
        return self.p.reshape(-1, self.p.shape[-1])

    def mean(self) -> np.ndarray:
        return self.flat().mean(axis=0)

    def to_tsv(self, path) -> None:
        header = "chain\titeration\t" + "\t".join(self.haplotypes)
        rows = []
        for c in range(self.chains):
            for s in range(self.iters):
                rows.append(f"{c}\t{s}\t" + "\t".join(repr(float(v)) for v in self.p[c, s]))
        Path(path).write_text(header + "\n" + "\n".join(rows) + "\n")

    @classmethod
    def from_tsv(cls, path, method: str = "") -> "PosteriorDraws":
        lines = [l for l in Path(path).read_text().splitlines() if l.strip()]
        head = lines[0].split("\t")
        haps = tuple(head[2:])
        data = np.array([[float(v) for v in l.split("\t")] for l in lines[1:]])
        chain = data[:, 0].astype(int)
        C = chain.max() + 1
        p = np.stack([data[chain == c, 2:] for c in range(C)])
        return cls(haps, p, method)


# ---------------------------------------------------------------------------
# collapsed joint and conditionals


def log_joint_collapsed(dataset: Dataset, latents, alpha: float) -> float:
    """Log of the joint probability of observed and latent counts with frequencies integrated out."""
    Z = np.asarray(latents, dtype=np.int64)
    for pool, z in zip(dataset.pools, Z):
        if not check_latent_counts(pool.matrix, pool.counts, z, pool.size):
            return -np.inf
    H = dataset.H
    n = dataset.sizes
    tot = Z.sum(axis=0)
    val = gammaln(H * alpha) - H * gammaln(alpha) - gammaln(n.sum() + H * alpha)
    val += np.sum(gammaln(n + 1)) - np.sum(gammaln(Z + 1))
    val += np.sum(gammaln(tot + alpha))
    return float(val)


def sample_dirichlet_conditional(totals, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """Draw frequencies from ``Dir(alpha + totals)``."""
    return rng.dirichlet(alpha + np.asarray(totals, dtype=float))


def _neighbour_log_weights(z, totals, moves, alpha):
    """Unnormalised log joint (up to a constant) of every valid neighbour ``z + d u``."""
    out = []
    for u in moves:
        for d in (1, -1):
            cand = z + d * u
            if np.any(cand < 0):
                continue
            t = totals + d * u
            out.append((cand, float(np.sum(gammaln(t + alpha)) - np.sum(gammaln(cand + 1)))))
    return out


def propose_latent_move(z, other_totals, moves, alpha: float, rng: np.random.Generator,
                        fiber_size: int | None = None):
    """Propose a neighbour of ``z`` with probability proportional to the collapsed joint.

    ``other_totals`` are the latent totals of all other pools. Returns
    ``(proposal, forward_logprob, reverse_logprob)``; when no neighbour is
    valid the current state is returned with both log-probabilities 0.

    Raises
    ------
    ProposalStuckError
        If no neighbour is valid although ``fiber_size`` says the fiber has
        more than one element.
    """
    z = np.asarray(z, dtype=np.int64)
    moves = np.asarray(moves, dtype=np.int64).reshape(-1, len(z))
    other = np.asarray(other_totals, dtype=np.int64)
    fwd = _neighbour_log_weights(z, other + z, moves, alpha)
    if not fwd:
        if fiber_size is not None and fiber_size > 1:
            raise ProposalStuckError("no valid neighbour in a fiber with several elements; the basis is not Markov")
        return z.copy(), 0.0, 0.0
    lw = np.array([w for _, w in fwd])
    probs = np.exp(lw - lw.max())
    probs /= probs.sum()
    k = rng.choice(len(fwd), p=probs)
    prop = fwd[k][0]
    rev = _neighbour_log_weights(prop, other + prop, moves, alpha)
    rlw = np.array([w for _, w in rev])
    back = next(i for i, (c, _) in enumerate(rev) if np.array_equal(c, z))
    rev_logprob = rlw[back] - np.logaddexp.reduce(rlw)
    return prop, float(np.log(probs[k])), float(rev_logprob)


# ---------------------------------------------------------------------------
# latent count sampling


@njit(cache=True)
def _lc_updates(Z, totals, cum_w, move_start, move_end, moves, lg_alpha, lfact, unif, buf_w, buf_k, stay):
    """Run ``len(unif)`` collapsed Metropolis updates in place; return accepted count."""
    N, H = Z.shape
    accepted = 0
    for it in range(unif.shape[0]):
        # pool chosen with probability proportional to its size
        target = unif[it, 0] * cum_w[N - 1]
        i = 0
        while cum_w[i] <= target and i < N - 1:
            i += 1
        m0, m1 = move_start[i], move_end[i]
        # forward neighbour weights relative to the current state
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
                        lw += lg_alpha[totals[h] + d] - lg_alpha[totals[h]] - lfact[zn] + lfact[Z[i, h]]
                if ok:
                    buf_w[nc] = lw
                    buf_k[nc] = sgn * (k + 1)
                    if lw > top:
                        top = lw
                    nc += 1
        if nc == 0:
            stay[i] += 1
            continue
        s = 0.0
        for c in range(nc):
            s += np.exp(buf_w[c] - top)
        lse_fwd = top + np.log(s)
        r = unif[it, 1] * s
        c = 0
        acc = np.exp(buf_w[0] - top)
        while acc < r and c < nc - 1:
            c += 1
            acc += np.exp(buf_w[c] - top)
        sel = buf_k[c]
        sgn = 1 if sel > 0 else -1
        k = abs(sel) - 1
        d_star = buf_w[c]
        # apply tentatively and compute reverse normaliser
        for h in range(H):
            d = sgn * moves[k, h]
            Z[i, h] += d
            totals[h] += d
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
                        lw += lg_alpha[totals[h] + d] - lg_alpha[totals[h]] - lfact[zn] + lfact[Z[i, h]]
                if ok:
                    buf_w[nc2] = lw
                    if lw > top2:
                        top2 = lw
                    nc2 += 1
        s2 = 0.0
        for c2 in range(nc2):
            s2 += np.exp(buf_w[c2] - top2)
        lse_rev = top2 + np.log(s2)
        log_acc = lse_fwd - d_star - lse_rev
        if np.log(unif[it, 2]) < log_acc:
            accepted += 1
        else:
            for h in range(H):
                d = sgn * moves[k, h]
                Z[i, h] -= d
                totals[h] -= d
    return accepted


@njit(cache=True)
def _random_walk(Z, cum_w, move_start, move_end, moves, unif):
    """Apply uniformly chosen valid moves, ignoring the target (used to spread chain starts)."""
    N, H = Z.shape
    for it in range(unif.shape[0]):
        target = unif[it, 0] * cum_w[N - 1]
        i = 0
        while cum_w[i] <= target and i < N - 1:
            i += 1
        nm = move_end[i] - move_start[i]
        if nm == 0:
            continue
        pick = int(unif[it, 1] * 2 * nm)
        k = move_start[i] + pick // 2
        sgn = 1 if pick % 2 == 0 else -1
        ok = True
        for h in range(H):
            if Z[i, h] + sgn * moves[k, h] < 0:
                ok = False
                break
        if ok:
            for h in range(H):
                Z[i, h] += sgn * moves[k, h]


def find_initial_latents(pool: PoolObservation) -> np.ndarray:
    """A feasible latent count vector for ``pool`` (first solution of the depth-first search)."""
    return find_feasible_point(pool.matrix, pool.counts, pool.size)


def markov_bases_for(dataset: Dataset, bases: dict | None = None, **kwargs) -> dict:
    """Markov bases keyed by reduced configuration matrix, computing missing ones."""
    out = dict(bases or {})
    for pool in dataset.pools:
        a, _ = pool.reduced
        if a.key not in out:
            out[a.key] = compute_markov_basis(a, **kwargs)
    return out


def _pack_moves(dataset: Dataset, bases: dict):
    H = dataset.H
    blocks, start, end, pos = [], [], [], 0
    offsets = {}
    for pool in dataset.pools:
        a, _ = pool.reduced
        b = bases[a.key]
        moves = b.moves if isinstance(b, MarkovBasis) else np.asarray(b, np.int64).reshape(-1, H)
        if a.key not in offsets:
            offsets[a.key] = (pos, pos + len(moves))
            blocks.append(moves)
            pos += len(moves)
        s, e = offsets[a.key]
        start.append(s)
        end.append(e)
    moves = np.vstack(blocks) if blocks and pos else np.zeros((1, H), np.int64)
    return (np.ascontiguousarray(moves, dtype=np.int64), np.array(start, np.int64), np.array(end, np.int64),
            max((e - s for s, e in offsets.values()), default=0))


def _lc_chain(dataset: Dataset, alpha: float, config: SamplerConfig, packed, init, seed_seq):
    rng = np.random.default_rng(seed_seq)
    moves, mstart, mend, max_moves = packed
    Z = np.array(init, dtype=np.int64)
    sizes = dataset.sizes
    cum_w = np.cumsum(sizes.astype(float))
    if cum_w[-1] <= 0:
        cum_w = np.arange(1, len(sizes) + 1, dtype=float)
    if config.scramble_init and max_moves:
        _random_walk(Z, cum_w, mstart, mend, moves, rng.random((int(sizes.sum()) * 5, 2)))
    totals = Z.sum(axis=0)
    total_n = int(sizes.sum())
    pad = int(np.abs(moves).max(initial=0)) + 2
    lg_alpha = gammaln(alpha + np.arange(total_n + pad))
    lfact = gammaln(np.arange(int(sizes.max(initial=0)) + pad) + 1.0)
    C = config.updates_per_iter or 5 * total_n
    buf_w = np.empty(2 * max(max_moves, 1))
    buf_k = np.empty(2 * max(max_moves, 1), np.int64)
    stay = np.zeros(len(sizes), np.int64)
    P = np.empty((config.iters, dataset.H))
    L = np.empty((config.iters,) + Z.shape, np.int32) if config.store_latents else None
    accepted = 0
    for it in range(config.burn_in + config.iters):
        accepted += _lc_updates(Z, totals, cum_w, mstart, mend, moves, lg_alpha, lfact,
                                rng.random((C, 3)), buf_w, buf_k, stay)
        if it >= config.burn_in:
            s = it - config.burn_in
            P[s] = sample_dirichlet_conditional(totals, alpha, rng)
            if L is not None:
                L[s] = Z
    n_updates = C * (config.burn_in + config.iters)
    return P, L, {"accept_rate": accepted / max(n_updates, 1), "stay": stay, "final_latents": Z}


def _check_stuck(dataset: Dataset, stay_total: np.ndarray):
    for i, pool in enumerate(dataset.pools):
        if stay_total[i] == 0:
            continue
        try:
            enumerate_feasible(pool.matrix, pool.counts, pool.size, max_solutions=1, max_seconds=5)
        except EnumerationOverflowError:
            warnings.warn(f"pool {pool.pool_id}: latent proposals found no valid neighbour "
                          f"{stay_total[i]} times in a non-singleton fiber; the move set is not a Markov basis")


def _map_chains(fn, args_list, workers: int):
    if workers > 1 and len(args_list) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, *zip(*args_list)))
    return [fn(*a) for a in args_list]


def run_lc_sampling(dataset: Dataset, alpha: float, config: SamplerConfig, bases: dict | None = None,
                    init=None) -> PosteriorDraws:
    """Collapsed latent-count sampler.

    Every iteration performs ``C`` updates. Each picks a pool with
    probability proportional to its size, proposes a neighbouring latent
    vector along a basis move with probability proportional to the
    collapsed joint, and accepts with the Metropolis-Hastings ratio. After
    burn-in, frequencies are drawn from their Dirichlet full conditional.
    """
    if init is None:
        init = np.array([find_initial_latents(p) for p in dataset.pools])
    init = np.asarray(init, dtype=np.int64)
    for pool, z in zip(dataset.pools, init):
        if not check_latent_counts(pool.matrix, pool.counts, z, pool.size):
            raise ValueError(f"pool {pool.pool_id}: initial latent counts are infeasible")
    bases = markov_bases_for(dataset, bases)
    packed = _pack_moves(dataset, bases)
    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
    results = _map_chains(_lc_chain, [(dataset, alpha, config, packed, init, s) for s in seeds], config.workers)
    P = np.stack([r[0] for r in results])
    L = np.stack([r[1] for r in results]) if config.store_latents else None
    stay = np.sum([r[2]["stay"] for r in results], axis=0)
    _check_stuck(dataset, stay)
    stats = {"accept_rate": [r[2]["accept_rate"] for r in results], "stay": stay,
             "final_latents": [r[2]["final_latents"] for r in results]}
    return PosteriorDraws(dataset.haplotypes, P, "latent", L, stats)


# ---------------------------------------------------------------------------
# marginal MCMC


def _likelihood(dataset: Dataset, kind: str, config: SamplerConfig):
    systems = [(*pool.reduced, pool.size) for pool in dataset.pools]
    if kind == "exact":
        return ExactLikelihood.from_systems(systems, max_solutions=config.max_solutions,
                                            max_seconds=config.max_seconds)
    if kind == "approx":
        return ApproxLikelihood(systems, epsilon=config.epsilon)
    raise ValueError(f"unknown likelihood {kind!r}")


class _SafeTarget:
    """Wrap a log density so numerical failures become rejected points."""

    def __init__(self, f):
        self.f = f
        self.failures = 0

    def __call__(self, x):
        try:
            return self.f(x)
        except NumericalSingularityError:
            self.failures += 1
            return -np.inf, np.zeros(len(x))


def _nuts_chain(target, H, config: SamplerConfig, seed_seq):
    rng = np.random.default_rng(seed_seq)
    f = _SafeTarget(target)
    x0 = rng.uniform(-1, 1, H - 1)
    sampler = NUTSSampler(f, H - 1, rng, num_warmup=config.burn_in, target_accept=config.target_accept,
                          max_depth=config.max_tree_depth).initialize(x0)
    X = np.empty((config.iters, H - 1))
    for _ in range(config.burn_in):
        sampler.step()
    for s in range(config.iters):
        X[s] = sampler.step()
    post = sampler.stats[config.burn_in:]
    stats = {"divergences": sum(st.diverged for st in post),
             "step_size": sampler.step_size,
             "mean_accept": float(np.mean([st.accept_stat for st in post])),
             "mean_leapfrog": float(np.mean([st.n_leapfrog for st in post])),
             "numerical_failures": f.failures}
    return to_simplex(X), stats


def run_marginal_mcmc(dataset: Dataset, alpha: float, config: SamplerConfig, likelihood: str = "exact",
                      lik=None) -> PosteriorDraws:
    """NUTS on the frequencies with the latent counts marginalised.

    Raises
    ------
    EnumerationOverflowError
        If ``likelihood='exact'`` and a pool's feasible set exceeds the budget.
    """
    if lik is None:
        lik = _likelihood(dataset, likelihood, config)
    target = dirichlet_target(alpha, lik.value_and_grad_logp)
    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
    results = _map_chains(_nuts_chain, [(target, dataset.H, config, s) for s in seeds], config.workers)
    P = np.stack([r[0] for r in results])
    stats = {k: [r[1][k] for r in results] for k in results[0][1]}
    div = sum(stats["divergences"])
    if div > 0.05 * config.chains * config.iters:
        warnings.warn(f"{div} divergent transitions after warmup ({likelihood} likelihood)")
    if sum(stats["numerical_failures"]):
        warnings.warn(f"{sum(stats['numerical_failures'])} covariance factorisations failed during sampling")
    return PosteriorDraws(dataset.haplotypes, P, likelihood, None, stats)


def run_inference(dataset: Dataset, alpha: float, config: SamplerConfig, bases: dict | None = None) -> PosteriorDraws:
    """Dispatch on ``config.method``."""
    if config.method == "latent":
        return run_lc_sampling(dataset, alpha, config, bases)
    return run_marginal_mcmc(dataset, alpha, config, config.method)
