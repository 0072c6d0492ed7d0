import math

import numpy as np
import pytest
from scipy.special import gammaln
from scipy.stats import kstest

from oracles import grid_posterior
from poolhap.diagnostics import ess, tvd
from poolhap.errors import InfeasibleSystemError, ProposalStuckError
from poolhap.feasible import enumerate_feasible
from poolhap.model import ConfigurationMatrix, Dataset, PoolObservation, all_haplotypes, build_allele_count_matrix
from poolhap.samplers import (
    DirichletPrior,
    PosteriorDraws,
    SamplerConfig,
    find_initial_latents,
    log_joint_collapsed,
    propose_latent_move,
    run_inference,
    run_lc_sampling,
    run_marginal_mcmc,
    sample_dirichlet_conditional,
)
from poolhap.simulate import simulate_shared

HAPS2 = tuple(all_haplotypes(2))
A2 = build_allele_count_matrix(HAPS2)
A2S = build_allele_count_matrix(HAPS2, with_sum_row=True)
MOVE = np.array([[1, -1, -1, 1]])


def _single(y, n, a=A2, haps=HAPS2):
    return Dataset(haps, (PoolObservation("p", n, y, a),))


def _identity_dataset(z, haps):
    eye = ConfigurationMatrix(np.eye(len(z), dtype=int))
    return Dataset(tuple(haps), (PoolObservation("p", int(sum(z)), z, eye),))


def test_log_joint_two_component_example():
    ds = _identity_dataset([1, 1], ("0", "1"))
    assert math.exp(log_joint_collapsed(ds, [[1, 1]], 1.0)) == pytest.approx(1 / 3)


def test_log_joint_violation():
    ds = _single([1, 1], 2)
    assert log_joint_collapsed(ds, [[2, 0, 0, 0]], 1.0) == -np.inf


def test_log_joint_gamma_product_shared_between_splits():
    haps = ("0", "1")
    eye = ConfigurationMatrix(np.eye(2, dtype=int))
    split = Dataset(haps, (PoolObservation("a", 3, [2, 1], eye), PoolObservation("b", 3, [1, 2], eye)))
    merged = Dataset(haps, (PoolObservation("m", 6, [3, 3], eye),))
    diff = log_joint_collapsed(split, [[2, 1], [1, 2]], 0.5) - log_joint_collapsed(merged, [[3, 3]], 0.5)
    coef = 2 * (gammaln(4) - gammaln(3) - gammaln(2)) - (gammaln(7) - 2 * gammaln(4))
    assert diff == pytest.approx(coef)


@pytest.mark.parametrize("totals, mean", [([2, 3], [3 / 7, 4 / 7]), ([0, 0], [0.5, 0.5])])
def test_dirichlet_conditional_mean(totals, mean):
    rng = np.random.default_rng(0)
    draws = np.array([sample_dirichlet_conditional(totals, 1.0, rng) for _ in range(100_000)])
    np.testing.assert_allclose(draws.mean(axis=0), mean, atol=0.005)


def test_dirichlet_conditional_concentrates():
    rng = np.random.default_rng(1)
    draws = np.array([sample_dirichlet_conditional([10_000, 0, 0], 1.0, rng) for _ in range(2000)])
    assert abs(draws[:, 0].mean() - 1) < 0.001


def test_dirichlet_prior_validation():
    with pytest.raises(ValueError):
        DirichletPrior(0.0)


def test_two_point_proposal_accepts_with_probability_one():
    z = np.array([1, 0, 0, 1])
    prop, fwd, rev = propose_latent_move(z, np.zeros(4), MOVE, 1.0, np.random.default_rng(0))
    assert prop.tolist() == [0, 1, 1, 0]
    assert fwd == pytest.approx(0.0) and rev == pytest.approx(0.0)
    ds = _single([1, 1], 2)
    log_ratio = log_joint_collapsed(ds, [prop], 1.0) - log_joint_collapsed(ds, [z], 1.0) + rev - fwd
    assert min(1.0, math.exp(log_ratio)) == 1.0


def test_stuck_and_stay_signals():
    z = np.array([2, 0, 0, 0])
    prop, fwd, rev = propose_latent_move(z, np.zeros(4), MOVE, 1.0, np.random.default_rng(0), fiber_size=1)
    assert prop.tolist() == z.tolist() and fwd == rev == 0.0
    with pytest.raises(ProposalStuckError):
        propose_latent_move(z, np.zeros(4), MOVE, 1.0, np.random.default_rng(0), fiber_size=2)


def _neighbour_probs(z, other, moves, alpha):
    out = {}
    for u in moves:
        for d in (1, -1):
            c = z + d * u
            if np.all(c >= 0):
                t = other + c
                out[tuple(c)] = np.sum(gammaln(t + alpha)) - np.sum(gammaln(c + 1))
    lw = np.array(list(out.values()))
    lp = lw - np.logaddexp.reduce(lw)
    return dict(zip(out, lp))


def test_proposal_log_probabilities_recomputed():
    moves = np.array([[1, -1, -1, 1], [1, 0, -1, 0], [0, 1, 0, -1]])
    rng = np.random.default_rng(4)
    other = np.array([3, 1, 0, 2])
    z = np.array([2, 1, 1, 2])
    seen = set()
    for _ in range(200):
        prop, fwd, rev = propose_latent_move(z, other, moves, 0.7, rng)
        assert fwd == pytest.approx(_neighbour_probs(z, other, moves, 0.7)[tuple(prop)])
        assert rev == pytest.approx(_neighbour_probs(prop, other, moves, 0.7)[tuple(z)])
        seen.add(tuple(prop))
    assert len(seen) > 1
    assert all(min(c) >= 0 for c in seen)


def test_proposal_weights_exchangeable_between_pools():
    za, zb = np.array([1, 0, 2, 1]), np.array([0, 2, 1, 1])
    assert _neighbour_probs(za, zb, MOVE, 0.5) == _neighbour_probs(za, zb.copy(), MOVE, 0.5)
    # the weights depend on the other pools only through their totals
    split = _neighbour_probs(za, np.array([0, 1, 1, 0]) + np.array([0, 1, 0, 1]), MOVE, 0.5)
    assert split == _neighbour_probs(za, zb, MOVE, 0.5)


def test_find_initial_latents():
    z = find_initial_latents(PoolObservation("p", 2, [1, 1], A2))
    assert tuple(z) in {(1, 0, 0, 1), (0, 1, 1, 0)}
    assert find_initial_latents(PoolObservation("p", 3, [3, 3], A2)).tolist() == [0, 0, 0, 3]
    with pytest.raises(InfeasibleSystemError):
        find_initial_latents(PoolObservation("p", 2, [2, 2], build_allele_count_matrix(["00", "10", "01"])))


def _lc_conditional(y, n, alpha):
    fs = enumerate_feasible(A2, y, n)
    zs = fs.solutions
    lw = -gammaln(zs + 1).sum(axis=1) + gammaln(zs + alpha).sum(axis=1)
    w = np.exp(lw - lw.max())
    return zs, w / w.sum()


def test_lc_single_pool_matches_enumeration():
    zs, w = _lc_conditional([6, 4], 10, 1.0)
    cfg = SamplerConfig(chains=1, burn_in=100, iters=20_000, updates_per_iter=5, store_latents=True, seed=3)
    d = run_lc_sampling(_single([6, 4], 10), 1.0, cfg)
    idx = {tuple(z): k for k, z in enumerate(zs)}
    emp = np.bincount([idx[tuple(z)] for z in d.latents[0, :, 0]], minlength=len(zs)) / cfg.iters
    assert tvd(emp, w) < 0.02


def test_lc_latents_satisfy_constraints():
    rng = np.random.default_rng(8)
    haps = tuple(all_haplotypes(3))
    a = build_allele_count_matrix(haps)
    pools = []
    for i in range(4):
        z = rng.multinomial(8, rng.dirichlet(np.ones(8)))
        pools.append(PoolObservation(f"p{i}", 8, a.entries @ z, a))
    ds = Dataset(haps, tuple(pools))
    d = run_lc_sampling(ds, 0.4, SamplerConfig(chains=2, burn_in=10, iters=50, store_latents=True))
    for z in d.latents.reshape(-1, 4, 8):
        for pool, zi in zip(ds.pools, z):
            assert zi.min() >= 0 and zi.sum() == 8
            assert np.array_equal(a.entries @ zi, pool.counts)
    assert np.allclose(d.p.sum(axis=-1), 1)


def test_lc_identity_matrix_is_conjugate():
    ds = _identity_dataset([5, 3, 2], ("00", "10", "01"))
    d = run_lc_sampling(ds, 1.0, SamplerConfig(chains=2, burn_in=0, iters=5000))
    np.testing.assert_allclose(d.mean(), np.array([6, 4, 3]) / 13, atol=0.01)


@pytest.mark.parametrize("alpha, iters", [(1.0, 500), (0.1, 1000)])
def test_nuts_identity_matrix_is_conjugate(alpha, iters):
    z = np.array([5, 3, 2])
    ds = _identity_dataset(z, ("00", "10", "01"))
    d = run_marginal_mcmc(ds, alpha, SamplerConfig(chains=5, burn_in=300, iters=iters, method="exact"))
    np.testing.assert_allclose(d.mean(), (z + alpha) / (z.sum() + 3 * alpha), atol=0.01)


def test_nuts_exact_matches_grid_posterior():
    grid, w = grid_posterior(A2.entries, [10, 6], 20)
    ref_mean = w @ grid
    ref_edge = w @ (np.minimum(grid[:, 2], grid[:, 3]) < 0.05)
    d = run_marginal_mcmc(_single([10, 6], 20), 1.0, SamplerConfig(chains=4, burn_in=300, iters=1000))
    P = d.flat()
    n_eff = min(ess(d.p[..., h]) for h in range(4))
    np.testing.assert_allclose(P.mean(axis=0), ref_mean, atol=4 * 0.2 / np.sqrt(n_eff))
    edge = np.mean(np.minimum(P[:, 2], P[:, 3]) < 0.05)
    assert abs(edge - ref_edge) < 4 * 0.5 / np.sqrt(n_eff)


def test_lc_matches_grid_posterior():
    grid, w = grid_posterior(A2.entries, [10, 6], 20)
    d = run_lc_sampling(_single([10, 6], 20), 1.0, SamplerConfig(chains=4, burn_in=100, iters=2000))
    n_eff = min(ess(d.p[..., h]) for h in range(4))
    np.testing.assert_allclose(d.mean(), w @ grid, atol=4 * 0.2 / np.sqrt(n_eff))


@pytest.mark.filterwarnings("ignore:.*divergent")
@pytest.mark.parametrize("method", ["latent", "exact", "approx"])
def test_reproducible(method):
    ds = _single([10, 6], 20)
    cfg = SamplerConfig(chains=2, burn_in=20, iters=30, method=method, seed=11)
    a, b = run_inference(ds, 0.4, cfg), run_inference(ds, 0.4, cfg)
    assert np.array_equal(a.p, b.p)
    c = run_inference(ds, 0.4, SamplerConfig(chains=2, burn_in=20, iters=30, method=method, seed=12))
    assert not np.array_equal(a.p, c.p)


def test_draws_tsv_round_trip(tmp_path):
    p = np.random.default_rng(0).dirichlet(np.ones(4), size=(2, 5))
    d = PosteriorDraws(HAPS2, p, "latent")
    d.to_tsv(tmp_path / "d.tsv")
    back = PosteriorDraws.from_tsv(tmp_path / "d.tsv")
    assert back.haplotypes == HAPS2
    np.testing.assert_allclose(back.p, p, rtol=1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(method="gibbs")
    with pytest.raises(ValueError):
        SamplerConfig(chains=0)
    with pytest.raises(ValueError):
        SamplerConfig(updates_per_iter=0)


def test_lc_posterior_ranks_are_uniform():
    # truth drawn from the prior: its posterior rank is uniform when the sampler is exact
    ranks = []
    for r in range(300):
        p, ds, _ = simulate_shared(4, 4, 8, 0.4, np.random.default_rng(r))
        d = run_lc_sampling(ds, 0.4, SamplerConfig(chains=2, burn_in=100, iters=200, seed=r)).flat()
        ranks.append(np.mean(d[:, r % 4] < p[r % 4]))
    assert kstest(ranks, "uniform").pvalue > 0.01
