import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_fiber, brute_likelihood, compositions
from poolhap.errors import BoundaryError, EnumerationOverflowError, InfeasibleSystemError
from poolhap.feasible import (
    ExactLikelihood,
    VariableBounds,
    enumerate_feasible,
    exact_log_likelihood,
    exact_log_likelihood_gradient,
    export_feasible_set,
    find_feasible_point,
    import_feasible_set,
    preliminary_bounds,
    tighten_bounds,
)
from poolhap.model import ConfigurationMatrix, all_haplotypes, build_allele_count_matrix

A2 = build_allele_count_matrix(all_haplotypes(2), with_sum_row=True)


def test_preliminary_bounds_formula():
    b = preliminary_bounds(A2, [100, 50, 20], 100)
    assert b.upper[3] == 20
    assert b.upper[0] == 50
    assert b.lower.tolist() == [0, 0, 0, 0]
    b0 = preliminary_bounds(A2, [5, 0, 3], 5)
    assert b0.upper[1] == 0 and b0.upper[3] == 0


def test_two_point_fiber():
    fs = enumerate_feasible(A2, [2, 1, 1], 2)
    assert fs.as_set() == {(1, 0, 0, 1), (0, 1, 1, 0)}
    assert fs.as_set() == brute_fiber(A2.entries, [2, 1, 1], 2)


@pytest.mark.parametrize("y, expected", [([2, 0, 0], {(2, 0, 0, 0)}), ([2, 2, 2], {(0, 0, 0, 2)})])
def test_extreme_fibers(y, expected):
    assert enumerate_feasible(A2, y, 2).as_set() == expected


def test_tighten_bounds_two_point():
    b = tighten_bounds(A2, [2, 1, 1], 2)
    assert b.lower.tolist() == [0, 0, 0, 0]
    assert b.upper.tolist() == [1, 1, 1, 1]


def test_tighten_bounds_singleton():
    b = tighten_bounds(A2, [3, 3, 3], 3)
    assert b.lower.tolist() == b.upper.tolist() == [0, 0, 0, 3]


def test_infeasible_system():
    a = ConfigurationMatrix(np.array([[1, 1, 1], [0, 1, 1]]))
    with pytest.raises(InfeasibleSystemError):
        tighten_bounds(a, [2, 3], 2)
    with pytest.raises(InfeasibleSystemError):
        find_feasible_point(a, [2, 3], 2)
    assert len(enumerate_feasible(a, [2, 3], 2)) == 0


@settings(max_examples=120, deadline=None)
@given(st.integers(2, 8), st.integers(1, 5), st.integers(0, 9), st.integers(0, 2 ** 31 - 1))
def test_enumeration_matches_brute_force(H, R, n, seed):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 2, size=(R, H))
    z = rng.multinomial(n, rng.dirichlet(np.ones(H)))
    y = a @ z
    got = enumerate_feasible(ConfigurationMatrix(a), y, n)
    truth = brute_fiber(np.vstack([np.ones(H, int), a]), np.r_[n, y], n)
    assert got.as_set() == truth
    assert len(got) == len(truth)
    tb = tighten_bounds(ConfigurationMatrix(a), y, n)
    assert np.all(tb.contains(got.solutions))
    sols = np.array(sorted(truth))
    assert np.array_equal(tb.lower, sols.min(axis=0)) and np.array_equal(tb.upper, sols.max(axis=0))


def test_gap_order_and_tightening_agree():
    rng = np.random.default_rng(3)
    a = ConfigurationMatrix(rng.integers(0, 2, size=(3, 7)))
    z = rng.multinomial(11, np.full(7, 1 / 7))
    y = a.entries @ z
    base = enumerate_feasible(a, y, 11).as_set()
    assert enumerate_feasible(a, y, 11, order="gap").as_set() == base
    assert enumerate_feasible(a, y, 11, tighten=True).as_set() == base


def test_overflow_signal():
    A3 = build_allele_count_matrix(all_haplotypes(3))
    with pytest.raises(EnumerationOverflowError) as info:
        enumerate_feasible(A3, [20, 20, 20], 40, max_solutions=100)
    assert info.value.n_found > 100
    assert "latent" in str(info.value)


def test_find_feasible_point_is_member():
    z = find_feasible_point(A2, [2, 1, 1], 2)
    assert tuple(z) in {(1, 0, 0, 1), (0, 1, 1, 0)}


def test_exact_likelihood_examples():
    fs = enumerate_feasible(A2, [2, 1, 1], 2)
    assert exact_log_likelihood(fs, [0.25] * 4) == pytest.approx(np.log(0.25))
    np.testing.assert_allclose(exact_log_likelihood_gradient(fs, [0.25] * 4), [2, 2, 2, 2])
    single = enumerate_feasible(A2, [4, 0, 0], 4)
    assert exact_log_likelihood(single, [1, 0, 0, 0]) == 0.0
    assert exact_log_likelihood(single, [0, 0.5, 0.5, 0]) == -np.inf
    with pytest.raises(BoundaryError):
        exact_log_likelihood_gradient(single, [1, 0, 0, 0])


def test_singleton_gradient():
    fs = enumerate_feasible(A2, [5, 5, 5], 5)
    p = np.array([0.1, 0.2, 0.3, 0.4])
    np.testing.assert_allclose(exact_log_likelihood_gradient(fs, p), np.array([0, 0, 0, 5]) / p)


def test_likelihood_matches_brute_force():
    A3 = build_allele_count_matrix(all_haplotypes(3))
    rng = np.random.default_rng(7)
    for _ in range(10):
        p = rng.dirichlet(np.ones(8))
        z = rng.multinomial(6, p)
        y = A3.entries @ z
        fs = enumerate_feasible(A3, y, 6)
        ref = brute_likelihood(np.vstack([np.ones(8, int), A3.entries]), np.r_[6, y], 6, p)
        assert exact_log_likelihood(fs, p) == pytest.approx(np.log(ref), rel=1e-12)


def test_gradient_finite_differences():
    A3 = build_allele_count_matrix(all_haplotypes(3))
    rng = np.random.default_rng(11)
    p = rng.dirichlet(np.ones(8) * 2)
    fs = enumerate_feasible(A3, [6, 3, 4], 12)
    g = exact_log_likelihood_gradient(fs, p)
    h = 1e-6
    fd = np.array([(exact_log_likelihood(fs, p + h * e) - exact_log_likelihood(fs, p - h * e)) / (2 * h)
                   for e in np.eye(8)])
    np.testing.assert_allclose(g, fd, rtol=1e-5)


def test_likelihood_normalises_small():
    a = build_allele_count_matrix(all_haplotypes(2))
    p = np.array([0.1, 0.2, 0.3, 0.4])
    for n in range(0, 5):
        ys = {tuple(a.entries @ np.array(z)) for z in compositions(n, 4)}
        total = sum(np.exp(exact_log_likelihood(enumerate_feasible(a, y, n), p)) for y in ys)
        assert total == pytest.approx(1.0, abs=1e-12)


def test_exact_likelihood_class_matches_single_pool():
    A3 = build_allele_count_matrix(all_haplotypes(3))
    systems = [(A3, [3, 2, 1], 5), (A3, [1, 1, 1], 4), (A3, [3, 2, 1], 5)]
    lik = ExactLikelihood.from_systems(systems)
    assert lik.weights.tolist() == [2.0, 1.0]
    p = np.random.default_rng(0).dirichlet(np.ones(8))
    val, grad = lik.value_and_grad_logp(np.log(p))
    ref = sum(exact_log_likelihood(enumerate_feasible(*s), p) for s in systems)
    assert val == pytest.approx(ref)
    gref = sum(exact_log_likelihood_gradient(enumerate_feasible(*s), p) for s in systems) * p
    np.testing.assert_allclose(grad, gref, rtol=1e-10)


def test_feasible_set_round_trip(tmp_path):
    A3 = build_allele_count_matrix(all_haplotypes(3))
    fs = enumerate_feasible(A3, [4, 2, 3], 7)
    export_feasible_set(fs, tmp_path / "fs.tsv")
    back = import_feasible_set(tmp_path / "fs.tsv")
    assert back.as_set() == fs.as_set()
    assert back.size == 7 and back.matrix == fs.matrix


def test_import_rejects_bad_rows(tmp_path):
    fs = enumerate_feasible(A2, [2, 1, 1], 2)
    export_feasible_set(fs, tmp_path / "fs.tsv")
    with open(tmp_path / "fs.tsv", "a") as fh:
        fh.write("2\t0\t0\t0\n")
    with pytest.raises(ValueError):
        import_feasible_set(tmp_path / "fs.tsv")


def test_explicit_bounds_restrict():
    fs = enumerate_feasible(A2, [4, 2, 2], 4, bounds=VariableBounds([0, 0, 0, 1], [4, 4, 4, 4]))
    assert all(z[3] >= 1 for z in fs.as_set())
    assert fs.as_set() == {z for z in brute_fiber(A2.entries, [4, 2, 2], 4) if z[3] >= 1}
