import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poolhap.diagnostics import binomial_band, credible_coverage, ess, rhat, thin, tvd, tvd_by_haplotype


def test_tvd_examples():
    assert tvd([0.5, 0.3, 0.2], [0.5, 0.3, 0.2]) == 0
    assert tvd([1, 0], [0, 1]) == 1
    assert tvd([0.5, 0.3, 0.2], [0.4, 0.4, 0.2]) == pytest.approx(0.1)


def test_tvd_over_union_of_haplotypes():
    assert tvd_by_haplotype({"00": 0.6, "11": 0.4}, {"00": 0.6, "10": 0.4}) == pytest.approx(0.4)


prob = st.lists(st.floats(0, 1), min_size=4, max_size=4).filter(lambda v: sum(v) > 0).map(
    lambda v: np.array(v) / sum(v))


@settings(max_examples=100)
@given(prob, prob, prob)
def test_tvd_is_metric(a, b, c):
    assert tvd(a, b) == pytest.approx(tvd(b, a))
    assert tvd(a, c) <= tvd(a, b) + tvd(b, c) + 1e-12
    assert 0 <= tvd(a, b) <= 1 + 1e-12
    assert tvd(a, a) == 0


def test_ess_iid():
    rng = np.random.default_rng(0)
    vals = [ess(rng.normal(size=(5, 500))) for _ in range(100)]
    assert 2000 <= min(vals) and max(vals) <= 3000


def _ar1(rho, n, rng):
    x = np.empty(n)
    x[0] = rng.normal() / np.sqrt(1 - rho ** 2)
    e = rng.normal(size=n)
    for i in range(1, n):
        x[i] = rho * x[i - 1] + e[i]
    return x


def test_ess_ar1():
    rng = np.random.default_rng(1)
    x = np.array([_ar1(0.9, 2000, rng) for _ in range(4)])
    target = x.size * 0.1 / 1.9
    assert target / 1.5 < ess(x) < target * 1.5


def test_ess_stuck_chains():
    x = np.vstack([np.zeros(500), np.ones(500)])
    assert ess(x) == pytest.approx(2, rel=0.1)


def test_ess_constant_and_short():
    assert ess(np.ones((3, 10))) == 30
    with pytest.raises(ValueError):
        ess(np.arange(6.0).reshape(2, 3))


def test_rhat():
    rng = np.random.default_rng(2)
    assert rhat(rng.normal(size=(4, 1000))) == pytest.approx(1.0, abs=0.01)
    assert rhat(np.vstack([np.zeros(100), np.ones(100)])) > 1.1
    y = rng.normal(size=1000)
    assert rhat(np.vstack([y, y])) == pytest.approx(1.0, abs=0.01)
    with pytest.raises(ValueError):
        rhat(np.ones((1, 3)))


def test_thin():
    d = np.arange(2 * 100 * 3).reshape(2, 100, 3)
    t = thin(d, 10)
    assert t.shape == (2, 10, 3)
    assert t[0, 0, 0] == 0 and t[0, -1, 0] == d[0, -1, 0]
    assert thin(d, 500) is d


def test_coverage_degenerate_draws():
    truth = np.array([0.2, 0.3, 0.5])
    cov = credible_coverage(np.tile(truth, (50, 1)), truth)
    assert set(cov.values()) == {1.0}


def test_coverage_excludes_absent_and_counts_zero_width_misses():
    truth = np.array([[0.0, 0.4, 0.6]])
    draws = np.zeros((1, 100, 3))
    draws[0, :, 2] = 0.6
    cov = credible_coverage(draws, truth, levels=(0.9,))
    # haplotype 1 was never sampled: its zero-width interval misses 0.4
    assert cov[0.9] == 0.5


def test_coverage_exact_fraction():
    rng = np.random.default_rng(3)
    draws = rng.normal(size=(200, 400, 1)) + 5
    truth = np.full((200, 1), 5.0) + rng.normal(size=(200, 1))
    cov = credible_coverage(draws, truth, levels=(0.5, 0.95))
    for lv, c in cov.items():
        lo, hi = binomial_band(200, lv)
        assert lo - 0.03 <= c <= hi + 0.03


def test_binomial_band():
    lo, hi = binomial_band(100, 0.5)
    assert lo < 0.5 < hi
    assert hi - lo == pytest.approx(0.2, abs=0.02)
