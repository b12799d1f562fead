import numpy as np
import pytest
from hypothesis import given, strategies as st

from epel import nbp

LINE = np.array([0.0, 1.0, 10.0, 11.0])


@pytest.mark.parametrize("backend", ["pymatching", "blossom"])
def test_line_matching(backend):
    pairs = nbp.min_weight_perfect_matching(LINE, backend)
    assert {tuple(p) for p in pairs} == {(0, 1), (2, 3)}
    assert nbp.matching_weight(LINE, pairs) == pytest.approx(2.0)


def test_two_points():
    np.testing.assert_array_equal(nbp.min_weight_perfect_matching(np.array([[3.0], [5.0]])),
                                  [[0, 1]])


def test_odd_count_rejected():
    with pytest.raises(ValueError):
        nbp.min_weight_perfect_matching(np.zeros((5, 2)))


def test_unknown_backend():
    with pytest.raises(ValueError):
        nbp.min_weight_perfect_matching(np.zeros((4, 2)), "greedy")


def test_cross_match_line_examples():
    res = nbp.cross_match(np.array([0.0, 1.0]), np.array([10.0, 11.0]))
    assert res.cross_count == 0
    res = nbp.cross_match(np.array([0.0, 10.0]), np.array([1.0, 11.0]))
    assert res.cross_count == 2


def test_cross_match_shape_errors():
    with pytest.raises(ValueError):
        nbp.cross_match(np.zeros((3, 2)), np.zeros((4, 2)))
    with pytest.raises(ValueError):
        nbp.cross_match(np.zeros((3, 2)), np.zeros((3, 3)))


@given(st.integers(0, 10_000), st.sampled_from([2, 4, 6, 8, 10]), st.integers(1, 3))
def test_matching_optimal_vs_brute_force(seed, n, dim):
    pts = np.random.default_rng(seed).standard_normal((n, dim))
    best, _ = nbp.brute_force_matching(pts)
    for backend in ("pymatching", "blossom"):
        pairs = nbp.min_weight_perfect_matching(pts, backend)
        assert np.unique(pairs).size == n
        assert nbp.matching_weight(pts, pairs) == pytest.approx(best, rel=1e-9, abs=1e-12)


def test_exhaustive_enumeration_size():
    assert sum(1 for _ in nbp.all_matchings(10)) == 945 == nbp.count_perfect_matchings(10)


@pytest.mark.parametrize("seed", range(3))
def test_backends_agree_on_larger_instances(seed):
    pts = np.random.default_rng(seed).standard_normal((60, 2))
    w1 = nbp.matching_weight(pts, nbp.min_weight_perfect_matching(pts, "pymatching"))
    w2 = nbp.matching_weight(pts, nbp.min_weight_perfect_matching(pts, "blossom"))
    assert w1 == pytest.approx(w2, rel=1e-9)


@given(st.integers(0, 10_000))
def test_cross_match_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((15, 2)), rng.standard_normal((15, 2)) + 0.5
    assert nbp.cross_match(a, b).cross_count == nbp.cross_match(b, a).cross_count


def test_separated_samples_fail():
    rng = np.random.default_rng(0)
    res = nbp.cross_match(rng.standard_normal((100, 2)), rng.standard_normal((100, 2)) + 20)
    assert res.cross_count == 0 and not res.passed


def test_null_quantile_n1():
    assert nbp.null_quantile(1, 0.05, 2000, np.random.default_rng(0)) == 1


def test_null_quantile_monotone_in_q():
    rng = np.random.default_rng(1)
    lo = nbp.null_quantile(50, 0.05, 20_000, rng)
    hi = nbp.null_quantile(50, 0.5, 20_000, rng)
    assert hi >= lo


def test_null_quantile_argument_checks():
    with pytest.raises(ValueError):
        nbp.null_quantile(10, 1.5, 2000)
    with pytest.raises(ValueError):
        nbp.null_quantile(10, 0.05, 10)


def test_null_mean_identity():
    N = 100
    counts = nbp.simulate_null_counts(N, 100_000, np.random.default_rng(2))
    # each pair is cross with probability N / (2N - 1)
    assert counts.mean() == pytest.approx(N * N / (2 * N - 1), rel=0.01)


@pytest.mark.parametrize("N", [1, 2, 5, 40])
def test_exact_null_pmf(N):
    pmf = nbp.exact_null_pmf(N)
    assert sum(pmf.values()) == pytest.approx(1.0)
    assert sum(k * v for k, v in pmf.items()) == pytest.approx(N * N / (2 * N - 1))


def test_simulated_quantile_matches_exact():
    N = 60
    sim = nbp.null_quantile(N, 0.05, 100_000, np.random.default_rng(3))
    assert abs(sim - nbp.exact_null_quantile(N, 0.05)) <= 2


def test_threshold_for():
    assert nbp.threshold_for(1000) == 474
    assert nbp.threshold_for(50) == nbp.exact_null_quantile(50, 0.05)


def test_standardize_is_scale_invariant():
    rng = np.random.default_rng(4)
    a, b = rng.standard_normal((30, 2)), rng.standard_normal((30, 2))
    scale = np.array([1.0, 1000.0])
    r1 = nbp.cross_match(a, b, standardize=True)
    r2 = nbp.cross_match(a * scale, b * scale, standardize=True)
    assert r1.cross_count == r2.cross_count


def test_result_dict():
    d = nbp.cross_match(np.array([0.0, 10.0]), np.array([1.0, 11.0]), threshold=1).to_dict()
    assert d == {"cross_count": 2, "total_pairs": 2, "threshold": 1, "pass": True}


@pytest.mark.slow
def test_same_distribution_passes_at_n1000():
    passes = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        a, b = rng.standard_normal((1000, 2)), rng.standard_normal((1000, 2))
        passes += nbp.cross_match(a, b).passed
    assert passes >= 18
