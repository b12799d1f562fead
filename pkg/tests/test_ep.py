import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from epel import ep, gaussian, models, posterior
from epel.gaussian import MomentGaussian, NaturalGaussian


def _random_site(rng, p, scale=1.0):
    A = rng.standard_normal((p, p))
    return NaturalGaussian(rng.standard_normal(p) * scale, A @ A.T + p * np.eye(p))


def _seam(seed, D=4, p=2):
    rng = np.random.default_rng(seed)
    return ep.GaussianSites([_random_site(rng, p) for _ in range(D)])


def _approx_for(sites):
    # a deliberately wrong starting approximation
    return NaturalGaussian(np.zeros(sites.p), np.eye(sites.p) * 3.0)


# ---------------------------------------------------------------- init / cavity

def test_init_splits_laplace_evenly():
    g = NaturalGaussian(np.array([2.0, -4.0]), np.array([[4.0, 1.0], [1.0, 2.0]]))
    state = ep.init_from_laplace(g, ep.EpConfig(num_sites=4))
    assert len(state.sites) == 4
    for s in state.sites:
        np.testing.assert_allclose(s.r, g.r / 4)
        np.testing.assert_allclose(s.Q, g.Q / 4)
    assert state.check_consistency()


def test_init_rejects_improper():
    g = NaturalGaussian(np.zeros(2), -np.eye(2))
    with pytest.raises(gaussian.ImproperGaussianError):
        ep.init_from_laplace(g, ep.EpConfig(num_sites=2))


def test_cavity_two_sites_is_half():
    g = NaturalGaussian(np.array([1.0, 3.0]), np.diag([2.0, 6.0]))
    state = ep.init_from_laplace(g, ep.EpConfig(num_sites=2))
    cav = ep.cavity(state, 0)
    np.testing.assert_allclose(cav.r, [0.5, 1.5])
    np.testing.assert_allclose(cav.Q, np.diag([1.0, 3.0]))


@given(st.integers(0, 10_000), st.integers(2, 6))
def test_cavity_times_site_recovers_global(seed, D):
    rng = np.random.default_rng(seed)
    sites = [_random_site(rng, 3) for _ in range(D)]
    approx = sites[0]
    for s in sites[1:]:
        approx = approx * s
    state = ep.EpState(sites, approx)
    for i in range(D):
        back = ep.cavity(state, i) * sites[i]
        np.testing.assert_allclose(back.r, approx.r, atol=1e-9 * (1 + np.abs(approx.r).max()))
        np.testing.assert_allclose(back.Q, approx.Q, atol=1e-9 * (1 + np.abs(approx.Q).max()))


def test_improper_cavity_falls_back_to_global_proposal():
    # site 0 carries more precision than the global: its cavity is improper
    sites = ep.GaussianSites([NaturalGaussian(np.zeros(1), np.eye(1)),
                              NaturalGaussian(np.zeros(1), np.eye(1))])
    state = ep.EpState([NaturalGaussian(np.zeros(1), 3 * np.eye(1)),
                        NaturalGaussian(np.zeros(1), -np.eye(1))],
                       NaturalGaussian(np.zeros(1), 2 * np.eye(1)))
    assert not ep.cavity(state, 0).is_proper()
    out = ep._site_update(sites, 0, state, ep.EpConfig(is_samples=2000), False,
                          np.random.default_rng(0))
    assert out.method == "is-global"


# ---------------------------------------------------------------- tilted moments

def test_tilted_laplace_constant_site_returns_cavity():
    sites = ep.GaussianSites([NaturalGaussian(np.zeros(2), np.zeros((2, 2)))])
    cav = NaturalGaussian(np.array([1.0, -2.0]), np.array([[2.0, 0.5], [0.5, 1.0]]))
    m = ep.tilted_laplace(sites, 0, cav)
    ref = gaussian.to_moments(cav)
    np.testing.assert_allclose(m.mu, ref.mu, atol=1e-10)
    np.testing.assert_allclose(m.sigma, ref.sigma, atol=1e-10)


@given(st.integers(0, 10_000))
def test_tilted_laplace_gaussian_site_is_exact_product(seed):
    rng = np.random.default_rng(seed)
    site = _random_site(rng, 3)
    cav = _random_site(rng, 3)
    m = ep.tilted_laplace(ep.GaussianSites([site]), 0, cav)
    ref = gaussian.to_moments(site * cav)
    np.testing.assert_allclose(m.mu, ref.mu, atol=1e-8)
    np.testing.assert_allclose(m.sigma, ref.sigma, atol=1e-8)


def test_tilted_laplace_el_site_is_stationary(linreg2_target, linreg2_laplace):
    sites = ep.ELSites(linreg2_target, 4)
    state = ep.init_from_laplace(linreg2_laplace, ep.EpConfig(num_sites=4))
    cav = ep.cavity(state, 2)
    m = ep.tilted_laplace(sites, 2, cav)
    v, g = sites.value_grad(m.mu, 2)
    total = g + cav.r - cav.Q @ m.mu
    assert np.linalg.norm(total) <= 1e-8 * (1 + np.linalg.norm(cav.r))


def test_tilted_is_matches_exact_moments_within_clt_bound():
    rng = np.random.default_rng(3)
    site = _random_site(rng, 2)
    cav = _random_site(rng, 2)
    exact = gaussian.to_moments(site * cav)
    L = 20_000
    m, ess = ep.tilted_is(ep.GaussianSites([site]), 0, cav, site * cav, L, rng)
    assert ess == pytest.approx(L)
    se = np.sqrt(np.diag(exact.sigma) / L)
    assert np.all(np.abs(m.mu - exact.mu) <= 5 * se)
    np.testing.assert_allclose(m.sigma, exact.sigma, rtol=0.1, atol=0.05 * exact.sigma.max())


def test_tilted_is_single_nonzero_weight_gives_zero_covariance():
    class OneSurvivor:
        smooth = True
        num_sites = 1
        p = 2
        calls = 0

        def log_factors(self, thetas, j):
            out = np.full(thetas.shape[0], -np.inf)
            out[7] = 0.0
            return out

    cav = NaturalGaussian(np.zeros(2), np.eye(2))
    m, ess = ep.tilted_is(OneSurvivor(), 0, cav, cav, 50, np.random.default_rng(1))
    assert ess == pytest.approx(1.0)
    np.testing.assert_allclose(m.sigma, 0.0, atol=1e-12)


def test_tilted_is_disjoint_proposal_raises():
    class Empty:
        smooth = True

        def log_factors(self, thetas, j):
            return np.full(thetas.shape[0], -np.inf)

    cav = NaturalGaussian(np.zeros(2), np.eye(2))
    with pytest.raises(ep.DisjointProposalError):
        ep.tilted_is(Empty(), 0, cav, cav, 100, np.random.default_rng(1))


# ---------------------------------------------------------------- commit

def test_commit_halves_until_proper():
    approx = NaturalGaussian(np.zeros(1), np.eye(1))
    cand, factor, ok = ep.commit_with_retry(approx, np.zeros(1), -1.5 * np.eye(1))
    assert ok and factor == 0.5
    np.testing.assert_allclose(cand.Q, [[0.25]])


def test_commit_skips_after_max_halvings():
    approx = NaturalGaussian(np.zeros(1), np.eye(1))
    cand, factor, ok = ep.commit_with_retry(approx, np.zeros(1), -1e9 * np.eye(1), 10)
    assert not ok
    assert cand is approx


# ---------------------------------------------------------------- full runs

@pytest.mark.parametrize("seed", range(5))
def test_seam_converges_to_exact_product_in_two_cycles(seed):
    sites = _seam(seed)
    cfg = ep.EpConfig(num_sites=4, alpha=1.0, tilted="laplace", max_cycles=2,
                      convergence_tol=1e-12)
    g, trace = ep.run(None, cfg, sites=sites, lap=_approx_for(sites))
    exact = sites.exact_posterior()
    np.testing.assert_allclose(g.r, exact.r, atol=1e-8)
    np.testing.assert_allclose(g.Q, exact.Q, atol=1e-8)
    assert len(trace) <= 2


def test_seam_damped_run_converges():
    sites = _seam(11)
    cfg = ep.EpConfig(num_sites=4, alpha=0.3, tilted="laplace", max_cycles=500,
                      convergence_tol=1e-10)
    g, trace = ep.run(None, cfg, sites=sites, lap=_approx_for(sites))
    assert trace.converged
    exact = sites.exact_posterior()
    np.testing.assert_allclose(g.Q, exact.Q, atol=1e-7)


def _cheap_cfg(**kw):
    base = dict(num_sites=4, alpha=0.5, warmup_cycles=10, is_samples=600, max_cycles=14)
    base.update(kw)
    return ep.EpConfig(**base)


@pytest.fixture(scope="module")
def linreg2_run(linreg2_target, linreg2_laplace):
    states = []

    def cb(state, rec):
        states.append((state.approx, state.check_consistency(), rec))

    g, trace = ep.run(linreg2_target, _cheap_cfg(), seed=5, lap=linreg2_laplace, callback=cb)
    return g, trace, states


def test_every_committed_global_is_proper_and_consistent(linreg2_run):
    _, trace, states = linreg2_run
    assert len(states) == len(trace)
    for approx, consistent, rec in states:
        if rec["committed"]:
            assert approx.is_proper()
            assert consistent


def test_run_switches_to_importance_sampling(linreg2_run):
    _, trace, _ = linreg2_run
    methods = {m for r in trace.records for m in r["methods"]}
    assert "laplace" in methods and "exact" in methods
    assert any(m.startswith("is-") for m in methods)


def test_run_is_deterministic(linreg2_target, linreg2_laplace, linreg2_run):
    g, _, _ = linreg2_run
    g2, _ = ep.run(linreg2_target, _cheap_cfg(), seed=5, lap=linreg2_laplace)
    np.testing.assert_array_equal(g.r, g2.r)
    np.testing.assert_array_equal(g.Q, g2.Q)


def test_trace_jsonl_and_diagnostics(linreg2_run):
    _, trace, _ = linreg2_run
    lines = trace.to_jsonl().strip().split("\n")
    assert len(lines) == len(trace)
    rec = json.loads(lines[-1])
    for key in ("cycle", "max_update", "ess", "methods", "failed_sites", "alpha_used",
                "committed", "seconds"):
        assert key in rec
    assert len(trace.state.diagnostics["ess"]) == len(trace)
    assert len(trace.state.diagnostics["alpha_history"]) == len(trace)


def test_averaged_is_mean_of_history(linreg2_run):
    _, trace, _ = linreg2_run
    avg = trace.averaged(3)
    np.testing.assert_allclose(avg.Q, np.mean([g.Q for g in trace.history[-3:]], axis=0))
    with pytest.raises(ValueError):
        ep.EpTrace().averaged(3)


def test_linreg2_mean_near_gold(linreg2_run, linreg2_gold):
    g, _, _ = linreg2_run
    gold_mean = linreg2_gold.draws.mean(axis=0)
    assert np.all(np.abs(gaussian.mean(g) - gold_mean) <= 0.05)


def test_block_permutation_invariance(linreg2_target, linreg2_laplace):
    # reversing the observation order permutes the blocks; the fixed point is unchanged
    t = linreg2_target
    perm = np.arange(t.n)[::-1]
    data = models.Dataset(t.data.observations[perm])
    t2 = posterior.Target(t.model, data)
    cfg = _cheap_cfg(tilted="laplace", max_cycles=60, convergence_tol=1e-8)
    g1, _ = ep.run(t, cfg, seed=1, lap=linreg2_laplace)
    g2, _ = ep.run(t2, _cheap_cfg(tilted="laplace", max_cycles=60, convergence_tol=1e-8),
                   seed=1, lap=linreg2_laplace)
    m1, m2 = gaussian.mean(g1), gaussian.mean(g2)
    assert np.all(np.abs(m1 - m2) <= 0.02)


def test_quantile_uses_cavity_proposals():
    data = models.generate("quantile", 0, 50)
    t = posterior.Target(models.quantile_model(smooth=False), data,
                         surrogate=models.quantile_model(smooth=True))
    cfg = ep.EpConfig(num_sites=3, alpha=0.5, is_samples=800, max_cycles=3)
    g, trace = ep.run(t, cfg, seed=0)
    methods = {m for r in trace.records for m in r["methods"]}
    assert "is-cavity" in methods
    assert "laplace" not in methods and "is-laplace" not in methods
    assert g.is_proper()


# ---------------------------------------------------------------- config

@pytest.mark.parametrize("kw", [dict(num_sites=0), dict(num_sites=200), dict(alpha=0.0),
                                dict(alpha=1.5), dict(is_samples=3), dict(tilted="nope"),
                                dict(max_cycles=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        ep.EpConfig(**kw).validate(100, 2)


def test_config_round_trip():
    cfg = ep.EpConfig(alpha=0.3, num_sites=5)
    assert ep.config_from_dict(ep.config_to_dict(cfg)) == cfg
