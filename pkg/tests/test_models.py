import hashlib

import numpy as np
import pytest
from hypothesis import given, strategies as st

from epel import models
from epel.models import Dataset, NonDifferentiableModelError

from oracles import central_fd, rel_err


def test_linreg_hand_values():
    m = models.linreg_model(2)
    np.testing.assert_allclose(m.h(np.array([[0.5, 1.0, 0.0]]), np.array([0.5, 1.0])), [[0.0, 0.0]])
    np.testing.assert_allclose(m.h(np.array([[3.0, 1.0, 2.0]]), np.array([1.0, 0.0])), [[2.0, 4.0]])


def test_logistic_at_zero_and_saturation():
    m = models.logistic_model(2)
    Z = np.array([[1.0, 1.0, 2.0], [0.0, 1.0, -1.0]])
    np.testing.assert_allclose(m.h(Z, np.zeros(2)), Z[:, 1:] * (Z[:, :1] - 0.5))
    h = m.h(np.array([[1.0, 1.0, 1.0]]), np.array([50.0, 50.0]))
    assert np.all(np.abs(h) < 1e-12)


def test_quantile_scores():
    tau = 0.7
    np.testing.assert_allclose(models.quantile_score([-1.0, 1.0, 0.0], tau), [0.3, -0.7, 0.0])
    assert models.smooth_quantile_score(0.0, tau, 0.1) == pytest.approx(-0.2)
    u = np.concatenate([np.linspace(-20, -0.46, 500), np.linspace(0.46, 20, 500)])
    diff = np.abs(models.smooth_quantile_score(u, tau, 0.1) - models.quantile_score(u, tau))
    assert diff.max() <= 0.01


@given(st.floats(0.01, 1.0), st.floats(0.05, 0.95), st.floats(1.0, 50.0), st.booleans())
def test_smooth_score_tail_bound(eps, tau, k, neg):
    u = (10 + k) * eps * (-1 if neg else 1)
    gap = abs(models.smooth_quantile_score(u, tau, eps) - models.quantile_score(u, tau))
    assert gap <= np.exp(-abs(u) / eps) + 1e-15


def test_quantile_defaults():
    m = models.quantile_model()
    assert m.tau == 0.7 and m.epsilon_rho == 0.1 and not m.smooth
    with pytest.raises(NonDifferentiableModelError):
        m.jac_h(np.zeros((3, 3)), np.zeros(2))


def test_gee_zero_residual_and_eigenvector():
    m = models.gee_model()
    rng = np.random.default_rng(0)
    theta = rng.standard_normal(5)
    x = rng.standard_normal((5, 2))
    y = x.T @ theta
    Z = np.concatenate([y, x[:, 0], x[:, 1]])[None]
    np.testing.assert_allclose(m.h(Z, theta), np.zeros((1, 10)), atol=1e-12)
    M2 = models.compound_symmetry(0.7)
    np.testing.assert_allclose(M2 @ np.ones(2), 1.7 * np.ones(2))
    # a residual along (1, 1) makes the second block 1.7 times the first
    Z = np.concatenate([y + 1.0, x[:, 0], x[:, 1]])[None]
    h = m.h(Z, theta)[0]
    np.testing.assert_allclose(h[5:], 1.7 * h[:5])
    assert m.K == 10 and m.p == 5


def _fd_check(model, Z, theta, tol):
    J = model.jac_h(Z, theta)
    fd = central_fd(lambda th: model.h(Z, th), theta, 1e-6 * (1 + np.abs(theta)))
    assert rel_err(J, fd) <= tol


@pytest.mark.parametrize("name", ["linreg2", "linreg10", "gee"])
def test_jacobians_match_fd(name):
    model = models.model_for(name)
    data = models.generate(name, 3)
    rng = np.random.default_rng(1)
    for _ in range(50):
        theta = np.asarray(data.meta["theta0"]) + rng.standard_normal(model.p)
        _fd_check(model, data.observations[:10], theta, 1e-6)


def test_logistic_and_smooth_quantile_jacobians():
    rng = np.random.default_rng(2)
    data = models.load_kyphosis()
    lg = models.logistic_model()
    sq = models.quantile_model(smooth=True)
    qd = models.generate("quantile", 0)
    for _ in range(50):
        _fd_check(lg, data.observations[:10], rng.standard_normal(4), 1e-6)
        _fd_check(sq, qd.observations[:10], np.array([0.5, 1.0]) + 0.3 * rng.standard_normal(2), 1e-6)


def test_h_batch_matches_h():
    rng = np.random.default_rng(0)
    for name in ("linreg2", "gee", "quantile"):
        data = models.generate(name, 1)
        model = models.model_for(name)
        thetas = rng.standard_normal((4, model.p))
        hb = model.h_batch(data.observations, thetas)
        for l in range(4):
            np.testing.assert_allclose(hb[l], model.h(data.observations, thetas[l]), atol=1e-13)


def test_generated_constants():
    d = models.generate("linreg2", 0)
    assert d.meta["theta0"] == [0.5, 1.0] and d.n == 100
    g = models.generate("gee", 0)
    assert g.n == 50 and len(g.meta["theta0"]) == 5
    assert g.meta["theta0"] == [3.0, 1.5, 0.0, 0.0, 2.0]
    assert models.generate("linreg10", 0).meta["theta0"][:5] == [0.5, 1.0, 0.5, -1.0, 0.5]


@given(st.sampled_from(models.EXPERIMENTS), st.integers(0, 10 ** 6))
def test_generate_is_pure(name, seed):
    a = models.generate(name, seed).observations
    b = models.generate(name, seed).observations
    assert hashlib.sha256(a.tobytes()).digest() == hashlib.sha256(b.tobytes()).digest()


def test_generate_unknown():
    with pytest.raises(ValueError):
        models.generate("nope")


def test_kyphosis():
    d = models.load_kyphosis()
    assert d.n == 81
    X = d.observations[:, 1:]
    np.testing.assert_array_equal(X[:, 0], 1.0)
    assert np.abs(X[:, 1:].mean(axis=0)).max() <= 1e-12
    np.testing.assert_allclose(X[:, 1:].std(axis=0, ddof=1), 1.0, atol=1e-12)
    assert set(np.unique(d.observations[:, 0])) == {0.0, 1.0}
    assert int(d.observations[:, 0].sum()) == 17


def test_kyphosis_validation(tmp_path):
    src = models.bundled_kyphosis_path().read_text().splitlines()
    short = tmp_path / "short.csv"
    short.write_text("\n".join(src[:-1]) + "\n")
    with pytest.raises(ValueError):
        models.load_kyphosis(short, verify_checksum=True)
    assert models.load_kyphosis(short).n == 80
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        models.load_kyphosis(bad)
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(ValueError):
        models.load_kyphosis(empty)


def test_dataset_validation_and_csv(tmp_path):
    with pytest.raises(ValueError):
        Dataset(np.array([[np.nan, 1.0]]))
    d = models.generate("linreg2", 0)
    d.to_csv(tmp_path / "d.csv")
    back = models.load_csv(tmp_path / "d.csv")
    np.testing.assert_allclose(back.observations, d.observations)
    assert d.subset(np.arange(10)).n == 10
