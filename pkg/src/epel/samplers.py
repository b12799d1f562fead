"""MCMC for the EL posterior: random-walk Metropolis-Hastings and HMC.

HMC uses the two-stage minimal-norm integrator
    p += b h F(q);  q += h/2 M^-1 p;  p += (1 - 2b) h F(q);  q += h/2 M^-1 p;  p += b h F(q)
with b = 0.1931833275037836, which has the smallest leading error term among
two-stage symmetric splittings.  Any trajectory that leaves the EL support is
rejected as a divergence.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from . import elcore, gaussian, posterior
from .models import NonDifferentiableModelError
from .posterior import Target

MN_B = 0.1931833275037836
MN_A = 0.5


@dataclass
class ChainConfig:
    draws: int = 10_000
    burn_in: int = 10_000
    step_size: float = 0.01
    n_leapfrog: int = 50
    mass: np.ndarray | None = None
    proposal_cov: np.ndarray | None = None
    shrinkage: float = 0.7
    preliminary: int = 10_000
    seed: int = 0
    start: np.ndarray | None = None
    max_seconds: float | None = None
    max_work: int | None = None       # stop after this many inner EL solves

    def validate(self):
        if self.draws <= 0:
            raise ValueError("draws must be positive")
        if self.burn_in < 0:
            raise ValueError("burn_in must be non-negative")
        if self.step_size <= 0 or self.n_leapfrog < 1:
            raise ValueError("step_size must be positive and n_leapfrog >= 1")
        if not 0.0 < self.shrinkage <= 1.0:
            raise ValueError("shrinkage must lie in (0, 1]")
        for name in ("mass", "proposal_cov"):
            m = getattr(self, name)
            if m is not None and not gaussian.is_pd(np.asarray(m, dtype=float)):
                raise ValueError(f"{name} must be positive definite")


@dataclass
class SampleMatrix:
    draws: np.ndarray
    accept_rate: float
    seconds: float
    method: str
    seed: int
    burn_in: int = 0
    elapsed: np.ndarray | None = field(default=None, repr=False)
    work: np.ndarray | None = field(default=None, repr=False)
    evals_per_draw: int = 1
    extra: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.draws.shape[0]

    def sidecar(self) -> dict:
        return {"method": self.method, "seed": self.seed, "accept_rate": self.accept_rate,
                "seconds": self.seconds, "burn_in": self.burn_in, **self.extra}

    def save(self, path) -> None:
        """CSV with header theta_1..theta_p plus a ``.json`` sidecar."""
        path = Path(path)
        p = self.draws.shape[1]
        header = ",".join(f"theta_{k + 1}" for k in range(p))
        np.savetxt(path, self.draws, delimiter=",", header=header, comments="", fmt="%.17g")
        path.with_suffix(".json").write_text(json.dumps(self.sidecar(), indent=1))

    @classmethod
    def load(cls, path) -> "SampleMatrix":
        path = Path(path)
        draws = np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1))
        side = path.with_suffix(".json")
        meta = json.loads(side.read_text()) if side.exists() else {}
        return cls(draws, float(meta.get("accept_rate", np.nan)), float(meta.get("seconds", 0.0)),
                   meta.get("method", "unknown"), int(meta.get("seed", 0)),
                   int(meta.get("burn_in", 0)))


def _start(t: Target, cfg: ChainConfig) -> np.ndarray:
    if cfg.start is not None:
        x = np.asarray(cfg.start, dtype=float).copy()
    elif t.use_likelihood:
        x = posterior.map_newton(t).mode
    else:
        x = gaussian.mean(t.prior)
    if not np.isfinite(posterior.log_post(t, x)):
        raise posterior.OutOfSupportError("chain start is outside the posterior support")
    return x


def _rw_chain(t: Target, x, lp, chol, count, rng, deadline=None, work_limit=None):
    p = x.size
    out = np.empty((count, p))
    elapsed = np.empty(count)
    work = np.empty(count, dtype=np.int64)
    noise = rng.standard_normal((count, p)) @ chol.T
    logu = np.log(rng.random(count))
    acc = 0
    t0 = time.perf_counter()
    m = count
    for i in range(count):
        y = x + noise[i]
        ly = posterior.log_post(t, y)
        if logu[i] < ly - lp:
            x, lp = y, ly
            acc += 1
        out[i] = x
        now = time.perf_counter()
        elapsed[i] = now - t0
        work[i] = elcore.solve_count()
        if (deadline is not None and now >= deadline) or \
                (work_limit is not None and work[i] >= work_limit):
            m = i + 1
            break
    return out[:m], elapsed[:m], work[:m], acc, x, lp


def _laplace_cov(t: Target) -> np.ndarray:
    if not t.use_likelihood:
        return gaussian.to_moments(t.prior).sigma
    lap = posterior.map_newton(t)
    return gaussian.to_moments(lap.approx).sigma


def mh_run(t: Target, cfg: ChainConfig | None = None) -> SampleMatrix:
    """Two-phase random-walk Metropolis-Hastings.

    Without ``proposal_cov``, a preliminary chain with an isotropic proposal
    (scaled from the Laplace variances) estimates the posterior covariance;
    the main chain then proposes from shrinkage * that estimate.
    Draws after burn-in are returned, with their cumulative wall clock.
    """
    cfg = cfg or ChainConfig()
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    t0 = time.perf_counter()
    w0 = elcore.solve_count()
    x = _start(t, cfg)
    lp = posterior.log_post(t, x)
    p = x.size
    extra = {}
    if cfg.proposal_cov is None:
        var = float(np.mean(np.diag(_laplace_cov(t))))
        iso = np.sqrt(2.38 ** 2 / p * var) * np.eye(p)
        pre, _, _, acc0, x, lp = _rw_chain(t, x, lp, iso, cfg.preliminary, rng)
        cov = np.cov(pre[cfg.preliminary // 10:], rowvar=False).reshape(p, p)
        if not gaussian.is_pd(cov):
            cov = posterior.pd_repair(cov)
        prop = cfg.shrinkage * cov
        extra["preliminary_accept_rate"] = acc0 / cfg.preliminary
    else:
        prop = np.asarray(cfg.proposal_cov, dtype=float)
    chol = linalg.cholesky(prop, lower=True)
    deadline = None if cfg.max_seconds is None else t0 + cfg.max_seconds
    setup = time.perf_counter() - t0
    limit = None if cfg.max_work is None else w0 + cfg.max_work
    total = cfg.burn_in + cfg.draws
    out, elapsed, work, acc, _, _ = _rw_chain(t, x, lp, chol, total, rng, deadline, limit)
    keep = slice(min(cfg.burn_in, out.shape[0]), None)
    return SampleMatrix(out[keep], acc / max(out.shape[0], 1), time.perf_counter() - t0, "mh",
                        cfg.seed, cfg.burn_in, elapsed[keep] + setup, work[keep] - w0, 1, extra)


def minimal_norm_step(grad_fn, q, p, h, minv, g=None):
    """One integrator step; returns (q, p, grad at new q) or None on divergence.

    ``grad_fn`` returns the gradient of log density or None outside the support.
    ``g`` is the gradient at the incoming q, reused between steps.
    """
    if g is None:
        g = grad_fn(q)
        if g is None:
            return None
    p = p + MN_B * h * g
    q = q + MN_A * h * (minv @ p)
    g = grad_fn(q)
    if g is None:
        return None
    p = p + (1.0 - 2.0 * MN_B) * h * g
    q = q + MN_A * h * (minv @ p)
    g = grad_fn(q)
    if g is None:
        return None
    p = p + MN_B * h * g
    return q, p, g


def integrate(grad_fn, q, p, h, n_steps, minv=None):
    """Integrate ``n_steps``; returns (q, p, g) or None if the trajectory diverges."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    minv = np.eye(q.size) if minv is None else minv
    g = None
    for _ in range(n_steps):
        out = minimal_norm_step(grad_fn, q, p, h, minv, g)
        if out is None:
            return None
        q, p, g = out
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            return None
    return q, p, g


def hmc_run(t: Target, cfg: ChainConfig | None = None) -> SampleMatrix:
    """HMC with the minimal-norm integrator and a fixed mass matrix."""
    if t.use_likelihood and not t.smooth:
        raise NonDifferentiableModelError(
            "gradient unavailable for a non-smooth model; use the MH sampler")
    cfg = cfg or ChainConfig()
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    t0 = time.perf_counter()
    w0 = elcore.solve_count()
    q = _start(t, cfg)
    d = q.size
    mass = np.eye(d) if cfg.mass is None else np.asarray(cfg.mass, dtype=float)
    minv = linalg.inv(mass)
    lchol = linalg.cholesky(mass, lower=True)

    if t.use_likelihood:
        def grad_fn(x):
            return posterior.value_and_grad(t, x)[1]
    else:
        def grad_fn(x):
            return gaussian.grad_log_pdf(t.prior, x)

    lp, g = posterior.value_and_grad(t, q)
    total = cfg.burn_in + cfg.draws
    out = np.empty((total, d))
    elapsed = np.empty(total)
    work = np.empty(total, dtype=np.int64)
    deadline = None if cfg.max_seconds is None else t0 + cfg.max_seconds
    limit = None if cfg.max_work is None else w0 + cfg.max_work
    acc = 0
    divergent = 0
    m = total
    for i in range(total):
        p0 = lchol @ rng.standard_normal(d)
        logu = np.log(rng.random())
        h0 = -lp + 0.5 * p0 @ minv @ p0
        res = integrate(grad_fn, q, p0, cfg.step_size, cfg.n_leapfrog, minv)
        if res is None:
            divergent += 1
        else:
            qn, pn, gn = res
            lpn = posterior.log_post(t, qn)
            h1 = -lpn + 0.5 * pn @ minv @ pn
            if not np.isfinite(h1):
                divergent += 1
            elif logu < h0 - h1:
                q, lp, g = qn, lpn, gn
                acc += 1
        out[i] = q
        now = time.perf_counter()
        elapsed[i] = now - t0
        work[i] = elcore.solve_count()
        if (deadline is not None and now >= deadline) or (limit is not None and work[i] >= limit):
            m = i + 1
            break
    keep = slice(min(cfg.burn_in, m), m)
    return SampleMatrix(out[keep], acc / m, time.perf_counter() - t0, "hmc", cfg.seed,
                        cfg.burn_in, elapsed[keep], work[keep] - w0, 2 * cfg.n_leapfrog + 1,
                        {"divergences": divergent})


def thin_and_pool(chain: SampleMatrix, burn_in: int, count: int) -> SampleMatrix:
    """Drop ``burn_in`` rows and keep ``count`` evenly spaced rows.

    Index k of the result is row burn_in + floor(k * R / count) with
    R = M - burn_in, so count=1 keeps row ``burn_in``.
    """
    M = chain.size
    if not 0 <= burn_in < M:
        raise ValueError("burn_in must be below the chain length")
    R = M - burn_in
    if count > R or count < 1:
        raise ValueError(f"cannot keep {count} rows out of {R}")
    idx = burn_in + (np.arange(count) * R) // count
    el = None if chain.elapsed is None else chain.elapsed[idx]
    wk = None if chain.work is None else chain.work[idx]
    return SampleMatrix(chain.draws[idx], chain.accept_rate, chain.seconds, chain.method,
                        chain.seed, chain.burn_in + burn_in, el, wk, chain.evals_per_draw,
                        dict(chain.extra))
