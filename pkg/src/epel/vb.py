"""Full-covariance Gaussian variational Bayes on the adjusted-EL posterior.

The adjusted EL appends the pseudo-observation ``-(a_n / n) * sum_i h_i`` so
that zero is always inside the convex hull; the ELBO is then finite for every
draw and the pathwise (reparameterization) gradient is always defined.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import elcore, gaussian, posterior
from .gaussian import MomentGaussian, NaturalGaussian
from .models import NonDifferentiableModelError


@dataclass
class VbConfig:
    learning_rate: float = 1e-3
    steps: int = 20_000
    mc_samples: int = 1
    adjustment: float | None = None   # None -> log(n) / 2
    seed: int = 0
    max_seconds: float | None = None

    def validate(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.adjustment is not None and self.adjustment < 0:
            raise ValueError("adjustment must be non-negative")
        if self.steps < 0 or self.mc_samples < 1:
            raise ValueError("steps must be >= 0 and mc_samples >= 1")


def default_adjustment(n: int) -> float:
    return 0.5 * np.log(n)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _softplus_inv(y):
    return y + np.log(-np.expm1(-y))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class VbParams:
    """Mean and an unconstrained lower-triangular factor; its diagonal goes through softplus."""

    mu: np.ndarray
    raw: np.ndarray

    @property
    def scale_tril(self) -> np.ndarray:
        L = np.tril(self.raw, -1)
        L[np.diag_indices_from(L)] = _softplus(np.diag(self.raw))
        return L

    @classmethod
    def from_moments(cls, m: MomentGaussian) -> "VbParams":
        L = linalg.cholesky(m.sigma, lower=True)
        raw = L.copy()
        raw[np.diag_indices_from(raw)] = _softplus_inv(np.diag(L))
        return cls(m.mu.copy(), raw)

    def to_moments(self) -> MomentGaussian:
        L = self.scale_tril
        return MomentGaussian(self.mu.copy(), L @ L.T)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.mu, self.raw[np.tril_indices(self.mu.size)]])

    @classmethod
    def unflat(cls, v, p) -> "VbParams":
        raw = np.zeros((p, p))
        raw[np.tril_indices(p)] = v[p:]
        return cls(np.array(v[:p]), raw)


def _augment(H, a_n):
    n = H.shape[0]
    return np.vstack([H, -(a_n / n) * H.sum(axis=0)])


def adjusted_el(model, data, theta, a_n: float, tol=elcore.DEFAULT_TOL,
                max_iter=elcore.DEFAULT_MAX_ITER) -> elcore.ELEvaluation:
    """EL on the n observations plus the pseudo-row; a_n = 0 means no augmentation."""
    if a_n < 0:
        raise ValueError("a_n must be non-negative")
    if a_n == 0:
        return elcore.eval_el(model, data, theta, tol, max_iter)
    H = model.h(data.observations, np.asarray(theta, dtype=float))
    return elcore.solve_lambda(_augment(H, a_n), tol, max_iter)


def adjusted_value_and_grad(t: posterior.Target, theta, a_n: float):
    """log prior + adjusted log EL and its gradient (None outside the support)."""
    theta = np.asarray(theta, dtype=float)
    lp = posterior.log_prior(t, theta)
    gp = gaussian.grad_log_pdf(t.prior, theta)
    if not t.use_likelihood:
        return lp, gp
    if a_n == 0:
        return posterior.value_and_grad(t, theta)
    Z = t.data.observations
    H = _augment(t.model.h(Z, theta), a_n)
    ev = elcore.solve_lambda(H, t.el_tol, t.el_max_iter)
    if not ev.in_support:
        return -np.inf, None
    J = t.model.jac_h(Z, theta)
    # the pseudo-row depends on theta through sum_i h_i
    Ja = np.concatenate([J, -(a_n / Z.shape[0]) * J.sum(axis=0)[None]], axis=0)
    g = elcore.gradient_from_h(H, Ja, ev.lam)
    return lp + ev.log_el, gp + g.grad_log_el


def entropy_of(params: VbParams) -> float:
    p = params.mu.size
    return 0.5 * p * np.log(2 * np.pi * np.e) + float(np.sum(np.log(np.diag(params.scale_tril))))


def elbo_grad_pathwise(t: posterior.Target, params: VbParams, cfg: VbConfig,
                       rng: np.random.Generator, eps=None):
    """One-sample (or ``mc_samples``) ELBO estimate and gradient wrt (mu, raw).

    ``eps`` fixes the standard-normal draws (rows), for common random numbers.
    Returns (elbo, grad_mu, grad_raw); draws outside the support give -inf.
    """
    if t.use_likelihood and not t.smooth:
        raise NonDifferentiableModelError("VB needs a differentiable constraint model")
    p = params.mu.size
    a_n = default_adjustment(t.n) if cfg.adjustment is None else cfg.adjustment
    if eps is None:
        eps = rng.standard_normal((cfg.mc_samples, p))
    eps = np.atleast_2d(eps)
    L = params.scale_tril
    gmu = np.zeros(p)
    gL = np.zeros((p, p))
    total = 0.0
    for e in eps:
        val, g = adjusted_value_and_grad(t, params.mu + L @ e, a_n)
        if g is None:
            return -np.inf, None, None
        total += val
        gmu += g
        gL += np.outer(g, e)
    m = eps.shape[0]
    gmu /= m
    gL = np.tril(gL / m)
    d = np.diag(params.raw)
    diag_grad = (np.diag(gL) + 1.0 / np.diag(L)) * _sigmoid(d)
    graw = gL.copy()
    graw[np.diag_indices(p)] = diag_grad
    return total / m + entropy_of(params), gmu, graw


def vb_run(t: posterior.Target, cfg: VbConfig | None = None, init=None, callback=None):
    """Adam on the pathwise ELBO gradient, started from the Laplace approximation.

    Returns (NaturalGaussian, trace) with trace a list of
    {step, elbo_estimate, seconds}.  ``callback(step, params, seconds)`` may
    return True to stop early.
    """
    cfg = cfg or VbConfig()
    cfg.validate()
    t0 = time.perf_counter()
    if init is None:
        lap = posterior.map_newton(t)
        if not lap.converged:
            raise posterior.OutOfSupportError("Laplace initialization did not converge")
        init = lap.approx
    if isinstance(init, posterior.LaplaceResult):
        init = init.approx
    if isinstance(init, NaturalGaussian):
        init = gaussian.to_moments(init)
    params = VbParams.from_moments(init)
    if cfg.steps == 0:
        return gaussian.from_moments(params.to_moments()), []
    rng = np.random.default_rng(cfg.seed)
    p = params.mu.size
    x = params.flat()
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    b1, b2, eps_adam = 0.9, 0.999, 1e-8
    tri = np.tril_indices(p)
    trace = []
    for step in range(1, cfg.steps + 1):
        params = VbParams.unflat(x, p)
        elbo, gmu, graw = elbo_grad_pathwise(t, params, cfg, rng)
        if gmu is not None:
            g = np.concatenate([gmu, graw[tri]])
            # ascent: Adam on the negative ELBO
            m = b1 * m - (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            mh = m / (1 - b1 ** step)
            vh = v / (1 - b2 ** step)
            x = x - cfg.learning_rate * mh / (np.sqrt(vh) + eps_adam)
        secs = time.perf_counter() - t0
        trace.append({"step": step, "elbo_estimate": float(elbo), "seconds": secs})
        if callback is not None and callback(step, VbParams.unflat(x, p), secs):
            break
        if cfg.max_seconds is not None and secs >= cfg.max_seconds:
            break
    params = VbParams.unflat(x, p)
    return gaussian.from_moments(params.to_moments()), trace
