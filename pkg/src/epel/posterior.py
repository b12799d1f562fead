"""Log posterior ``log p(theta) + log EL(theta)`` and its Laplace approximation."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import elcore, gaussian
from .gaussian import NaturalGaussian
from .models import ConstraintModel, Dataset, NonDifferentiableModelError

PRIOR_SD = 10.0


OutOfSupportError = elcore.OutOfSupportError


@dataclass(frozen=True, eq=False)
class Target:
    """Bayesian EL posterior: Gaussian prior times profile empirical likelihood.

    ``surrogate`` is an optional smooth stand-in for a non-smooth model; it is
    used only where derivatives are unavoidable (the Newton start and Laplace
    fit).  ``use_likelihood=False`` reduces the target to its prior.
    """

    model: ConstraintModel
    data: Dataset
    prior: NaturalGaussian | None = None
    use_likelihood: bool = True
    surrogate: ConstraintModel | None = None
    el_tol: float = elcore.DEFAULT_TOL
    el_max_iter: int = elcore.DEFAULT_MAX_ITER

    def __post_init__(self):
        if self.prior is None:
            object.__setattr__(self, "prior",
                               NaturalGaussian.isotropic(self.model.p, PRIOR_SD ** 2))
        if self.prior.dim != self.model.p:
            raise ValueError("prior dimension does not match the model")
        if not self.prior.is_proper():
            raise ValueError("prior must be proper")

    @property
    def p(self) -> int:
        return self.model.p

    @property
    def n(self) -> int:
        return self.data.n

    @property
    def smooth(self) -> bool:
        return bool(self.model.smooth)

    def with_model(self, model) -> "Target":
        return Target(model, self.data, self.prior, self.use_likelihood, None,
                      self.el_tol, self.el_max_iter)

    def differentiable(self) -> "Target":
        """This target if smooth, else the one built on the smooth surrogate."""
        if self.smooth:
            return self
        if self.surrogate is None:
            raise NonDifferentiableModelError("non-smooth model without a smooth surrogate")
        return self.with_model(self.surrogate)


def log_prior(t: Target, theta):
    return gaussian.log_pdf(t.prior, theta)


def eval_el(t: Target, theta) -> elcore.ELEvaluation:
    return elcore.eval_el(t.model, t.data, theta, t.el_tol, t.el_max_iter)


def log_post(t: Target, theta) -> float:
    theta = np.asarray(theta, dtype=float)
    lp = log_prior(t, theta)
    if not t.use_likelihood:
        return lp
    ev = eval_el(t, theta)
    if not ev.in_support:
        return -np.inf
    return lp + ev.log_el


def log_post_batch(t: Target, thetas) -> np.ndarray:
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    lp = np.atleast_1d(log_prior(t, thetas))
    if not t.use_likelihood:
        return lp
    return lp + elcore.log_el_batch(t.model, t.data, thetas, t.el_tol, t.el_max_iter)


def value_and_grad(t: Target, theta):
    """(log_post, gradient); gradient is None outside the support."""
    theta = np.asarray(theta, dtype=float)
    lp = log_prior(t, theta)
    gp = gaussian.grad_log_pdf(t.prior, theta)
    if not t.use_likelihood:
        return lp, gp
    ev = eval_el(t, theta)
    if not ev.in_support:
        return -np.inf, None
    g = elcore.el_gradient(t.model, t.data, theta, ev)
    return lp + ev.log_el, gp + g.grad_log_el


def grad_log_post(t: Target, theta) -> np.ndarray:
    _, g = value_and_grad(t, theta)
    if g is None:
        raise OutOfSupportError("theta is outside the posterior support")
    return g


def hess_log_post(t: Target, theta, step=None) -> np.ndarray:
    if not t.use_likelihood:
        return -t.prior.Q.copy()

    def grad(th):
        return value_and_grad(t, th)[1]

    return elcore.hessian_fd(grad, theta, step)


@dataclass(frozen=True, eq=False)
class LaplaceResult:
    mode: np.ndarray
    approx: NaturalGaussian
    newton_iters: int
    converged: bool
    seconds: float = 0.0
    grad_norm: float = np.nan

    def to_dict(self) -> dict:
        return {"mode": self.mode.tolist(), "r": self.approx.r.tolist(),
                "Q": self.approx.Q.tolist(), "converged": self.converged,
                "iters": self.newton_iters, "seconds": self.seconds}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass
class NewtonResult:
    x: np.ndarray
    value: float
    grad: np.ndarray
    neg_hess: np.ndarray
    iters: int
    converged: bool
    history: list = field(default_factory=list)


def pd_repair(A: np.ndarray, start: float = 1e-6, max_doublings: int = 200) -> np.ndarray:
    """Add the smallest ridge tau*I (tau doubling from ``start``) making ``A`` PD."""
    A = 0.5 * (A + A.T)
    if gaussian.is_pd(A):
        return A
    scale = max(1.0, float(np.max(np.abs(np.diag(A)))))
    tau = start * scale
    eye = np.eye(A.shape[0])
    for _ in range(max_doublings):
        B = A + tau * eye
        if gaussian.is_pd(B):
            return B
        tau *= 2.0
    raise linalg.LinAlgError("could not repair matrix to positive definite")


def _robust_hessian(hess_fn, x):
    # shrink the FD step when a probe crosses the support boundary
    step = None
    for _ in range(8):
        try:
            return hess_fn(x, step)
        except elcore.SupportBoundaryError:
            base = elcore.fd_steps(x) if step is None else step
            step = base / 10.0
    raise elcore.SupportBoundaryError("support boundary too close for finite differences")


def newton_maximize(value_grad, hess_fn, x0, tol=1e-8, max_iter=200, abs_tol=0.0) -> NewtonResult:
    """Damped Newton ascent with support-aware backtracking.

    ``value_grad(x)`` returns (value, grad) with value = -inf and grad None
    outside the support; ``hess_fn(x, step)`` returns the Hessian of the value.
    """
    x = np.asarray(x0, dtype=float).copy()
    f, g = value_grad(x)
    if not np.isfinite(f) or g is None:
        raise OutOfSupportError("Newton start is outside the support")
    thresh = max(tol * (1.0 + np.linalg.norm(g)), abs_tol)
    history = [float(np.linalg.norm(g))]
    neg_h = None
    for it in range(max_iter + 1):
        gn = np.linalg.norm(g)
        neg_h = -_robust_hessian(hess_fn, x)
        if gn <= thresh:
            return NewtonResult(x, f, g, neg_h, it, True, history)
        if it == max_iter:
            break
        A = pd_repair(neg_h)
        step = linalg.solve(A, g, assume_a="pos")
        slope = float(g @ step)
        s = 1.0
        accepted = False
        for _ in range(60):
            xn = x + s * step
            fn, gn_vec = value_grad(xn)
            if np.isfinite(fn) and gn_vec is not None and fn >= f + 1e-4 * s * slope:
                accepted = True
                break
            # at machine precision the Armijo test can fail on a correct step
            if np.isfinite(fn) and gn_vec is not None and np.linalg.norm(gn_vec) < gn \
                    and fn >= f - 1e-12 * (1.0 + abs(f)):
                accepted = True
                break
            s *= 0.5
        if not accepted:
            return NewtonResult(x, f, g, neg_h, it, gn <= 1e3 * thresh, history)
        x, f, g = xn, fn, gn_vec
        history.append(float(np.linalg.norm(g)))
    return NewtonResult(x, f, g, neg_h, max_iter, False, history)


def estimating_equation_start(model: ConstraintModel, data: Dataset, theta0=None,
                              max_iter: int = 50) -> np.ndarray:
    """Gauss-Newton solution of sum_i h(z_i, theta) = 0 (least squares if K > p)."""
    theta = np.zeros(model.p) if theta0 is None else np.asarray(theta0, dtype=float).copy()
    Z = data.observations
    for _ in range(max_iter):
        s = model.h(Z, theta).sum(axis=0)
        J = model.jac_h(Z, theta).sum(axis=0)
        step, *_ = np.linalg.lstsq(J, -s, rcond=None)
        theta = theta + step
        if np.linalg.norm(step) <= 1e-12 * (1.0 + np.linalg.norm(theta)):
            break
    return theta


def default_start(t: Target) -> np.ndarray:
    dt = t.differentiable()
    theta = estimating_equation_start(dt.model, dt.data)
    if np.all(np.isfinite(theta)) and np.isfinite(log_post(t, theta)):
        return theta
    return np.zeros(t.p)


def map_newton(t: Target, theta0=None, tol: float = 1e-8, max_iter: int = 200) -> LaplaceResult:
    """MAP by Newton's method and the Laplace approximation at the mode.

    Non-smooth models are fitted through their smooth surrogate.
    """
    t0 = time.perf_counter()
    dt = t.differentiable()
    x0 = default_start(dt) if theta0 is None else np.asarray(theta0, dtype=float)
    res = newton_maximize(lambda th: value_and_grad(dt, th),
                          lambda th, step: hess_log_post(dt, th, step),
                          x0, tol, max_iter)
    Q = res.neg_hess
    converged = res.converged and gaussian.is_pd(Q)
    if not gaussian.is_pd(Q):
        Q = pd_repair(Q)
    approx = NaturalGaussian(Q @ res.x, Q)
    return LaplaceResult(res.x, approx, res.iters, converged,
                         time.perf_counter() - t0, float(np.linalg.norm(res.grad)))


def ols(data: Dataset) -> np.ndarray:
    y, X = data.observations[:, 0], data.observations[:, 1:]
    return np.linalg.lstsq(X, y, rcond=None)[0]
