"""Profile empirical likelihood at a single parameter value.

The Lagrange multiplier is found by maximizing the concave dual
``D(lam) = sum_i log(1 + lam'h_i)``; the weights are then
``w_i = 1 / (n (1 + lam'h_i))`` and ``log EL = sum_i log w_i``.  Derivatives
with respect to theta come from the implicit function theorem applied to the
first-order condition ``sum_i h_i / (1 + lam'h_i) = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _elkernels as K_

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 100

# number of inner EL solves so far; a deterministic work clock for the harness
_solves = [0]


def solve_count() -> int:
    return _solves[0]


def add_solves(k: int) -> None:
    _solves[0] += int(k)


class ELInputError(ValueError):
    """Non-finite constraint values."""


class DegenerateSpanError(RuntimeError):
    """The constraint vectors do not span R^K; d lambda / d theta is undefined."""


class SupportBoundaryError(RuntimeError):
    """A finite-difference probe left the support of the empirical likelihood."""


class OutOfSupportError(RuntimeError):
    pass


_STATUS_TEXT = {
    K_.CONVERGED: "converged",
    K_.OUT_CERTIFIED: "out of support (certified)",
    K_.OUT_FAILED: "out of support (solver did not converge)",
}


@dataclass(frozen=True, eq=False)
class ELEvaluation:
    lam: np.ndarray
    weights: np.ndarray
    log_el: float
    in_support: bool
    iterations: int
    status: str = "converged"
    h_matrix: np.ndarray | None = field(default=None, repr=False)


@dataclass(frozen=True, eq=False)
class ELGradient:
    dlambda_dtheta: np.ndarray
    grad_log_w: np.ndarray
    grad_log_el: np.ndarray


def _as_h(h_matrix) -> np.ndarray:
    H = np.ascontiguousarray(np.asarray(h_matrix, dtype=float))
    if H.ndim == 1:
        H = H[:, None]
    if H.ndim != 2 or H.shape[0] < 1 or H.shape[1] < 1:
        raise ValueError(f"h_matrix must be (n, K) with n, K >= 1; got {H.shape}")
    if not np.all(np.isfinite(H)):
        raise ELInputError("h_matrix contains NaN or Inf")
    return H


def solve_lambda(h_matrix, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> ELEvaluation:
    """Solve the EL inner problem for an (n, K) matrix of constraint values."""
    H = _as_h(h_matrix)
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = H.shape[0]
    _solves[0] += 1
    lam, status, iters = K_.solve_dual(H, float(tol), int(max_iter))
    if status != K_.CONVERGED:
        return ELEvaluation(lam, np.empty(0), -np.inf, False, int(iters),
                            _STATUS_TEXT[status], H)
    t = 1.0 + H @ lam
    w = 1.0 / (n * t)
    log_el = float(-n * np.log(n) - np.sum(np.log(t)))
    return ELEvaluation(lam, w, log_el, True, int(iters), "converged", H)


def eval_el(model, data, theta, tol: float = DEFAULT_TOL,
            max_iter: int = DEFAULT_MAX_ITER) -> ELEvaluation:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (model.p,):
        raise ValueError(f"theta must have length {model.p}")
    return solve_lambda(model.h(data.observations, theta), tol, max_iter)


def log_el_batch(model, data, thetas, tol: float = DEFAULT_TOL,
                 max_iter: int = DEFAULT_MAX_ITER) -> np.ndarray:
    """log EL at each row of ``thetas``; -inf outside the support."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    Hb = np.ascontiguousarray(model.h_batch(data.observations, thetas))
    _solves[0] += Hb.shape[0]
    out, _ = K_.log_el_batch(Hb, float(tol), int(max_iter))
    return out


def gradient_from_h(H: np.ndarray, J: np.ndarray, lam: np.ndarray) -> ELGradient:
    """Derivatives given the constraint values, their Jacobians and the multiplier."""
    dlam, glw, ok = K_.el_gradient_kernel(np.ascontiguousarray(H), np.ascontiguousarray(J),
                                          np.ascontiguousarray(lam))
    if not ok:
        raise DegenerateSpanError("degenerate constraint span: sum w_i^2 h_i h_i' is singular")
    return ELGradient(dlam, glw, glw.sum(axis=0))


def el_gradient(model, data, theta, ev: ELEvaluation | None = None) -> ELGradient:
    theta = np.asarray(theta, dtype=float)
    if ev is None:
        ev = eval_el(model, data, theta)
    if not ev.in_support:
        raise OutOfSupportError("theta is outside the support of the empirical likelihood")
    H = ev.h_matrix if ev.h_matrix is not None else model.h(data.observations, theta)
    J = model.jac_h(data.observations, theta)
    return gradient_from_h(H, J, ev.lam)


def fd_steps(theta, step=None) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if step is None:
        return np.cbrt(np.finfo(float).eps) * (1.0 + np.abs(theta))
    return np.broadcast_to(np.asarray(step, dtype=float), theta.shape).copy()


def hessian_fd(grad_fn, theta, step=None) -> np.ndarray:
    """Symmetrized central differences of a gradient function.

    ``grad_fn`` returns None when its argument is outside the support.
    """
    theta = np.asarray(theta, dtype=float)
    steps = fd_steps(theta, step)
    p = theta.size
    Hs = np.empty((p, p))
    for j in range(p):
        e = np.zeros(p)
        e[j] = steps[j]
        gp = grad_fn(theta + e)
        gm = grad_fn(theta - e)
        if gp is None or gm is None:
            raise SupportBoundaryError("support boundary too close for finite differences")
        Hs[:, j] = (gp - gm) / (2.0 * steps[j])
    return 0.5 * (Hs + Hs.T)


def el_hessian_fd(model, data, theta, step=None) -> np.ndarray:
    """Hessian of log EL by central differences of the analytic gradient."""

    def grad(th):
        ev = eval_el(model, data, th)
        if not ev.in_support:
            return None
        return el_gradient(model, data, th, ev).grad_log_el

    return hessian_fd(grad, theta, step)
