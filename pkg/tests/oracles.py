"""Independent reference computations used by the tests."""

import itertools

import numpy as np
from scipy import linalg, optimize


def _feasible_interval(a, b, c):
    """{z : a*z + b >= 0 componentwise} as (lo, hi), intersected with c."""
    lo, hi = c
    for ai, bi in zip(a, b):
        if abs(ai) < 1e-15:
            if bi < -1e-14:
                return None
            continue
        root = -bi / ai
        if ai > 0:
            lo = max(lo, root)
        else:
            hi = min(hi, root)
    return (lo, hi) if lo <= hi else None


def _max_scalar(f, lo, hi):
    if hi - lo < 1e-15:
        return f(0.5 * (lo + hi))
    res = optimize.minimize_scalar(lambda z: -f(z), bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-13, "maxiter": 2000})
    return max(-res.fun, f(lo), f(hi))


def _safe_log_sum(w):
    if np.any(w <= 0):
        return -np.inf
    return float(np.sum(np.log(w)))


def simplex_log_el(h):
    """max sum log w_i over the simplex with sum w_i h_i = 0, K = 1, n <= 4.

    The feasible set is parameterized as w = w0 + N z with N a null-space
    basis of [1; h]; the concave objective is maximized by nested bounded
    scalar searches over z.
    """
    h = np.asarray(h, dtype=float).ravel()
    n = h.size
    A = np.vstack([np.ones(n), h])
    w0 = linalg.lstsq(A, np.array([1.0, 0.0]))[0]
    N = linalg.null_space(A)
    d = N.shape[1]
    if d == 0:
        return _safe_log_sum(w0)
    if d == 1:
        iv = _feasible_interval(N[:, 0], w0, (-np.inf, np.inf))
        if iv is None:
            return -np.inf
        return _max_scalar(lambda z: _safe_log_sum(w0 + N[:, 0] * z), *iv)
    if d == 2:
        # outer range: extreme z1 over the polygon's vertices
        verts = []
        for i, j in itertools.combinations(range(n), 2):
            M = N[[i, j]]
            if abs(np.linalg.det(M)) < 1e-14:
                continue
            z = np.linalg.solve(M, -w0[[i, j]])
            if np.all(w0 + N @ z >= -1e-12):
                verts.append(z)
        if not verts:
            return -np.inf
        z1s = [v[0] for v in verts]

        def inner(z1):
            iv = _feasible_interval(N[:, 1], w0 + N[:, 0] * z1, (-np.inf, np.inf))
            if iv is None:
                return -np.inf
            return _max_scalar(lambda z2: _safe_log_sum(w0 + N[:, 0] * z1 + N[:, 1] * z2), *iv)

        return _max_scalar(inner, min(z1s), max(z1s))
    raise ValueError("oracle handles n <= 4 only")


def bisection_lambda(h):
    """K = 1 multiplier by bracketing the root of sum h_i / (1 + lam h_i)."""
    h = np.asarray(h, dtype=float).ravel()
    lo = -1.0 / h.max() * (1 - 1e-15)
    hi = -1.0 / h.min() * (1 - 1e-15)
    f = lambda lam: np.sum(h / (1 + lam * h))
    return optimize.brentq(f, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500)


def central_fd(f, x, step):
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step[j] if np.ndim(step) else step
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * e[j]))
    return np.stack(cols, axis=-1)


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))
