"""Compiled inner loops for the empirical-likelihood dual problem.

Status codes returned by the solvers:

    0  converged, theta in support
    1  out of support, certified (sign test or separating direction)
    2  out of support, solver failure (max_iter or stalled line search)
    3  degenerate constraint span (gradient system singular)
"""

import numpy as np
from numba import njit

CONVERGED = 0
OUT_CERTIFIED = 1
OUT_FAILED = 2
DEGENERATE = 3

_T_FLOOR = 1e-10
_MAX_HALVINGS = 60


@njit(cache=True)
def _dual_value(H, lam):
    n = H.shape[0]
    val = 0.0
    tmin = np.inf
    for i in range(n):
        t = 1.0
        for k in range(H.shape[1]):
            t += lam[k] * H[i, k]
        if t < tmin:
            tmin = t
        if t > 0.0:
            val += np.log(t)
    return val, tmin


@njit(cache=True)
def _separates(H, v):
    # v'h_i > 0 for all i certifies that 0 is outside the convex hull
    n, K = H.shape
    for i in range(n):
        s = 0.0
        for k in range(K):
            s += v[k] * H[i, k]
        if not s > 0.0:
            return False
    return True


@njit(cache=True)
def _cholesky_solve(A, b):
    """Solve A x = b for SPD A; returns (x, ok)."""
    K = A.shape[0]
    L = np.zeros((K, K))
    for j in range(K):
        s = A[j, j]
        for m in range(j):
            s -= L[j, m] * L[j, m]
        if not s > 0.0:
            return np.zeros(K), False
        L[j, j] = np.sqrt(s)
        for i in range(j + 1, K):
            s2 = A[i, j]
            for m in range(j):
                s2 -= L[i, m] * L[j, m]
            L[i, j] = s2 / L[j, j]
    y = np.empty(K)
    for i in range(K):
        s = b[i]
        for m in range(i):
            s -= L[i, m] * y[m]
        y[i] = s / L[i, i]
    x = np.empty(K)
    for i in range(K - 1, -1, -1):
        s = y[i]
        for m in range(i + 1, K):
            s -= L[m, i] * x[m]
        x[i] = s / L[i, i]
    return x, True


@njit(cache=True)
def _polish(H, lam, A, g, dval):
    # one more Newton step from a converged point squares the error, which
    # keeps sum w_i = 1 and lambda itself accurate well below the tolerance;
    # kept only if it shrinks the gradient (the dual change is below rounding)
    delta, ok = _cholesky_solve(A, g)
    if not ok:
        return
    n, K = H.shape
    trial = lam + delta
    g0 = 0.0
    for k in range(K):
        g0 += g[k] * g[k]
    g1 = np.zeros(K)
    for i in range(n):
        t = 1.0
        for k in range(K):
            t += trial[k] * H[i, k]
        if t < _T_FLOOR:
            return
        for k in range(K):
            g1[k] += H[i, k] / t
    s1 = 0.0
    for k in range(K):
        s1 += g1[k] * g1[k]
    if s1 < g0:
        lam[:] = trial


@njit(cache=True)
def solve_dual(H, tol, max_iter):
    """Maximize sum_i log(1 + lam'h_i) by damped Newton.

    Returns (lam, status, iterations).
    """
    n, K = H.shape
    lam = np.zeros(K)

    hmax = 0.0
    allzero = True
    for i in range(n):
        s = 0.0
        for k in range(K):
            s += H[i, k] * H[i, k]
            if H[i, k] != 0.0:
                allzero = False
        if s > hmax:
            hmax = s
    hmax = np.sqrt(hmax)
    if allzero:
        return lam, CONVERGED, 0

    if K == 1:
        lo = np.inf
        hi = -np.inf
        for i in range(n):
            if H[i, 0] < lo:
                lo = H[i, 0]
            if H[i, 0] > hi:
                hi = H[i, 0]
        if not (lo < 0.0 < hi):
            return lam, OUT_CERTIFIED, 0

    gtol = tol * n * max(1.0, hmax)
    dval, _ = _dual_value(H, lam)
    g = np.empty(K)
    A = np.empty((K, K))
    trial = np.empty(K)
    for it in range(1, max_iter + 1):
        g[:] = 0.0
        A[:, :] = 0.0
        for i in range(n):
            t = 1.0
            for k in range(K):
                t += lam[k] * H[i, k]
            inv = 1.0 / t
            inv2 = inv * inv
            for k in range(K):
                g[k] += H[i, k] * inv
                for m in range(k + 1):
                    A[k, m] += H[i, k] * H[i, m] * inv2
        for k in range(K):
            for m in range(k):
                A[m, k] = A[k, m]
        gnorm = 0.0
        for k in range(K):
            gnorm += g[k] * g[k]
        gnorm = np.sqrt(gnorm)
        if gnorm <= gtol:
            _polish(H, lam, A, g, dval)
            return lam, CONVERGED, it - 1

        delta, ok = _cholesky_solve(A, g)
        if not ok:
            ridge = 1e-12 * (1.0 + np.trace(A))
            while not ok and ridge < 1e12:
                for k in range(K):
                    A[k, k] += ridge
                delta, ok = _cholesky_solve(A, g)
                ridge *= 10.0
            if not ok:
                return lam, OUT_FAILED, it
        if _separates(H, delta) or _separates(H, lam):
            return lam, OUT_CERTIFIED, it

        step = 1.0
        accepted = False
        for _ in range(_MAX_HALVINGS):
            for k in range(K):
                trial[k] = lam[k] + step * delta[k]
            tval, tmin = _dual_value(H, trial)
            # strict ascent only: a step that leaves the dual unchanged is a stall
            if tmin >= _T_FLOOR and tval > dval:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            # no ascent possible at machine precision: converged if the
            # gradient is already near the tolerance, otherwise give up
            if gnorm <= 1e3 * gtol:
                _polish(H, lam, A, g, dval)
                return lam, CONVERGED, it
            return lam, OUT_FAILED, it
        lam[:] = trial
        dval = tval
    return lam, OUT_FAILED, max_iter


@njit(cache=True)
def log_el_batch(Hb, tol, max_iter):
    """log EL for a stack of h-matrices (L, n, K); -inf where out of support."""
    L, n, _ = Hb.shape
    out = np.empty(L)
    status = np.empty(L, dtype=np.int64)
    for l in range(L):
        H = Hb[l]
        lam, st, _ = solve_dual(H, tol, max_iter)
        status[l] = st
        if st != CONVERGED:
            out[l] = -np.inf
            continue
        s = 0.0
        for i in range(n):
            t = 1.0
            for k in range(H.shape[1]):
                t += lam[k] * H[i, k]
            s += np.log(t)
        out[l] = -n * np.log(n) - s
    return out, status


@njit(cache=True)
def site_log_w_batch(Hb, groups, n_groups, tol, max_iter):
    """Per-group sums of log w_i for a stack of h-matrices.

    ``groups[i]`` assigns observation i to a group.  Returns an (L, n_groups)
    array with -inf rows where theta is out of support, and the status vector.
    """
    L, n, K = Hb.shape
    out = np.zeros((L, n_groups))
    status = np.empty(L, dtype=np.int64)
    logn = np.log(n)
    for l in range(L):
        H = Hb[l]
        lam, st, _ = solve_dual(H, tol, max_iter)
        status[l] = st
        if st != CONVERGED:
            for j in range(n_groups):
                out[l, j] = -np.inf
            continue
        for i in range(n):
            t = 1.0
            for k in range(K):
                t += lam[k] * H[i, k]
            out[l, groups[i]] += -logn - np.log(t)
    return out, status


@njit(cache=True)
def el_gradient_kernel(H, J, lam):
    """Implicit-function derivatives at a converged multiplier.

    H: (n, K) constraint values, J: (n, K, p) Jacobians, lam: (K,).
    Returns (dlam (K, p), grad_log_w (n, p), ok).
    """
    n, K = H.shape
    p = J.shape[2]
    t = np.empty(n)
    for i in range(n):
        s = 1.0
        for k in range(K):
            s += lam[k] * H[i, k]
        t[i] = s
    A = np.zeros((K, K))
    B = np.zeros((K, p))
    lamJ = np.zeros((n, p))
    for i in range(n):
        w = 1.0 / (n * t[i])
        for k in range(K):
            for m in range(K):
                A[k, m] += w * w * H[i, k] * H[i, m]
        for j in range(p):
            s = 0.0
            for k in range(K):
                s += lam[k] * J[i, k, j]
            lamJ[i, j] = s
        # sum_i w_i [I/n - w_i h_i lam'] J_i
        for k in range(K):
            for j in range(p):
                B[k, j] += w * (J[i, k, j] / n - w * H[i, k] * lamJ[i, j])
    dlam = np.zeros((K, p))
    col = np.empty(K)
    for j in range(p):
        for k in range(K):
            col[k] = B[k, j]
        x, ok = _cholesky_solve(A, col)
        if not ok:
            return dlam, np.zeros((n, p)), False
        for k in range(K):
            dlam[k, j] = x[k]
    glw = np.empty((n, p))
    for i in range(n):
        for j in range(p):
            s = 0.0
            for k in range(K):
                s += H[i, k] * dlam[k, j]
            glw[i, j] = -(s + lamJ[i, j]) / t[i]
    return dlam, glw, True
