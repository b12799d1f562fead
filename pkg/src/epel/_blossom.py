"""Maximum-weight general matching, O(n^3) primal-dual blossom algorithm.

Array-based Edmonds/Gabow formulation on a dense integer weight matrix,
compiled with numba.  Vertices are 1-based internally; index 0 means "none".
Blossoms take the indices after the vertices.  Edge weights must be positive
integers (zero means "no edge"); on a complete graph with positive weights
the maximum-weight matching is perfect, which is how the minimum-distance
perfect matching is obtained.
"""

import numpy as np
from numba import njit

_INF = np.int64(1) << 62


@njit(cache=True, inline="always")
def _dist(gu, gv, gw, lab, a, b):
    return lab[gu[a, b]] + lab[gv[a, b]] - gw[a, b] * 2


@njit(cache=True)
def _q_push(x, n, flower, flen, queue, qstate, stack):
    # push every vertex contained in (possibly nested) blossom x
    top = 0
    stack[top] = x
    top += 1
    while top > 0:
        top -= 1
        y = stack[top]
        if y <= n:
            queue[qstate[1] % queue.size] = y
            qstate[1] += 1
            if qstate[1] - qstate[0] > queue.size:
                raise RuntimeError("blossom queue overflow")
        else:
            for i in range(flen[y] - 1, -1, -1):
                stack[top] = flower[y, i]
                top += 1


@njit(cache=True)
def _set_st(x, b, n, st, flower, flen, stack):
    top = 0
    stack[top] = x
    top += 1
    while top > 0:
        top -= 1
        y = stack[top]
        st[y] = b
        if y > n:
            for i in range(flen[y]):
                stack[top] = flower[y, i]
                top += 1


@njit(cache=True)
def _update_slack(u, x, gu, gv, gw, lab, slack):
    if slack[x] == 0 or _dist(gu, gv, gw, lab, u, x) < _dist(gu, gv, gw, lab, slack[x], x):
        slack[x] = u


@njit(cache=True)
def _set_slack(x, n, gu, gv, gw, lab, slack, st, S):
    slack[x] = 0
    for u in range(1, n + 1):
        if gw[u, x] > 0 and st[u] != x and S[st[u]] == 0:
            _update_slack(u, x, gu, gv, gw, lab, slack)


@njit(cache=True)
def _get_pr(b, xr, flower, flen):
    m = flen[b]
    pr = 0
    while flower[b, pr] != xr:
        pr += 1
    if pr % 2 == 1:
        # reverse flower[b][1:]
        i = 1
        j = m - 1
        while i < j:
            tmp = flower[b, i]
            flower[b, i] = flower[b, j]
            flower[b, j] = tmp
            i += 1
            j -= 1
        return m - pr
    return pr


@njit(cache=True)
def _set_match(u0, v0, n, gu, gv, match, flower, flen, flower_from, pairstack, tmp):
    top = 0
    pairstack[top, 0] = u0
    pairstack[top, 1] = v0
    top += 1
    while top > 0:
        top -= 1
        u = pairstack[top, 0]
        v = pairstack[top, 1]
        match[u] = gv[u, v]
        if u <= n:
            continue
        xr = flower_from[u, gu[u, v]]
        pr = _get_pr(u, xr, flower, flen)
        for i in range(pr):
            pairstack[top, 0] = flower[u, i]
            pairstack[top, 1] = flower[u, i ^ 1]
            top += 1
        pairstack[top, 0] = xr
        pairstack[top, 1] = v
        top += 1
        # rotate flower[u] left by pr
        m = flen[u]
        for i in range(m):
            tmp[i] = flower[u, (i + pr) % m]
        for i in range(m):
            flower[u, i] = tmp[i]


@njit(cache=True)
def _augment(u, v, n, gu, gv, match, st, pa, flower, flen, flower_from, pairstack, tmp):
    while True:
        xnv = st[match[u]]
        _set_match(u, v, n, gu, gv, match, flower, flen, flower_from, pairstack, tmp)
        if xnv == 0:
            return
        _set_match(xnv, st[pa[xnv]], n, gu, gv, match, flower, flen, flower_from, pairstack, tmp)
        u = st[pa[xnv]]
        v = xnv


@njit(cache=True)
def _get_lca(u, v, st, match, pa, vis, tick):
    tick[0] += 1
    t = tick[0]
    while u != 0 or v != 0:
        if u != 0:
            if vis[u] == t:
                return u
            vis[u] = t
            u = st[match[u]]
            if u != 0:
                u = st[pa[u]]
        tmp = u
        u = v
        v = tmp
    return 0


@njit(cache=True)
def _add_blossom(u, lca, v, n, nx, gu, gv, gw, lab, match, slack, st, pa, S,
                 flower, flen, flower_from, queue, qstate, stack):
    b = n + 1
    while b <= nx[0] and st[b] != 0:
        b += 1
    if b > nx[0]:
        nx[0] += 1
    lab[b] = 0
    S[b] = 0
    match[b] = match[lca]
    flen[b] = 0
    flower[b, flen[b]] = lca
    flen[b] += 1
    x = u
    while x != lca:
        flower[b, flen[b]] = x
        flen[b] += 1
        y = st[match[x]]
        flower[b, flen[b]] = y
        flen[b] += 1
        _q_push(y, n, flower, flen, queue, qstate, stack)
        x = st[pa[y]]
    i = 1
    j = flen[b] - 1
    while i < j:
        tmp = flower[b, i]
        flower[b, i] = flower[b, j]
        flower[b, j] = tmp
        i += 1
        j -= 1
    x = v
    while x != lca:
        flower[b, flen[b]] = x
        flen[b] += 1
        y = st[match[x]]
        flower[b, flen[b]] = y
        flen[b] += 1
        _q_push(y, n, flower, flen, queue, qstate, stack)
        x = st[pa[y]]
    _set_st(b, b, n, st, flower, flen, stack)
    for x in range(1, nx[0] + 1):
        gw[b, x] = 0
        gw[x, b] = 0
    for x in range(1, n + 1):
        flower_from[b, x] = 0
    for i in range(flen[b]):
        xs = flower[b, i]
        for x in range(1, nx[0] + 1):
            if gw[b, x] == 0 or _dist(gu, gv, gw, lab, xs, x) < _dist(gu, gv, gw, lab, b, x):
                gu[b, x] = gu[xs, x]
                gv[b, x] = gv[xs, x]
                gw[b, x] = gw[xs, x]
                gu[x, b] = gu[x, xs]
                gv[x, b] = gv[x, xs]
                gw[x, b] = gw[x, xs]
        for x in range(1, n + 1):
            if flower_from[xs, x] != 0:
                flower_from[b, x] = xs
    _set_slack(b, n, gu, gv, gw, lab, slack, st, S)


@njit(cache=True)
def _expand_blossom(b, n, gu, gv, gw, lab, slack, st, pa, S, flower, flen, flower_from,
                    queue, qstate, stack):
    for i in range(flen[b]):
        _set_st(flower[b, i], flower[b, i], n, st, flower, flen, stack)
    xr = flower_from[b, gu[b, pa[b]]]
    pr = _get_pr(b, xr, flower, flen)
    for i in range(0, pr, 2):
        xs = flower[b, i]
        xns = flower[b, i + 1]
        pa[xs] = gu[xns, xs]
        S[xs] = 1
        S[xns] = 0
        slack[xs] = 0
        _set_slack(xns, n, gu, gv, gw, lab, slack, st, S)
        _q_push(xns, n, flower, flen, queue, qstate, stack)
    S[xr] = 1
    pa[xr] = pa[b]
    for i in range(pr + 1, flen[b]):
        xs = flower[b, i]
        S[xs] = -1
        _set_slack(xs, n, gu, gv, gw, lab, slack, st, S)
    st[b] = 0


@njit(cache=True)
def _on_found_edge(eu, ev, n, nx, gu, gv, gw, lab, match, slack, st, pa, S, vis, tick,
                   flower, flen, flower_from, queue, qstate, stack, pairstack, tmp):
    u = st[eu]
    v = st[ev]
    if S[v] == -1:
        pa[v] = eu
        S[v] = 1
        nu = st[match[v]]
        slack[v] = 0
        slack[nu] = 0
        S[nu] = 0
        _q_push(nu, n, flower, flen, queue, qstate, stack)
    elif S[v] == 0:
        lca = _get_lca(u, v, st, match, pa, vis, tick)
        if lca == 0:
            _augment(u, v, n, gu, gv, match, st, pa, flower, flen, flower_from, pairstack, tmp)
            _augment(v, u, n, gu, gv, match, st, pa, flower, flen, flower_from, pairstack, tmp)
            return True
        _add_blossom(u, lca, v, n, nx, gu, gv, gw, lab, match, slack, st, pa, S,
                     flower, flen, flower_from, queue, qstate, stack)
    return False


@njit(cache=True)
def _phase(n, nx, gu, gv, gw, lab, match, slack, st, pa, S, vis, tick,
           flower, flen, flower_from, queue, qstate, stack, pairstack, tmp):
    for x in range(1, nx[0] + 1):
        S[x] = -1
        slack[x] = 0
    qstate[0] = 0
    qstate[1] = 0
    for x in range(1, nx[0] + 1):
        if st[x] == x and match[x] == 0:
            pa[x] = 0
            S[x] = 0
            _q_push(x, n, flower, flen, queue, qstate, stack)
    if qstate[1] == qstate[0]:
        return False
    while True:
        while qstate[0] < qstate[1]:
            u = queue[qstate[0] % queue.size]
            qstate[0] += 1
            if S[st[u]] == 1:
                continue
            for v in range(1, n + 1):
                if gw[u, v] > 0 and st[u] != st[v]:
                    if _dist(gu, gv, gw, lab, u, v) == 0:
                        if _on_found_edge(gu[u, v], gv[u, v], n, nx, gu, gv, gw, lab, match, slack,
                                          st, pa, S, vis, tick, flower, flen, flower_from,
                                          queue, qstate, stack, pairstack, tmp):
                            return True
                    else:
                        _update_slack(u, st[v], gu, gv, gw, lab, slack)
        d = _INF
        for b in range(n + 1, nx[0] + 1):
            if st[b] == b and S[b] == 1:
                d = min(d, lab[b] // 2)
        for x in range(1, nx[0] + 1):
            if st[x] == x and slack[x] != 0:
                if S[x] == -1:
                    d = min(d, _dist(gu, gv, gw, lab, slack[x], x))
                elif S[x] == 0:
                    d = min(d, _dist(gu, gv, gw, lab, slack[x], x) // 2)
        for u in range(1, n + 1):
            if S[st[u]] == 0:
                if lab[u] <= d:
                    return False
                lab[u] -= d
            elif S[st[u]] == 1:
                lab[u] += d
        for b in range(n + 1, nx[0] + 1):
            if st[b] == b:
                if S[st[b]] == 0:
                    lab[b] += d * 2
                elif S[st[b]] == 1:
                    lab[b] -= d * 2
        qstate[0] = 0
        qstate[1] = 0
        for x in range(1, nx[0] + 1):
            if st[x] == x and slack[x] != 0 and st[slack[x]] != x \
                    and _dist(gu, gv, gw, lab, slack[x], x) == 0:
                if _on_found_edge(gu[slack[x], x], gv[slack[x], x], n, nx, gu, gv, gw, lab, match,
                                  slack, st, pa, S, vis, tick, flower, flen, flower_from,
                                  queue, qstate, stack, pairstack, tmp):
                    return True
        for b in range(n + 1, nx[0] + 1):
            if st[b] == b and S[b] == 1 and lab[b] == 0:
                _expand_blossom(b, n, gu, gv, gw, lab, slack, st, pa, S, flower, flen,
                                flower_from, queue, qstate, stack)


@njit(cache=True)
def max_weight_matching(W):
    """Maximum-weight matching for a symmetric int64 weight matrix (0-based).

    Returns mate (mate[i] = partner of i or -1).
    """
    n = W.shape[0]
    nm = n + n // 2 + 2
    gu = np.zeros((nm, nm), dtype=np.int32)
    gv = np.zeros((nm, nm), dtype=np.int32)
    gw = np.zeros((nm, nm), dtype=np.int64)
    w_max = np.int64(0)
    for u in range(1, n + 1):
        for v in range(1, n + 1):
            gu[u, v] = u
            gv[u, v] = v
            if u != v:
                gw[u, v] = W[u - 1, v - 1]
                if gw[u, v] > w_max:
                    w_max = gw[u, v]
    lab = np.zeros(nm, dtype=np.int64)
    match = np.zeros(nm, dtype=np.int64)
    slack = np.zeros(nm, dtype=np.int64)
    st = np.zeros(nm, dtype=np.int64)
    pa = np.zeros(nm, dtype=np.int64)
    S = np.zeros(nm, dtype=np.int64)
    vis = np.zeros(nm, dtype=np.int64)
    tick = np.zeros(1, dtype=np.int64)
    nx = np.zeros(1, dtype=np.int64)
    flower = np.zeros((nm, n + 1), dtype=np.int64)
    flen = np.zeros(nm, dtype=np.int64)
    flower_from = np.zeros((nm, n + 1), dtype=np.int64)
    queue = np.zeros(8 * nm + 16, dtype=np.int64)
    qstate = np.zeros(2, dtype=np.int64)
    stack = np.zeros(2 * nm + 16, dtype=np.int64)
    pairstack = np.zeros((2 * nm + 16, 2), dtype=np.int64)
    tmp = np.zeros(n + 1, dtype=np.int64)

    nx[0] = n
    for u in range(n + 1):
        st[u] = u
    for u in range(1, n + 1):
        flower_from[u, u] = u
        lab[u] = w_max
    while _phase(n, nx, gu, gv, gw, lab, match, slack, st, pa, S, vis, tick,
                 flower, flen, flower_from, queue, qstate, stack, pairstack, tmp):
        pass
    mate = np.full(n, -1, dtype=np.int64)
    for u in range(1, n + 1):
        if match[u] != 0:
            mate[u - 1] = match[u] - 1
    return mate
