"""Cross-match statistic from an optimal non-bipartite matching.

Two samples of equal size N are pooled and paired so that the total
Euclidean distance between partners is minimal.  The statistic counts pairs
whose members come from different samples; under the null hypothesis that
both samples share a distribution the count is large (about N/2).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import lgamma, log

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import pdist, squareform

from . import _blossom

PAPER_THRESHOLD = 474  # 0.05 null quantile at N = 1000
_INT_SCALE = float(2 ** 40)


@dataclass(frozen=True)
class CrossMatchResult:
    cross_count: int
    total_pairs: int
    threshold: int
    passed: bool
    matching: list = field(repr=False, default_factory=list)

    def to_dict(self) -> dict:
        return {"cross_count": self.cross_count, "total_pairs": self.total_pairs,
                "threshold": self.threshold, "pass": self.passed}


def _pairs_from_mate(mate: np.ndarray) -> np.ndarray:
    idx = np.flatnonzero(mate > np.arange(mate.size))
    return np.column_stack([idx, mate[idx]])


def _match_blossom(points: np.ndarray) -> np.ndarray:
    n = points.shape[0]
    D = squareform(pdist(points))
    dmax = D.max()
    if dmax == 0:
        return np.arange(n).reshape(-1, 2)
    Di = np.rint(D / dmax * _INT_SCALE).astype(np.int64)
    # positive weights on a complete graph force a perfect matching
    W = Di.max() + 1 - Di
    np.fill_diagonal(W, 0)
    mate = _blossom.max_weight_matching(W)
    if np.any(mate < 0):
        raise RuntimeError("blossom matching is not perfect")
    return _pairs_from_mate(mate)


def _match_pymatching(points: np.ndarray) -> np.ndarray:
    import pymatching

    n = points.shape[0]
    iu, ju = np.triu_indices(n, 1)
    m = iu.size
    d = np.sqrt(np.sum((points[iu] - points[ju]) ** 2, axis=1))
    cols = np.arange(m)
    H = sp.csc_matrix((np.ones(2 * m, dtype=np.uint8),
                       (np.concatenate([iu, ju]), np.concatenate([cols, cols]))),
                      shape=(n, m))
    matcher = pymatching.Matching.from_check_matrix(H, weights=d)
    pairs = np.asarray(matcher.decode_to_matched_dets_array(np.ones(n, dtype=np.uint8)))
    pairs = np.sort(pairs.astype(np.int64), axis=1)
    if pairs.shape != (n // 2, 2) or np.unique(pairs).size != n:
        raise RuntimeError("pymatching did not return a perfect matching")
    return pairs


def min_weight_perfect_matching(points, backend: str = "pymatching") -> np.ndarray:
    """Minimum-total-distance perfect matching of the rows of ``points``.

    Returns an (N, 2) array of index pairs sorted by first index.  ``backend``
    is "pymatching" (sparse blossom, fast) or "blossom" (dense O(n^3) Edmonds
    on integer-quantized distances).
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = pts.shape[0]
    if n % 2:
        raise ValueError(f"perfect matching needs an even number of points, got {n}")
    if n == 0:
        return np.empty((0, 2), dtype=np.int64)
    if n == 2:
        return np.array([[0, 1]])
    if backend == "pymatching":
        pairs = _match_pymatching(pts)
    elif backend == "blossom":
        pairs = _match_blossom(pts)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    return pairs[np.argsort(pairs[:, 0])]


def matching_weight(points, pairs) -> float:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    pairs = np.asarray(pairs)
    return float(np.linalg.norm(pts[pairs[:, 0]] - pts[pairs[:, 1]], axis=1).sum())


def brute_force_matching(points):
    """Exhaustive minimum perfect matching; only for tiny inputs."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = pts.shape[0]
    D = squareform(pdist(pts))

    def rec(rest):
        if not rest:
            return 0.0, []
        a = rest[0]
        best = (np.inf, None)
        for j in range(1, len(rest)):
            b = rest[j]
            w, pr = rec(rest[1:j] + rest[j + 1:])
            if D[a, b] + w < best[0]:
                best = (D[a, b] + w, [(a, b)] + pr)
        return best

    w, pairs = rec(list(range(n)))
    return w, np.array(pairs, dtype=np.int64).reshape(-1, 2)


def count_perfect_matchings(n: int) -> int:
    """(n-1)!! for even n."""
    return int(np.prod(np.arange(n - 1, 0, -2))) if n > 0 else 1


def exact_null_pmf(N: int) -> dict[int, float]:
    """Exact null distribution of the cross-match count for N + N points.

    With a1 cross pairs, a2 pairs inside the first sample and a0 inside the
    second, P(a1) = 2^a1 N! / (C(2N, N) a0! a1! a2!).
    """
    out = {}
    log_binom = lgamma(2 * N + 1) - 2 * lgamma(N + 1)
    for a1 in range(N % 2, N + 1, 2):
        a2 = (N - a1) // 2
        lp = a1 * log(2) + lgamma(N + 1) - log_binom - lgamma(a2 + 1) * 2 - lgamma(a1 + 1)
        out[a1] = float(np.exp(lp))
    return out


def exact_null_quantile(N: int, q: float) -> int:
    c = 0.0
    for a1, pr in sorted(exact_null_pmf(N).items()):
        c += pr
        if c >= q - 1e-15:
            return a1
    return N


def simulate_null_counts(N: int, reps: int, rng: np.random.Generator,
                         batch: int = 2000) -> np.ndarray:
    """Cross counts under random labelling of N fixed pairs (N labels of each kind)."""
    counts = np.empty(reps, dtype=np.int64)
    done = 0
    while done < reps:
        b = min(batch, reps - done)
        keys = rng.random((b, 2 * N))
        # lowest N keys get label 1: a uniformly random balanced labelling
        labels = np.zeros((b, 2 * N), dtype=np.int8)
        idx = np.argpartition(keys, N - 1, axis=1)[:, :N]
        np.put_along_axis(labels, idx, 1, axis=1)
        # pairs are (0,1), (2,3), ... since the matching ignores labels
        counts[done:done + b] = np.sum(labels[:, 0::2] != labels[:, 1::2], axis=1)
        done += b
    return counts


def null_quantile(N: int, q: float = 0.05, reps: int = 100_000,
                  rng: np.random.Generator | None = None) -> int:
    """Monte Carlo lower q-quantile of the null cross-match count."""
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    if reps < 1000:
        raise ValueError("reps must be at least 1000")
    rng = np.random.default_rng() if rng is None else rng
    counts = simulate_null_counts(N, reps, rng)
    return int(np.quantile(counts, q, method="inverted_cdf"))


def threshold_for(N: int, q: float = 0.05) -> int:
    """Null threshold; the published value at N = 1000, else the exact quantile."""
    if N == 1000 and q == 0.05:
        return PAPER_THRESHOLD
    return exact_null_quantile(N, q)


def cross_match(a, b, threshold: int | None = None, q: float = 0.05,
                backend: str = "pymatching", standardize: bool = False) -> CrossMatchResult:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a = a[:, None] if a.ndim == 1 else a
    b = b[:, None] if b.ndim == 1 else b
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"samples must have equal counts, got {a.shape[0]} and {b.shape[0]}")
    if a.shape[1] != b.shape[1]:
        raise ValueError("samples must have equal dimension")
    N = a.shape[0]
    pooled = np.vstack([a, b])
    if standardize:
        sd = pooled.std(axis=0, ddof=1)
        pooled = (pooled - pooled.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    pairs = min_weight_perfect_matching(pooled, backend)
    src = np.arange(2 * N) >= N
    cross = int(np.sum(src[pairs[:, 0]] != src[pairs[:, 1]]))
    thr = threshold_for(N, q) if threshold is None else int(threshold)
    return CrossMatchResult(cross, N, thr, cross >= thr, [tuple(map(int, p)) for p in pairs])


def all_matchings(n: int):
    """Every perfect matching of range(n), as lists of pairs."""
    def rec(rest):
        if not rest:
            yield []
            return
        a = rest[0]
        for j in range(1, len(rest)):
            for m in rec(rest[1:j] + rest[j + 1:]):
                yield [(a, rest[j])] + m
    yield from rec(list(range(n)))


__all__ = [
    "CrossMatchResult", "min_weight_perfect_matching", "cross_match", "null_quantile",
    "exact_null_pmf", "exact_null_quantile", "simulate_null_counts", "brute_force_matching",
    "matching_weight", "all_matchings", "count_perfect_matchings", "threshold_for",
]
