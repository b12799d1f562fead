"""Null distribution of the cross-match count: Monte Carlo quantile vs the exact pmf.

    python3 scripts/null_threshold.py --N 1000 --reps 100000
"""

import argparse

import numpy as np

from epel import nbp


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", type=int, default=1000)
    ap.add_argument("--q", type=float, default=0.05)
    ap.add_argument("--reps", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--self-match", type=int, default=0,
                    help="also cross-match this many pairs of same-distribution samples")
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    counts = nbp.simulate_null_counts(args.N, args.reps, rng)
    mc = int(np.quantile(counts, args.q, method="inverted_cdf"))
    exact = nbp.exact_null_quantile(args.N, args.q)
    print(f"N={args.N} q={args.q}: Monte Carlo quantile {mc}, exact {exact}, "
          f"mean {counts.mean():.2f} (theory {args.N ** 2 / (2 * args.N - 1):.2f})")
    passes = 0
    for k in range(args.self_match):
        a = rng.standard_normal((args.N, 2))
        b = rng.standard_normal((args.N, 2))
        res = nbp.cross_match(a, b, threshold=mc)
        passes += res.passed
        print(f"  self-match {k}: {res.cross_count}")
    if args.self_match:
        print(f"{passes}/{args.self_match} self-matches at or above {mc}")


if __name__ == "__main__":
    main()
