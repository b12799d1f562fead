"""Relative gap between the EPEL and Laplace precision matrices on linreg2 as n grows.

The gap should shrink with n since both approximations approach the same
normal limit.  Prints the median over seeds and the log-log slope.

    python3 scripts/precision_gap.py --seeds 10
"""

import argparse
import time

import numpy as np

from epel import ep, models, posterior


def gap(n, seed, cfg, average):
    t = posterior.Target(models.linreg_model(2), models.generate("linreg2", seed, n))
    lap = posterior.map_newton(t)
    _, trace = ep.run(t, ep.EpConfig(**cfg), seed=seed, lap=lap)
    Q = trace.averaged(average).Q
    return np.linalg.norm(Q - lap.approx.Q) / np.linalg.norm(lap.approx.Q)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ns", type=int, nargs="+", default=[50, 100, 200, 400])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--alpha", type=float, default=0.5)
    ap.add_argument("--is-samples", type=int, default=2000)
    ap.add_argument("--cycles", type=int, default=40)
    ap.add_argument("--average", type=int, default=8)
    args = ap.parse_args()
    cfg = dict(alpha=args.alpha, is_samples=args.is_samples, warmup_cycles=50,
               max_cycles=args.cycles)
    med = []
    for n in args.ns:
        t0 = time.perf_counter()
        vals = [gap(n, s, cfg, args.average) for s in range(args.seeds)]
        med.append(float(np.median(vals)))
        print(f"n={n:4d}  median {med[-1]:.4f}  values {np.round(vals, 3)}  "
              f"({time.perf_counter() - t0:.0f}s)", flush=True)
    slope = np.polyfit(np.log(args.ns), np.log(med), 1)[0]
    print(f"log-log slope {slope:.3f}")


if __name__ == "__main__":
    main()
