"""Run a cost-accuracy experiment from a spec file and draw its chart.

    python3 scripts/run_experiment.py scripts/specs/linreg2.json --out results/linreg2
    python3 scripts/run_experiment.py scripts/specs/smoke.json --out results/smoke
"""

import argparse
import json
import logging
import time
from pathlib import Path

from epel import harness


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("spec")
    ap.add_argument("--out", required=True)
    ap.add_argument("--reps", type=int, default=None, help="override the number of reps")
    ap.add_argument("--paper-scale", action="store_true")
    ap.add_argument("--gold-control", action="store_true",
                    help="also cross-match two disjoint gold subsamples")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    d = json.loads(Path(args.spec).read_text())
    if args.reps is not None:
        d["reps"] = args.reps
    spec = harness.ExperimentSpec.from_dict(d)
    if args.paper_scale:
        spec = spec.paper_scale()

    t0 = time.perf_counter()

    def progress(rep, rows):
        logging.info("rep %d finished after %.0fs", rep, time.perf_counter() - t0)

    rows = harness.run_experiment(spec, progress=progress)
    out = harness.write_outputs(spec, rows, args.out)
    summary = harness.summarize(rows)
    (out / f"{spec.name}.svg").write_text(harness.svg_plot(summary, title=spec.name))
    for s in summary:
        print(f"{s['method']:8s} {s['checkpoint']:>8g}  median {s['median']:6.1f}  "
              f"IQR [{s['q25']:.1f}, {s['q75']:.1f}]  n={s['count']}")
    if args.gold_control:
        res = harness.gold_control(spec, 0)
        print(f"gold control: {res.cross_count} cross pairs (threshold {res.threshold})")
    print(f"wrote {out} in {time.perf_counter() - t0:.0f}s")


if __name__ == "__main__":
    main()
