"""Command line entry point: ``epel {fit,gold,nbp,experiment,plot}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import ep, gaussian, harness, nbp, posterior, samplers, vb


def _load_config(path):
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def _pick(cls, d):
    names = set(cls.__dataclass_fields__)
    unknown = set(d) - names
    if unknown:
        raise SystemExit(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**d)


def cmd_fit(args):
    t = harness.build_target(args.experiment, args.n, args.data_seed)
    conf = _load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{args.experiment}_{args.method}_{args.seed}"
    if args.method == "laplace":
        lap = posterior.map_newton(t)
        (out / f"{stem}.json").write_text(json.dumps({"approx": lap.approx.to_dict(),
                                                      **lap.to_dict()}, indent=1))
    elif args.method == "epel":
        cfg = _pick(ep.EpConfig, {"num_sites": harness.EP_SITES.get(args.experiment, 6), **conf})
        if not t.smooth:
            cfg.tilted = "is"
        g, trace = ep.run(t, cfg, seed=args.seed)
        (out / f"{stem}.json").write_text(json.dumps({"approx": g.to_dict(),
                                                      "converged": trace.converged,
                                                      "cycles": len(trace)}, indent=1))
        (out / f"{stem}_trace.jsonl").write_text(trace.to_jsonl())
    elif args.method == "vb":
        cfg = _pick(vb.VbConfig, {**conf, "seed": args.seed})
        g, trace = vb.vb_run(t, cfg)
        (out / f"{stem}.json").write_text(json.dumps({"approx": g.to_dict()}, indent=1))
        (out / f"{stem}_trace.jsonl").write_text("".join(json.dumps(r) + "\n" for r in trace))
    else:
        cfg = _pick(samplers.ChainConfig, {"shrinkage": harness.MH_SHRINKAGE.get(args.experiment, 0.7),
                                           **conf, "seed": args.seed})
        run = samplers.mh_run if args.method == "mh" else samplers.hmc_run
        run(t, cfg).save(out / f"{stem}.csv")
    print(out / stem)


def cmd_gold(args):
    t = harness.build_target(args.experiment, args.n, args.data_seed)
    cfg = samplers.ChainConfig(draws=args.draws, seed=args.seed,
                               shrinkage=harness.MH_SHRINKAGE.get(args.experiment, 0.7))
    chain = samplers.mh_run(t, cfg) if args.method == "mh" else samplers.hmc_run(t, cfg)
    chain.save(args.out)
    print(json.dumps(chain.sidecar()))


def cmd_nbp(args):
    a = samplers.SampleMatrix.load(args.a).draws
    b = samplers.SampleMatrix.load(args.b).draws
    if args.max_pool and a.shape[0] > args.max_pool:
        a, b = a[:args.max_pool], b[:args.max_pool]
    N = a.shape[0]
    thr = None
    if args.reps is not None:
        thr = nbp.null_quantile(N, args.quantile, args.reps, np.random.default_rng(args.seed))
    res = nbp.cross_match(a, b, threshold=thr, q=args.quantile, backend=args.backend,
                          standardize=args.standardize)
    print(json.dumps(res.to_dict()))


def cmd_experiment(args):
    spec = harness.ExperimentSpec.from_dict(json.loads(Path(args.spec).read_text()))
    if args.paper_scale:
        spec = spec.paper_scale()

    def progress(rep, rows):
        ok = [r for r in rows if r.status == "ok"]
        logging.info("rep %d done: %d scored rows", rep, len(ok))

    rows = harness.run_experiment(spec, workers=args.workers, progress=progress)
    out = harness.write_outputs(spec, rows, args.out)
    print(out)


def cmd_plot(args):
    src = Path(getattr(args, "in"))
    files = sorted(src.glob("*_summary.csv")) if src.is_dir() else [src]
    if not files:
        raise SystemExit(f"no summary CSV in {src}")
    import csv
    summary = []
    with open(files[0]) as fh:
        for d in csv.DictReader(fh):
            summary.append({"method": d["method"], "checkpoint": float(d["checkpoint"]),
                            "median": float(d["median"]), "q25": float(d["q25"]),
                            "q75": float(d["q75"])})
    Path(args.out).write_text(harness.svg_plot(summary, title=files[0].stem))
    print(args.out)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="epel", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    experiments = list(harness.models.EXPERIMENTS) + ["kyphosis"]

    f = sub.add_parser("fit", help="fit one method to one experiment")
    f.add_argument("--experiment", required=True, choices=experiments)
    f.add_argument("--method", required=True, choices=harness.METHODS)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--data-seed", type=int, default=0)
    f.add_argument("--n", type=int, default=None)
    f.add_argument("--out", required=True)
    f.add_argument("--config", default=None, help="JSON with config field overrides")
    f.set_defaults(func=cmd_fit)

    g = sub.add_parser("gold", help="long MCMC reference run")
    g.add_argument("--experiment", required=True, choices=experiments)
    g.add_argument("--method", choices=["mh", "hmc"], default="mh")
    g.add_argument("--draws", type=int, default=harness.DESK_GOLD["mh"])
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--data-seed", type=int, default=0)
    g.add_argument("--n", type=int, default=None)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gold)

    n = sub.add_parser("nbp", help="cross-match two sample CSVs")
    n.add_argument("--a", required=True)
    n.add_argument("--b", required=True)
    n.add_argument("--quantile", type=float, default=0.05)
    n.add_argument("--reps", type=int, default=None,
                   help="simulate the null threshold with this many replications")
    n.add_argument("--seed", type=int, default=0)
    n.add_argument("--max-pool", type=int, default=None)
    n.add_argument("--standardize", action="store_true")
    n.add_argument("--backend", choices=["pymatching", "blossom"], default="pymatching")
    n.set_defaults(func=cmd_nbp)

    e = sub.add_parser("experiment", help="run an experiment spec")
    e.add_argument("--spec", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--paper-scale", action="store_true")
    e.add_argument("--workers", type=int, default=1)
    e.set_defaults(func=cmd_experiment)

    p = sub.add_parser("plot", help="SVG chart of an experiment summary")
    p.add_argument("--in", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
