"""Cost-accuracy experiments: run each method under a budget, snapshot its
approximation at checkpoints and score the snapshots by cross-match against a
long MCMC reference run.

Checkpoints are wall-clock seconds by default.  With ``clock="work"`` they
count inner EL solves instead, which makes the result table reproducible
byte for byte.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import platform
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import elcore, ep, gaussian, models, nbp, posterior, samplers, vb
from .gaussian import NaturalGaussian

log = logging.getLogger(__name__)

METHODS = ("epel", "laplace", "vb", "hmc", "mh")
DEFAULT_CHECKPOINTS = [0.5, 1, 2, 5, 10, 20, 50, 100]
DESK_GOLD = {"mh": 1_000_000, "hmc": 200_000}
PAPER_GOLD = {"mh": 10_000_000, "hmc": 2_000_000}
METHOD_INDEX = {m: k for k, m in enumerate(METHODS)}
GOLD_INDEX = len(METHODS)

# experiment-specific settings from the paper's experimental appendix
MH_SHRINKAGE = {"gee": 0.3, "linreg10": 0.5}
EP_SITES = {"kyphosis": 4}


@dataclass
class ExperimentSpec:
    name: str
    methods: list = field(default_factory=lambda: ["epel", "laplace", "mh"])
    reps: int = 10
    budget_seconds: float = 100.0
    checkpoint_schedule: list = field(default_factory=lambda: list(DEFAULT_CHECKPOINTS))
    gold: dict = field(default_factory=lambda: {"method": "mh", "draws": DESK_GOLD["mh"]})
    master_seed: int = 0
    clock: str = "wall"            # "wall" (seconds) or "work" (EL solves)
    nbp_samples: int = 1000
    n: int | None = None
    data_seed: int | None = None
    gold_per_rep: bool = True
    backend: str = "pymatching"
    standardize: bool = False
    ep: dict = field(default_factory=dict)
    chain: dict = field(default_factory=dict)
    vb: dict = field(default_factory=dict)

    def validate(self):
        if self.name not in models.EXPERIMENTS + ("kyphosis",):
            raise ValueError(f"unknown experiment {self.name!r}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        c = list(self.checkpoint_schedule)
        if not c or any(b <= a for a, b in zip(c, c[1:])):
            raise ValueError("checkpoint_schedule must be non-empty and increasing")
        if self.clock not in ("wall", "work"):
            raise ValueError("clock must be 'wall' or 'work'")
        if self.gold.get("method") not in ("mh", "hmc"):
            raise ValueError("gold method must be mh or hmc")
        if self.nbp_samples < 1:
            raise ValueError("nbp_samples must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown spec fields {sorted(unknown)}")
        spec = cls(**d)
        spec.validate()
        return spec

    def to_dict(self) -> dict:
        return asdict(self)

    def paper_scale(self) -> "ExperimentSpec":
        d = self.to_dict()
        d["reps"] = 50
        d["gold"] = {"method": self.gold["method"], "draws": PAPER_GOLD[self.gold["method"]]}
        return ExperimentSpec.from_dict(d)


@dataclass
class ResultRow:
    experiment: str
    method: str
    rep: int
    checkpoint: float
    nbp_count: int
    passed: bool
    status: str = "ok"
    extra: str = "{}"


ROW_FIELDS = ["experiment", "method", "rep", "checkpoint", "nbp_count", "pass", "status", "extra"]


def derive_seed(master: int, *keys: int) -> int:
    return int(np.random.SeedSequence([int(master), *map(int, keys)]).generate_state(1)[0])


def build_target(name: str, n: int | None = None, seed: int = 0) -> posterior.Target:
    if name == "kyphosis":
        data = models.load_kyphosis()
    else:
        data = models.generate(name, seed, n)
    if name == "quantile":
        return posterior.Target(models.quantile_model(smooth=False), data,
                                surrogate=models.quantile_model(smooth=True))
    return posterior.Target(models.model_for(name), data)


def _chain_config(spec: ExperimentSpec, seed: int, **over) -> samplers.ChainConfig:
    kw = {"shrinkage": MH_SHRINKAGE.get(spec.name, 0.7), "draws": 1_000_000}
    kw.update(spec.chain)
    kw.update(over)
    kw["seed"] = seed
    return samplers.ChainConfig(**kw)


def _ep_config(spec: ExperimentSpec) -> ep.EpConfig:
    kw = {"num_sites": EP_SITES.get(spec.name, 6)}
    kw.update(spec.ep)
    return ep.EpConfig(**kw)


def build_gold(spec: ExperimentSpec, t: posterior.Target, seed: int) -> samplers.SampleMatrix:
    method = spec.gold["method"]
    cfg = _chain_config(spec, seed, draws=int(spec.gold["draws"]))
    if method == "hmc":
        return samplers.hmc_run(t, cfg)
    return samplers.mh_run(t, cfg)


# Snapshots: (seconds, work, NaturalGaussian) for Gaussian methods; MCMC keeps the chain.

@dataclass
class MethodRun:
    method: str
    gaussians: list = field(default_factory=list)
    chain: samplers.SampleMatrix | None = None
    skipped: str | None = None
    extra: dict = field(default_factory=dict)


def _over_budget(spec, secs, work) -> bool:
    return (secs if spec.clock == "wall" else work) >= spec.budget_seconds


def run_method(spec: ExperimentSpec, t: posterior.Target, method: str, seed: int) -> MethodRun:
    smooth = t.smooth
    if method in ("hmc", "vb") and not smooth:
        return MethodRun(method, skipped=f"{method} needs a differentiable model")
    res = MethodRun(method)
    t0 = time.perf_counter()
    w0 = elcore.solve_count()

    def clocks():
        return time.perf_counter() - t0, elcore.solve_count() - w0

    if method == "laplace":
        lap = posterior.map_newton(t)
        s, w = clocks()
        res.gaussians.append((s, w, lap.approx))
        res.extra = {"newton_iters": lap.newton_iters, "converged": lap.converged}
    elif method == "epel":
        cfg = _ep_config(spec)
        if not smooth:
            cfg.tilted = "is"
        lap = posterior.map_newton(t)
        s, w = clocks()
        res.gaussians.append((s, w, lap.approx))

        def cb(state, rec):
            s, w = clocks()
            res.gaussians.append((s, w, state.approx))
            return _over_budget(spec, s, w)

        _, trace = ep.run(t, cfg, seed=seed, lap=lap, callback=cb)
        ess = [e for r in trace.records for e in r["ess"] if e is not None]
        res.extra = {"cycles": len(trace), "converged": trace.converged,
                     "min_ess": float(min(ess)) if ess else None}
    elif method == "vb":
        cfg = vb.VbConfig(**{"steps": 10 ** 7, **spec.vb, "seed": seed})
        lap = posterior.map_newton(t)
        s, w = clocks()
        res.gaussians.append((s, w, lap.approx))

        def cb(step, params, _):
            s, w = clocks()
            if step % 25 == 0:
                res.gaussians.append((s, w, gaussian.from_moments(params.to_moments())))
            return _over_budget(spec, s, w)

        _, trace = vb.vb_run(t, cfg, init=lap, callback=cb)
        res.extra = {"steps": len(trace)}
    else:
        over = {"max_seconds": spec.budget_seconds} if spec.clock == "wall" \
            else {"max_work": int(spec.budget_seconds)}
        cfg = _chain_config(spec, seed, **over)
        chain = samplers.mh_run(t, cfg) if method == "mh" else samplers.hmc_run(t, cfg)
        res.chain = chain
        res.extra = {"accept_rate": chain.accept_rate, "draws": chain.size}
    return res


def snapshot_draws(spec: ExperimentSpec, run: MethodRun, checkpoint: float,
                   rng: np.random.Generator):
    """Draws representing ``run`` at ``checkpoint``, or None if nothing is ready yet."""
    k = 0 if spec.clock == "wall" else 1
    if run.chain is not None:
        clock = run.chain.elapsed if spec.clock == "wall" else run.chain.work
        m = int(np.searchsorted(clock, checkpoint, side="right"))
        if m < spec.nbp_samples:
            return None
        sub = samplers.SampleMatrix(run.chain.draws[:m], run.chain.accept_rate, 0.0, run.method, 0)
        return samplers.thin_and_pool(sub, 0, spec.nbp_samples).draws
    ready = [g for g in run.gaussians if g[k] <= checkpoint]
    if not ready:
        return None
    return gaussian.sample(ready[-1][2], spec.nbp_samples, rng)


def gold_subsample(spec, gold: samplers.SampleMatrix, rng) -> np.ndarray:
    """``nbp_samples`` gold draws chosen at random without replacement."""
    if gold.size < spec.nbp_samples:
        raise ValueError("gold standard has fewer draws than the NBP sample size")
    idx = np.sort(rng.choice(gold.size, spec.nbp_samples, replace=False))
    return gold.draws[idx]


def _score(spec, gold_draws, draws, threshold) -> nbp.CrossMatchResult:
    return nbp.cross_match(gold_draws, draws, threshold=threshold, backend=spec.backend,
                           standardize=spec.standardize)


def run_rep(spec: ExperimentSpec, rep: int, t: posterior.Target | None = None,
            gold: samplers.SampleMatrix | None = None) -> list:
    t = t or build_target(spec.name, spec.n, _data_seed(spec))
    if gold is None:
        gold = build_gold(spec, t, derive_seed(spec.master_seed, rep, GOLD_INDEX))
    gold_draws = gold_subsample(spec, gold, np.random.default_rng(
        derive_seed(spec.master_seed, rep, GOLD_INDEX, 1)))
    threshold = nbp.threshold_for(spec.nbp_samples)
    rows = []
    for method in spec.methods:
        mi = METHOD_INDEX[method]
        try:
            run = run_method(spec, t, method, derive_seed(spec.master_seed, rep, mi))
        except (ep.EpError, posterior.OutOfSupportError, elcore.SupportBoundaryError) as exc:
            run = MethodRun(method, skipped=f"failed: {exc}")
        extra = dict(run.extra)
        if spec.clock == "work":
            extra = {k: v for k, v in extra.items() if k not in ("seconds",)}
        for ci, c in enumerate(spec.checkpoint_schedule):
            if run.skipped:
                rows.append(ResultRow(spec.name, method, rep, c, -1, False, "skipped",
                                      json.dumps({"reason": run.skipped})))
                continue
            rng = np.random.default_rng(derive_seed(spec.master_seed, rep, mi, 2, ci))
            draws = snapshot_draws(spec, run, c, rng)
            if draws is None:
                rows.append(ResultRow(spec.name, method, rep, c, -1, False, "not_ready",
                                      json.dumps(extra, sort_keys=True)))
                continue
            res = _score(spec, gold_draws, draws, threshold)
            rows.append(ResultRow(spec.name, method, rep, c, res.cross_count, res.passed,
                                  "ok", json.dumps(extra, sort_keys=True)))
    return rows


def _data_seed(spec):
    return spec.master_seed if spec.data_seed is None else spec.data_seed


def run_experiment(spec: ExperimentSpec, workers: int = 1, progress=None) -> list:
    """All result rows, one per (method, rep, checkpoint), in a fixed order."""
    spec.validate()
    t = build_target(spec.name, spec.n, _data_seed(spec))
    shared_gold = None
    if not spec.gold_per_rep:
        shared_gold = build_gold(spec, t, derive_seed(spec.master_seed, 0, GOLD_INDEX))
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_rep_job, [(spec, r, shared_gold) for r in range(spec.reps)]))
    else:
        parts = []
        for r in range(spec.reps):
            parts.append(run_rep(spec, r, t, shared_gold))
            if progress:
                progress(r, parts[-1])
    return [row for part in parts for row in part]


def _rep_job(args):
    spec, rep, gold = args
    return run_rep(spec, rep, None, gold)


def gold_control(spec: ExperimentSpec, rep: int, t=None) -> nbp.CrossMatchResult:
    """Cross-match of two disjoint gold subsamples: a self-consistency check."""
    t = t or build_target(spec.name, spec.n, _data_seed(spec))
    gold = build_gold(spec, t, derive_seed(spec.master_seed, rep, GOLD_INDEX))
    N = spec.nbp_samples
    if gold.size < 2 * N:
        raise ValueError("gold standard too short for two disjoint subsamples")
    both = samplers.thin_and_pool(gold, 0, 2 * N).draws
    return _score(spec, both[0::2], both[1::2], nbp.threshold_for(N))


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROW_FIELDS)
    for r in rows:
        w.writerow([r.experiment, r.method, r.rep, repr(float(r.checkpoint)), r.nbp_count,
                    int(r.passed), r.status, r.extra])
    return buf.getvalue()


def rows_from_csv(text: str) -> list:
    out = []
    for d in csv.DictReader(io.StringIO(text)):
        out.append(ResultRow(d["experiment"], d["method"], int(d["rep"]), float(d["checkpoint"]),
                             int(d["nbp_count"]), bool(int(d["pass"])), d["status"], d["extra"]))
    return out


def summarize(rows) -> list:
    """Median and quartiles of the NBP count per (method, checkpoint).

    Only scored rows count.  The median of an odd number of values is the
    middle order statistic; quartiles use linear interpolation.
    """
    groups = {}
    for r in rows:
        if r.status == "ok":
            groups.setdefault((r.method, r.checkpoint), []).append(r.nbp_count)
    if not groups and rows:
        return []
    order = {m: k for k, m in enumerate(dict.fromkeys(r.method for r in rows))}
    out = []
    for (m, c), v in sorted(groups.items(), key=lambda kv: (order[kv[0][0]], kv[0][1])):
        a = np.asarray(v, dtype=float)
        out.append({"method": m, "checkpoint": c, "count": a.size,
                    "median": float(np.median(a)), "q25": float(np.quantile(a, 0.25)),
                    "q75": float(np.quantile(a, 0.75))})
    return out


def summary_to_csv(summary) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, ["method", "checkpoint", "count", "median", "q25", "q75"],
                       lineterminator="\n")
    w.writeheader()
    w.writerows(summary)
    return buf.getvalue()


def manifest(spec: ExperimentSpec) -> dict:
    import numba
    import scipy

    seeds = {f"rep{r}": {m: derive_seed(spec.master_seed, r, METHOD_INDEX[m]) for m in spec.methods}
             for r in range(spec.reps)}
    return {"spec": spec.to_dict(), "seeds": seeds, "data_seed": _data_seed(spec),
            "versions": {"python": platform.python_version(), "numpy": np.__version__,
                         "scipy": scipy.__version__, "numba": numba.__version__}}


def write_outputs(spec: ExperimentSpec, rows, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{spec.name}.csv").write_text(rows_to_csv(rows))
    (out / f"{spec.name}_summary.csv").write_text(summary_to_csv(summarize(rows)))
    (out / "manifest.json").write_text(json.dumps(manifest(spec), indent=1))
    return out


def svg_plot(summary, title: str = "", threshold: int | None = nbp.PAPER_THRESHOLD,
             width: int = 640, height: int = 400) -> str:
    """Median NBP against checkpoint (log axis) with the interquartile band."""
    if not summary:
        raise ValueError("nothing to plot")
    xs = np.log10([s["checkpoint"] for s in summary])
    lo, hi = float(xs.min()), float(xs.max())
    hi = hi if hi > lo else lo + 1.0
    ymax = max(max(s["q75"] for s in summary), threshold or 0) * 1.05 or 1.0
    ml, mr, mt, mb = 60, 110, 30, 40

    def px(x):
        return ml + (np.log10(x) - lo) / (hi - lo) * (width - ml - mr)

    def py(y):
        return height - mb - y / ymax * (height - mt - mb)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'font-family="sans-serif" font-size="11">',
             f'<text x="{width / 2}" y="18" text-anchor="middle">{title}</text>',
             f'<line x1="{ml}" y1="{height - mb}" x2="{width - mr}" y2="{height - mb}" stroke="black"/>',
             f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{height - mb}" stroke="black"/>']
    for y in np.linspace(0, ymax, 5):
        parts.append(f'<text x="{ml - 5}" y="{py(y) + 4:.1f}" text-anchor="end">{y:.0f}</text>')
    for c in sorted({s["checkpoint"] for s in summary}):
        parts.append(f'<text x="{px(c):.1f}" y="{height - mb + 15}" text-anchor="middle">{c:g}</text>')
    if threshold:
        parts.append(f'<line x1="{ml}" y1="{py(threshold):.1f}" x2="{width - mr}" '
                     f'y2="{py(threshold):.1f}" stroke="gray" stroke-dasharray="4,3"/>')
    methods = list(dict.fromkeys(s["method"] for s in summary))
    for k, m in enumerate(methods):
        col = colors[k % len(colors)]
        pts = [s for s in summary if s["method"] == m]
        band = [(px(s["checkpoint"]), py(s["q75"])) for s in pts] + \
               [(px(s["checkpoint"]), py(s["q25"])) for s in reversed(pts)]
        parts.append('<polygon points="' + " ".join(f"{a:.1f},{b:.1f}" for a, b in band)
                     + f'" fill="{col}" fill-opacity="0.2" stroke="none"/>')
        line = " ".join(f"{px(s['checkpoint']):.1f},{py(s['median']):.1f}" for s in pts)
        parts.append(f'<polyline points="{line}" fill="none" stroke="{col}" stroke-width="2"/>')
        parts.append(f'<text x="{width - mr + 8}" y="{mt + 15 * (k + 1)}" fill="{col}">{m}</text>')
    parts.append("</svg>")
    return "\n".join(parts)
