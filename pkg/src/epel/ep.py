"""Expectation propagation for the Bayesian empirical-likelihood posterior.

The posterior is factorized into D sites: the Gaussian prior and D - 1
contiguous blocks of observations, each block contributing the product of its
EL weights ``w_i(theta)``.  Every cycle computes, for all sites against the
same snapshot of the approximation, the tilted moments of
``cavity(theta) * site(theta)``; the damped updates are summed into the global
approximation in one commit, which is what makes the site loop parallel.

Tilted moments come from a Laplace fit (warm-up cycles) or from
self-normalized importance sampling with the Laplace fit as proposal.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg

from . import _elkernels, elcore, gaussian, posterior
from .gaussian import MomentGaussian, NaturalGaussian

log = logging.getLogger(__name__)


class LaplaceFailed(RuntimeError):
    """Negative Hessian of the tilted log density is not positive definite."""


class DisjointProposalError(RuntimeError):
    """Every importance weight is zero."""


class EpError(RuntimeError):
    pass


@dataclass
class EpConfig:
    num_sites: int = 6
    alpha: float = 0.1
    warmup_cycles: int = 50
    is_samples: int = 5000
    max_cycles: int = 200
    convergence_tol: float = 1e-4
    ess_floor: float = 200.0
    tilted: str = "auto"          # "auto" | "laplace" | "is"
    max_alpha_halvings: int = 10

    def validate(self, n: int, p: int) -> None:
        if not 1 <= self.num_sites <= n + 1:
            raise ValueError(f"num_sites must lie in [1, n+1] = [1, {n + 1}]")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.is_samples < 2 * p + 2:
            raise ValueError(f"is_samples must be at least 2p+2 = {2 * p + 2}")
        if self.tilted not in ("auto", "laplace", "is"):
            raise ValueError("tilted must be 'auto', 'laplace' or 'is'")
        if self.warmup_cycles < 0 or self.max_cycles < 1:
            raise ValueError("cycle counts must be non-negative (max_cycles >= 1)")


class ELSites:
    """Pooled EL site factors for a posterior target.

    With ``num_sites >= 2`` site 0 is the prior and sites 1..D-1 are equal
    contiguous blocks of observations.  ``num_sites == 1`` is a single site
    holding the whole posterior.
    """

    def __init__(self, target: posterior.Target, num_sites: int, blocks=None):
        self.target = target
        self.num_sites = num_sites
        n = target.n
        if blocks is None:
            if num_sites == 1:
                blocks = [np.arange(n)]
            else:
                blocks = np.array_split(np.arange(n), num_sites - 1)
        self.prior_separate = num_sites > 1
        self.blocks = [np.asarray(b, dtype=np.int64) for b in blocks]
        self.groups = np.empty(n, dtype=np.int64)
        for g, b in enumerate(self.blocks):
            self.groups[b] = g
        self.smooth = target.smooth

    @property
    def p(self) -> int:
        return self.target.p

    def _block(self, j: int) -> int:
        return j - 1 if self.prior_separate else j

    def gaussian_site(self, j: int) -> NaturalGaussian | None:
        if self.prior_separate and j == 0:
            return self.target.prior
        return None

    def log_factors(self, thetas, j: int) -> np.ndarray:
        """log site_j at each row of ``thetas``; -inf outside the support."""
        t = self.target
        thetas = np.atleast_2d(thetas)
        if self.prior_separate and j == 0:
            return np.atleast_1d(posterior.log_prior(t, thetas))
        Hb = np.ascontiguousarray(t.model.h_batch(t.data.observations, thetas))
        elcore.add_solves(Hb.shape[0])
        out, _ = _elkernels.site_log_w_batch(Hb, self.groups, len(self.blocks),
                                             t.el_tol, t.el_max_iter)
        val = out[:, self._block(j)]
        if not self.prior_separate:
            val = val + posterior.log_prior(t, thetas)
        return val

    def value_grad(self, theta, j: int):
        t = self.target
        if self.prior_separate and j == 0:
            return posterior.log_prior(t, theta), gaussian.grad_log_pdf(t.prior, theta)
        ev = posterior.eval_el(t, theta)
        if not ev.in_support:
            return -np.inf, None
        g = elcore.el_gradient(t.model, t.data, theta, ev)
        idx = self.blocks[self._block(j)]
        val = float(np.sum(np.log(ev.weights[idx])))
        grad = g.grad_log_w[idx].sum(axis=0)
        if not self.prior_separate:
            val += posterior.log_prior(t, theta)
            grad = grad + gaussian.grad_log_pdf(t.prior, theta)
        return val, grad

    def hess(self, theta, j: int):
        if self.prior_separate and j == 0:
            return -self.target.prior.Q
        return None


class GaussianSites:
    """Quadratic pseudo-sites ``exp(r'theta - theta'Q theta / 2)``.

    A conjugate stand-in for EL sites: the EP fixed point is the exact product.
    """

    smooth = True

    def __init__(self, sites):
        self.sites = list(sites)
        self.num_sites = len(self.sites)

    @property
    def p(self) -> int:
        return self.sites[0].dim

    def gaussian_site(self, j):
        return None

    def log_factors(self, thetas, j):
        s = self.sites[j]
        thetas = np.atleast_2d(thetas)
        return thetas @ s.r - 0.5 * np.einsum("li,ij,lj->l", thetas, s.Q, thetas)

    def value_grad(self, theta, j):
        s = self.sites[j]
        return float(theta @ s.r - 0.5 * theta @ s.Q @ theta), s.r - s.Q @ theta

    def hess(self, theta, j):
        return -self.sites[j].Q

    def exact_posterior(self) -> NaturalGaussian:
        out = self.sites[0]
        for s in self.sites[1:]:
            out = out * s
        return out


@dataclass
class EpState:
    sites: list
    approx: NaturalGaussian
    cycle: int = 0
    last_max_update: float = np.inf
    diagnostics: dict = field(default_factory=dict)

    def check_consistency(self, atol: float = 1e-8) -> bool:
        r = sum(s.r for s in self.sites)
        Q = sum(s.Q for s in self.sites)
        scale = 1.0 + np.abs(self.approx.Q).max()
        return bool(np.allclose(r, self.approx.r, atol=atol * scale)
                    and np.allclose(Q, self.approx.Q, atol=atol * scale))


@dataclass
class EpTrace:
    records: list = field(default_factory=list)
    state: EpState | None = None
    converged: bool = False
    history: list = field(default_factory=list, repr=False)

    def averaged(self, last: int) -> NaturalGaussian:
        """Mean natural parameters of the last ``last`` committed globals.

        Averaging iterates damps the importance-sampling noise that keeps the
        raw iterates jittering around the fixed point.
        """
        if not self.history:
            raise ValueError("no committed cycles")
        tail = self.history[-last:]
        return NaturalGaussian(np.mean([g.r for g in tail], axis=0),
                               np.mean([g.Q for g in tail], axis=0))

    def __len__(self):
        return len(self.records)

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(r) for r in self.records) + ("\n" if self.records else "")


def _eta_norm(r, Q) -> float:
    return float(np.sqrt(np.sum(r * r) + np.sum(Q * Q)))


def init_from_laplace(lap, cfg: EpConfig, num_sites: int | None = None) -> EpState:
    """Split the Laplace approximation evenly over the sites."""
    approx = lap.approx if isinstance(lap, posterior.LaplaceResult) else lap
    if not approx.is_proper():
        raise gaussian.ImproperGaussianError("Laplace approximation is improper")
    D = cfg.num_sites if num_sites is None else num_sites
    site = approx.scale(1.0 / D)
    return EpState([site] * D, approx)


def cavity(state: EpState, i: int) -> NaturalGaussian:
    return gaussian.quotient(state.approx, state.sites[i])


def _log_unnorm(g: NaturalGaussian, thetas) -> np.ndarray:
    thetas = np.atleast_2d(thetas)
    return thetas @ g.r - 0.5 * np.einsum("li,ij,lj->l", thetas, g.Q, thetas)


def tilted_laplace(sites, j: int, cav: NaturalGaussian, tol: float = 1e-10,
                   max_iter: int = 50) -> MomentGaussian:
    """Mode and inverse negative Hessian of ``log cavity + log site_j``."""
    start = gaussian.mean(cav)

    def value_grad(th):
        v, g = sites.value_grad(th, j)
        if g is None or not np.isfinite(v):
            return -np.inf, None
        return v + float(th @ cav.r - 0.5 * th @ cav.Q @ th), g + cav.r - cav.Q @ th

    def hess(th, step):
        h = sites.hess(th, j)
        if h is not None:
            return h - cav.Q
        return elcore.hessian_fd(lambda x: value_grad(x)[1], th, step)

    try:
        res = posterior.newton_maximize(value_grad, hess, start, tol, max_iter)
    except (posterior.OutOfSupportError, elcore.SupportBoundaryError, linalg.LinAlgError) as exc:
        raise LaplaceFailed(str(exc)) from exc
    L = gaussian.cholesky_or_none(res.neg_hess)
    if L is None:
        raise LaplaceFailed("negative Hessian of the tilted distribution is not positive definite")
    cov = linalg.cho_solve((L, True), np.eye(res.x.size))
    return MomentGaussian(res.x, cov)


def tilted_is(sites, j: int, cav: NaturalGaussian, proposal: NaturalGaussian, L: int,
              rng: np.random.Generator):
    """Self-normalized importance-sampling moments of the tilted distribution.

    Returns (MomentGaussian, ess).  The covariance comes from the R factor of
    a QR decomposition of the weighted scatter matrix.
    """
    if L < 2:
        raise ValueError("need at least two importance samples")
    draws = gaussian.sample(proposal, L, rng)
    log_xi = _log_unnorm(cav, draws) + sites.log_factors(draws, j) \
        - gaussian.log_pdf(proposal, draws)
    log_xi = np.where(np.isfinite(log_xi), log_xi, -np.inf)
    top = np.max(log_xi)
    if not np.isfinite(top):
        raise DisjointProposalError("proposal disjoint from tilted mass: all weights are zero")
    xi = np.exp(log_xi - top)
    total = xi.sum()
    ess = float(total ** 2 / np.sum(xi * xi))
    mu = (xi @ draws) / total
    S = np.sqrt(xi)[:, None] * (draws - mu)
    R = np.linalg.qr(S, mode="r")
    sigma = (R.T @ R) / total
    return MomentGaussian(mu, sigma), ess


@dataclass
class SiteOutcome:
    tilted: NaturalGaussian | None
    method: str
    ess: float | None = None
    error: str | None = None


def _site_update(sites, j, state: EpState, cfg: EpConfig, use_laplace: bool,
                 rng: np.random.Generator) -> SiteOutcome:
    cav = cavity(state, j)
    g = sites.gaussian_site(j)
    if g is not None:
        tilted = cav * g
        if tilted.is_proper():
            return SiteOutcome(tilted, "exact")
        return SiteOutcome(None, "exact", error="improper tilted Gaussian")

    cav_proper = cav.is_proper()
    lap = None
    lap_error = None
    if sites.smooth and cav_proper and cfg.tilted != "is":
        try:
            lap = tilted_laplace(sites, j, cav)
        except LaplaceFailed as exc:
            lap_error = str(exc)
    if use_laplace and lap is not None:
        try:
            return SiteOutcome(gaussian.from_moments(lap), "laplace")
        except gaussian.ImproperGaussianError as exc:
            lap_error = str(exc)

    if lap is not None:
        proposal = gaussian.from_moments(lap)
        method = "is-laplace"
    elif cav_proper:
        proposal, method = cav, "is-cavity"
    else:
        proposal, method = state.approx, "is-global"
    try:
        mom, ess = tilted_is(sites, j, cav, proposal, cfg.is_samples, rng)
    except DisjointProposalError as exc:
        return SiteOutcome(None, method, 0.0, str(exc))
    if ess < cfg.ess_floor:
        log.info("site %d: low effective sample size %.1f", j, ess)
    try:
        return SiteOutcome(gaussian.from_moments(mom), method, ess)
    except gaussian.ImproperGaussianError:
        return SiteOutcome(None, method, ess, lap_error or "degenerate importance covariance")


def commit_with_retry(approx: NaturalGaussian, sum_r, sum_Q, max_halvings: int = 10):
    """Apply the summed damped update, halving it until the result is proper.

    Returns (candidate, factor, committed); after ``max_halvings`` failed
    halvings the commit is skipped.
    """
    factor = 1.0
    for _ in range(max_halvings + 1):
        cand = NaturalGaussian(approx.r + factor * sum_r, approx.Q + factor * sum_Q)
        if cand.is_proper():
            return cand, factor, True
        factor *= 0.5
    return approx, factor, False


def _site_rng(seed: int, cycle: int, site: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(cycle), int(site)]))


def run(target: posterior.Target | None, cfg: EpConfig | None = None, seed: int = 0,
        lap=None, sites=None, callback=None):
    """Run damped parallel EP; returns (global approximation, EpTrace).

    ``sites`` overrides the EL site factors (used for the Gaussian test seam);
    ``lap`` is the initial global approximation (a LaplaceResult or a proper
    NaturalGaussian).  ``callback(state, record)`` is invoked after every
    committed cycle; returning True stops the run.
    """
    cfg = cfg or EpConfig()
    t0 = time.perf_counter()
    if sites is None:
        cfg.validate(target.n, target.p)
        sites = ELSites(target, cfg.num_sites)
    if lap is None:
        lap = posterior.map_newton(target)
        if not lap.converged:
            raise EpError("Laplace initialization failed to converge")
    state = init_from_laplace(lap, cfg, sites.num_sites)
    trace = EpTrace(state=state)
    D = sites.num_sites

    in_warmup = sites.smooth and cfg.tilted == "auto" and cfg.warmup_cycles > 0
    for cycle in range(cfg.max_cycles):
        tc = time.perf_counter()
        use_laplace = cfg.tilted == "laplace" or (in_warmup and cycle < cfg.warmup_cycles)
        outcomes = [_site_update(sites, j, state, cfg, use_laplace, _site_rng(seed, cycle, j))
                    for j in range(D)]
        if all(o.tilted is None for o in outcomes):
            raise EpError(f"cycle {cycle}: every site update failed")

        dr = []
        dQ = []
        for o in outcomes:
            if o.tilted is None:
                dr.append(np.zeros(sites.p))
                dQ.append(np.zeros((sites.p, sites.p)))
            else:
                dr.append(cfg.alpha * (o.tilted.r - state.approx.r))
                dQ.append(cfg.alpha * (o.tilted.Q - state.approx.Q))
        sum_r = np.sum(dr, axis=0)
        sum_Q = np.sum(dQ, axis=0)

        cand, factor, committed = commit_with_retry(state.approx, sum_r, sum_Q,
                                                    cfg.max_alpha_halvings)
        max_update = factor * max(_eta_norm(a, b) for a, b in zip(dr, dQ))
        rel_update = max_update / max(_eta_norm(state.approx.r, state.approx.Q), 1e-300)
        if committed:
            state.sites = [NaturalGaussian(s.r + factor * a, s.Q + factor * b)
                           for s, a, b in zip(state.sites, dr, dQ)]
            # recompute the global from the sites so the two never drift apart
            state.approx = NaturalGaussian(np.sum([s.r for s in state.sites], axis=0),
                                           np.sum([s.Q for s in state.sites], axis=0))
            if not state.approx.is_proper():
                state.approx = cand
            trace.history.append(state.approx)
        state.cycle = cycle + 1
        state.last_max_update = rel_update
        rec = {
            "cycle": cycle + 1,
            "max_update": rel_update,
            "ess": [o.ess for o in outcomes],
            "methods": [o.method for o in outcomes],
            "failed_sites": [j for j, o in enumerate(outcomes) if o.tilted is None],
            "alpha_used": cfg.alpha * factor if committed else 0.0,
            "committed": committed,
            "seconds": time.perf_counter() - tc,
            "elapsed": time.perf_counter() - t0,
        }
        trace.records.append(rec)
        state.diagnostics.setdefault("ess", []).append(rec["ess"])
        state.diagnostics.setdefault("alpha_history", []).append(rec["alpha_used"])
        if callback is not None and callback(state, rec):
            break
        if committed and rel_update <= cfg.convergence_tol:
            if use_laplace and cfg.tilted == "auto":
                # Laplace updates have settled: move on to importance sampling
                in_warmup = False
                continue
            trace.converged = True
            break
    trace.state = state
    return state.approx, trace


def config_from_dict(d: dict) -> EpConfig:
    names = set(EpConfig.__dataclass_fields__)
    return EpConfig(**{k: v for k, v in d.items() if k in names})


def config_to_dict(cfg: EpConfig) -> dict:
    return asdict(cfg)
