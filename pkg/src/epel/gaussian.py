"""Multivariate Gaussians in natural (information) form.

A ``NaturalGaussian`` stores the linear shift ``r`` and precision ``Q``; the
moments are ``mu = Q^{-1} r`` and ``Sigma = Q^{-1}``.  Products and quotients
of densities are sums and differences of natural parameters, so sites of an
EP approximation are allowed to be improper (indefinite ``Q``).  Only
``to_moments``, ``log_pdf`` and ``sample`` need a proper Gaussian.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import linalg


class ImproperGaussianError(ValueError):
    """Raised when an operation needs a positive-definite precision."""


def _symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def cholesky_or_none(a: np.ndarray) -> np.ndarray | None:
    """Lower Cholesky factor of ``a``, or None if ``a`` is not PD."""
    try:
        return linalg.cholesky(a, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError):
        return None


def is_pd(a: np.ndarray) -> bool:
    return cholesky_or_none(a) is not None


@dataclass(frozen=True, eq=False)
class NaturalGaussian:
    r: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        r = np.atleast_1d(np.asarray(self.r, dtype=float)).copy()
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        if r.ndim != 1 or Q.shape != (r.size, r.size):
            raise ValueError(f"shape mismatch: r {r.shape}, Q {Q.shape}")
        Q = _symmetrize(Q)
        r.flags.writeable = False
        Q.flags.writeable = False
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "Q", Q)

    @property
    def dim(self) -> int:
        return self.r.size

    @classmethod
    def zero(cls, p: int) -> "NaturalGaussian":
        return cls(np.zeros(p), np.zeros((p, p)))

    @classmethod
    def isotropic(cls, p: int, variance: float, mean=None) -> "NaturalGaussian":
        mean = np.zeros(p) if mean is None else np.asarray(mean, dtype=float)
        Q = np.eye(p) / variance
        return cls(Q @ mean, Q)

    def is_proper(self) -> bool:
        return is_pd(self.Q)

    def __mul__(self, other: "NaturalGaussian") -> "NaturalGaussian":
        return product(self, other)

    def __truediv__(self, other: "NaturalGaussian") -> "NaturalGaussian":
        return quotient(self, other)

    def scale(self, c: float) -> "NaturalGaussian":
        """Raise the density to the power ``c`` (natural parameters times ``c``)."""
        return NaturalGaussian(c * self.r, c * self.Q)

    def to_dict(self) -> dict:
        return {"r": self.r.tolist(), "Q": self.Q.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NaturalGaussian":
        return cls(np.asarray(d["r"], dtype=float), np.asarray(d["Q"], dtype=float))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "NaturalGaussian":
        return cls.from_dict(json.loads(s))

    def __repr__(self):
        return f"NaturalGaussian(p={self.dim}, r={self.r!r}, Q={self.Q!r})"


@dataclass(frozen=True, eq=False)
class MomentGaussian:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float)).copy()
        sigma = _symmetrize(np.atleast_2d(np.asarray(self.sigma, dtype=float)))
        if mu.ndim != 1 or sigma.shape != (mu.size, mu.size):
            raise ValueError(f"shape mismatch: mu {mu.shape}, sigma {sigma.shape}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def dim(self) -> int:
        return self.mu.size


def _check_dims(a: NaturalGaussian, b: NaturalGaussian) -> None:
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")


def product(a: NaturalGaussian, b: NaturalGaussian) -> NaturalGaussian:
    _check_dims(a, b)
    return NaturalGaussian(a.r + b.r, a.Q + b.Q)


def quotient(a: NaturalGaussian, b: NaturalGaussian) -> NaturalGaussian:
    _check_dims(a, b)
    return NaturalGaussian(a.r - b.r, a.Q - b.Q)


def _chol(g: NaturalGaussian) -> np.ndarray:
    L = cholesky_or_none(g.Q)
    if L is None:
        raise ImproperGaussianError("improper Gaussian: precision is not positive definite")
    return L


def to_moments(g: NaturalGaussian) -> MomentGaussian:
    L = _chol(g)
    mu = linalg.cho_solve((L, True), g.r)
    sigma = linalg.cho_solve((L, True), np.eye(g.dim))
    return MomentGaussian(mu, sigma)


def from_moments(m: MomentGaussian) -> NaturalGaussian:
    L = cholesky_or_none(m.sigma)
    if L is None:
        raise ImproperGaussianError("covariance is not positive definite")
    Q = linalg.cho_solve((L, True), np.eye(m.dim))
    Q = _symmetrize(Q)
    return NaturalGaussian(Q @ m.mu, Q)


def mean(g: NaturalGaussian) -> np.ndarray:
    return linalg.cho_solve((_chol(g), True), g.r)


def log_pdf(g: NaturalGaussian, x) -> np.ndarray | float:
    """Normalized log density; ``x`` may be a vector or an (m, p) array of rows."""
    L = _chol(g)
    mu = linalg.cho_solve((L, True), g.r)
    x = np.asarray(x, dtype=float)
    d = x - mu
    # (x-mu)' Q (x-mu) = ||L' (x-mu)||^2 with Q = L L'
    z = d @ L
    maha = np.sum(z * z, axis=-1)
    logdet_q = 2.0 * np.sum(np.log(np.diag(L)))
    out = -0.5 * (g.dim * np.log(2 * np.pi) - logdet_q + maha)
    return float(out) if np.ndim(out) == 0 else out


def grad_log_pdf(g: NaturalGaussian, x) -> np.ndarray:
    """Gradient of the (unnormalized) log density: ``r - Q x``."""
    x = np.asarray(x, dtype=float)
    return g.r - x @ g.Q


def sample(g: NaturalGaussian, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` rows from ``g``; returns a (count, p) array."""
    L = _chol(g)
    mu = linalg.cho_solve((L, True), g.r)
    eps = rng.standard_normal((count, g.dim))
    # Q = L L' => Sigma = L^{-T} L^{-1}; x = mu + L^{-T} eps has covariance Sigma
    z = linalg.solve_triangular(L, eps.T, lower=True, trans="T").T
    return mu + z


def entropy(m: MomentGaussian) -> float:
    sign, logdet = np.linalg.slogdet(m.sigma)
    if sign <= 0:
        raise ImproperGaussianError("covariance is not positive definite")
    return 0.5 * (m.dim * (1.0 + np.log(2 * np.pi)) + logdet)
