"""Moment-constraint models and the datasets used in the experiments.

Every model maps an observation matrix ``Z`` (one row per observation,
responses first, then covariates) and a parameter ``theta`` to an (n, K)
matrix of constraint values.  ``h_batch`` evaluates a stack of parameters at
once, which is what the importance sampler and the batched EL solver use.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import expit

EXPERIMENTS = ("linreg2", "linreg10", "quantile", "gee")

LINREG2_THETA0 = np.array([0.5, 1.0])
LINREG10_THETA0 = np.array([0.5, 1.0, 0.5, -1.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0])
GEE_THETA0 = np.array([3.0, 1.5, 0.0, 0.0, 2.0])
GEE_RHO = 0.7
QUANTILE_TAU = 0.7
QUANTILE_EPS = 0.1

KYPHOSIS_ROWS = 81
KYPHOSIS_COLUMNS = ["Kyphosis", "Age", "Number", "Start"]
# sha256 of the Age/Number/Start columns of the bundled copy, as int64 bytes
KYPHOSIS_CHECKSUM = "d01eef1c757fe6df"


class NonDifferentiableModelError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    observations: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        obs = np.atleast_2d(np.asarray(self.observations, dtype=float)).copy()
        if obs.shape[0] < 1:
            raise ValueError("dataset needs at least one observation")
        if not np.all(np.isfinite(obs)):
            raise ValueError("dataset contains NaN or Inf")
        obs.flags.writeable = False
        object.__setattr__(self, "observations", obs)

    @property
    def n(self) -> int:
        return self.observations.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.observations[np.asarray(idx)], dict(self.meta))

    def to_csv(self, path, header=None) -> None:
        header = header or [f"z{j + 1}" for j in range(self.observations.shape[1])]
        pd.DataFrame(self.observations, columns=header).to_csv(path, index=False)


class ConstraintModel:
    """Base class: subclasses define ``K``, ``p``, ``h`` and (if smooth) ``jac_h``."""

    name = "model"
    smooth = True

    def __init__(self, K: int, p: int):
        self.K = K
        self.p = p

    def h(self, Z, theta) -> np.ndarray:
        return self.h_batch(Z, np.asarray(theta, dtype=float)[None, :])[0]

    def h_batch(self, Z, thetas) -> np.ndarray:
        raise NotImplementedError

    def jac_h(self, Z, theta) -> np.ndarray:
        raise NonDifferentiableModelError(f"{self.name}: Jacobian is unavailable")

    def __repr__(self):
        return f"{type(self).__name__}(K={self.K}, p={self.p})"


class LinearRegression(ConstraintModel):
    """Orthogonality constraint ``x (y - x'theta)``; rows are ``(y, x)``."""

    name = "linreg"

    def __init__(self, p: int):
        if p < 1:
            raise ValueError("p must be >= 1")
        super().__init__(p, p)

    def h(self, Z, theta):
        Z = np.asarray(Z, dtype=float)
        y, X = Z[:, 0], Z[:, 1:]
        return X * (y - X @ theta)[:, None]

    def h_batch(self, Z, thetas):
        y, X = Z[:, 0], Z[:, 1:]
        resid = y[None, :] - thetas @ X.T
        return resid[:, :, None] * X[None, :, :]

    def jac_h(self, Z, theta):
        X = np.asarray(Z, dtype=float)[:, 1:]
        return -X[:, :, None] * X[:, None, :]


class LogisticRegression(ConstraintModel):
    """``x (y - expit(x'theta))``; rows are ``(y, x)`` with binary y."""

    name = "logistic"

    def __init__(self, p: int = 4):
        super().__init__(p, p)

    def h(self, Z, theta):
        Z = np.asarray(Z, dtype=float)
        y, X = Z[:, 0], Z[:, 1:]
        return X * (y - expit(X @ theta))[:, None]

    def h_batch(self, Z, thetas):
        y, X = Z[:, 0], Z[:, 1:]
        resid = y[None, :] - expit(thetas @ X.T)
        return resid[:, :, None] * X[None, :, :]

    def jac_h(self, Z, theta):
        X = np.asarray(Z, dtype=float)[:, 1:]
        s = expit(X @ theta)
        d = s * (1.0 - s)
        return -d[:, None, None] * X[:, :, None] * X[:, None, :]


def quantile_score(u, tau: float) -> np.ndarray:
    """Piecewise score: 1 - tau below zero, 0 at zero, -tau above."""
    u = np.asarray(u, dtype=float)
    return np.where(u < 0, 1.0 - tau, np.where(u > 0, -tau, 0.0))


def smooth_quantile_score(u, tau: float, eps: float) -> np.ndarray:
    return expit(-np.asarray(u, dtype=float) / eps) - tau


class QuantileRegression(ConstraintModel):
    """``rho(y - x'theta) x`` with the exact or the logistic-smoothed score."""

    name = "quantile"

    def __init__(self, p: int = 2, tau: float = QUANTILE_TAU, epsilon_rho: float = QUANTILE_EPS,
                 smooth: bool = False):
        if not 0.0 < tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        if smooth and not epsilon_rho > 0:
            raise ValueError("epsilon_rho must be positive for the smooth score")
        super().__init__(p, p)
        self.tau = tau
        self.epsilon_rho = epsilon_rho
        self.smooth = smooth

    def _score(self, u):
        if self.smooth:
            return smooth_quantile_score(u, self.tau, self.epsilon_rho)
        return quantile_score(u, self.tau)

    def h(self, Z, theta):
        Z = np.asarray(Z, dtype=float)
        y, X = Z[:, 0], Z[:, 1:]
        return X * self._score(y - X @ theta)[:, None]

    def h_batch(self, Z, thetas):
        y, X = Z[:, 0], Z[:, 1:]
        u = y[None, :] - thetas @ X.T
        return self._score(u)[:, :, None] * X[None, :, :]

    def jac_h(self, Z, theta):
        if not self.smooth:
            raise NonDifferentiableModelError("non-differentiable model: use the smoothed quantile score")
        Z = np.asarray(Z, dtype=float)
        y, X = Z[:, 0], Z[:, 1:]
        s = expit(-(y - X @ theta) / self.epsilon_rho)
        d = s * (1.0 - s) / self.epsilon_rho
        return d[:, None, None] * X[:, :, None] * X[:, None, :]


def compound_symmetry(rho: float, dim: int = 2) -> np.ndarray:
    return (1.0 - rho) * np.eye(dim) + rho * np.ones((dim, dim))


class GEEModel(ConstraintModel):
    """Quadratic-inference-function constraints for a bivariate repeated measure.

    Each row holds one subject: ``(y_1, y_2, x[:, 0], x[:, 1])`` where ``x`` is
    the p x 2 covariate matrix.  The constraint stacks ``x M_j (y - x'theta)``
    for ``M_1 = I`` and ``M_2`` compound symmetry, so ``K = 2p``.
    """

    name = "gee"

    def __init__(self, p: int = 5, rho: float = GEE_RHO):
        super().__init__(2 * p, p)
        self.M = np.stack([np.eye(2), compound_symmetry(rho)])

    def _split(self, Z):
        Z = np.asarray(Z, dtype=float)
        p = self.p
        y = Z[:, :2]
        x = np.stack([Z[:, 2:2 + p], Z[:, 2 + p:2 + 2 * p]], axis=2)  # (n, p, 2)
        return y, x

    def h_batch(self, Z, thetas):
        y, x = self._split(Z)
        fitted = np.einsum("npk,lp->lnk", x, thetas)
        e = y[None] - fitted                                   # (L, n, 2)
        me = np.einsum("jab,lnb->lnja", self.M, e)             # (L, n, 2, 2)
        h = np.einsum("npa,lnja->lnjp", x, me)                 # (L, n, 2, p)
        return h.reshape(h.shape[0], h.shape[1], 2 * self.p)

    def jac_h(self, Z, theta):
        _, x = self._split(Z)
        # d/dtheta of x M (y - x'theta) = -x M x'
        J = -np.einsum("npa,jab,nqb->njpq", x, self.M, x)
        return J.reshape(x.shape[0], 2 * self.p, self.p)


def linreg_model(p: int) -> LinearRegression:
    return LinearRegression(p)


def logistic_model(p: int = 4) -> LogisticRegression:
    return LogisticRegression(p)


def quantile_model(tau: float = QUANTILE_TAU, epsilon_rho: float = QUANTILE_EPS,
                   smooth: bool = False, p: int = 2) -> QuantileRegression:
    return QuantileRegression(p, tau, epsilon_rho, smooth)


def gee_model(p: int = 5) -> GEEModel:
    return GEEModel(p)


def _linreg_data(theta0, n, rng):
    p = theta0.size
    X = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
    y = X @ theta0 + rng.standard_normal(n)
    return np.column_stack([y, X])


def generate(spec: str, seed: int = 0, n: int | None = None) -> Dataset:
    """Synthetic data for one of the named experiments; pure in (spec, seed, n)."""
    rng = np.random.default_rng(seed)
    if spec in ("linreg2", "quantile"):
        n = 100 if n is None else n
        obs = _linreg_data(LINREG2_THETA0, n, rng)
        theta0 = LINREG2_THETA0
    elif spec == "linreg10":
        n = 100 if n is None else n
        obs = _linreg_data(LINREG10_THETA0, n, rng)
        theta0 = LINREG10_THETA0
    elif spec == "gee":
        n = 50 if n is None else n
        p = GEE_THETA0.size
        idx = np.arange(p)
        cov = 0.5 ** np.abs(idx[:, None] - idx[None, :])
        # one p-vector per time point per subject
        x = rng.multivariate_normal(np.zeros(p), cov, size=(n, 2))      # (n, 2, p)
        eps = rng.multivariate_normal(np.zeros(2), compound_symmetry(GEE_RHO), size=n)
        y = np.einsum("nkp,p->nk", x, GEE_THETA0) + eps
        obs = np.column_stack([y, x[:, 0, :], x[:, 1, :]])
        theta0 = GEE_THETA0
    else:
        raise ValueError(f"unknown experiment {spec!r}; expected one of {EXPERIMENTS}")
    return Dataset(obs, {"generator": spec, "seed": seed, "n": n, "theta0": theta0.tolist()})


def model_for(spec: str, smooth: bool | None = None):
    """The constraint model that goes with a named experiment."""
    if spec == "linreg2":
        return linreg_model(2)
    if spec == "linreg10":
        return linreg_model(10)
    if spec == "quantile":
        return quantile_model(smooth=bool(smooth))
    if spec == "gee":
        return gee_model()
    if spec == "kyphosis":
        return logistic_model()
    raise ValueError(f"unknown experiment {spec!r}")


def _column_digest(values: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(values, dtype=np.int64).tobytes()).hexdigest()[:16]


def bundled_kyphosis_path() -> Path:
    return Path(str(resources.files("epel") / "data" / "kyphosis.csv"))


def load_kyphosis(path=None, verify_checksum: bool | None = None) -> Dataset:
    """Load the Kyphosis CSV (columns Kyphosis, Age, Number, Start).

    Response is 1 for "present"; covariates are standardized with the n-1
    standard deviation and an intercept column is prepended.  The bundled copy
    is checked against a stored digest of its covariate columns.
    """
    bundled = path is None
    path = bundled_kyphosis_path() if bundled else Path(path)
    try:
        df = pd.read_csv(path)
    except pd.errors.EmptyDataError:
        raise ValueError(f"{path}: empty file") from None
    if df.empty:
        raise ValueError(f"{path}: no rows")
    df = df.drop(columns=[c for c in df.columns if c.lower() in ("rownames", "unnamed: 0")])
    if sorted(df.columns) != sorted(KYPHOSIS_COLUMNS):
        raise ValueError(f"{path}: expected columns {KYPHOSIS_COLUMNS}, got {list(df.columns)}")
    cov_cols = KYPHOSIS_COLUMNS[1:]
    try:
        cov = df[cov_cols].apply(pd.to_numeric, errors="raise").to_numpy(dtype=float)
    except (ValueError, TypeError):
        raise ValueError(f"{path}: non-numeric covariates") from None
    resp = df["Kyphosis"]
    if resp.dtype == object:
        labels = resp.str.strip().str.lower()
        if not labels.isin(["present", "absent"]).all():
            raise ValueError(f"{path}: Kyphosis must be 'present' or 'absent'")
        y = (labels == "present").to_numpy(dtype=float)
    else:
        y = resp.to_numpy(dtype=float)
    if verify_checksum is None:
        verify_checksum = bundled
    if verify_checksum:
        if len(df) != KYPHOSIS_ROWS or _column_digest(cov) != KYPHOSIS_CHECKSUM:
            raise ValueError(f"{path}: Kyphosis data failed the row-count/checksum check")
    std = (cov - cov.mean(axis=0)) / cov.std(axis=0, ddof=1)
    X = np.column_stack([np.ones(len(df)), std])
    return Dataset(np.column_stack([y, X]),
                   {"generator": "kyphosis", "source": str(path), "n": len(df)})


def load_dataset(spec: str, seed: int = 0) -> Dataset:
    if spec == "kyphosis":
        return load_kyphosis()
    return generate(spec, seed)


def load_csv(path) -> Dataset:
    """Generic observation CSV: header row, responses first then covariates."""
    df = pd.read_csv(path)
    if df.empty:
        raise ValueError(f"{path}: no rows")
    return Dataset(df.to_numpy(dtype=float), {"generator": "csv", "source": str(path)})
