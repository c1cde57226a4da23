"""Target posteriors: 1D Gaussian mixtures, a conjugate Gaussian model,
Bayesian logistic regression and the GP quasi-periodic hyperparameter posterior."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_expit, expit

from .core import TargetModel, as_batch, as_rng

LOG_2PI = np.log(2 * np.pi)


# --------------------------------------------------------------------------
# Gaussian mixtures
# --------------------------------------------------------------------------


def _logsumexp(a):
    # plain numpy over the last axis; scipy's version has noticeable call overhead on small arrays
    m = np.max(a, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return np.log(np.sum(np.exp(a - m), axis=-1)) + m[..., 0]


@dataclass(frozen=True)
class GaussianMixtureTarget(TargetModel):
    """Normalized 1D mixture of Gaussians; ``log_joint`` is the log density."""

    weights: np.ndarray
    locations: np.ndarray
    scales: np.ndarray
    dim: int = field(default=1, init=False)

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        mu = np.atleast_1d(np.asarray(self.locations, dtype=float))
        s = np.atleast_1d(np.asarray(self.scales, dtype=float))
        if not (w.shape == mu.shape == s.shape):
            raise ValueError("mixture parameters must have equal length")
        if np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
            raise ValueError("mixture weights must lie on the simplex")
        if np.any(s <= 0):
            raise ValueError("mixture scales must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "locations", mu)
        object.__setattr__(self, "scales", s)

    def _component_logpdf(self, x):
        x = np.asarray(x, dtype=float)[..., None]
        return np.log(self.weights) - 0.5 * LOG_2PI - np.log(self.scales) - 0.5 * ((x - self.locations) / self.scales) ** 2

    def log_density(self, x):
        """Log density on a plain array of scalars."""
        return _logsumexp(self._component_logpdf(x))

    def density(self, x):
        return np.exp(self.log_density(x))

    def log_joint(self, z):
        z = as_batch(z, 1)
        return self.log_density(z[..., 0])

    def grad_log_joint(self, z):
        z = as_batch(z, 1)
        lc = self._component_logpdf(z[..., 0])
        resp = np.exp(lc - _logsumexp(lc)[..., None])
        return np.sum(resp * (self.locations - z) / self.scales**2, axis=-1, keepdims=True)

    @property
    def mean(self):
        return float(np.dot(self.weights, self.locations))

    def to_dict(self):
        return {"weights": self.weights.tolist(), "locations": self.locations.tolist(), "scales": self.scales.tolist()}


def standard_normal_target():
    return GaussianMixtureTarget([1.0], [0.0], [1.0])


def sample_random_mixture(rng, n_components=5, location_scale=1.5, scale_range=(0.1, 1.0)):
    """Random 1D mixture: raw weights ~ U(0,1) normalized, locations ~ N(0, location_scale^2),
    scales ~ U(scale_range)."""
    gen = as_rng(rng).generator()
    raw = gen.uniform(0.0, 1.0, n_components)
    locs = gen.normal(0.0, location_scale, n_components)
    scales = gen.uniform(*scale_range, n_components)
    return GaussianMixtureTarget(raw / raw.sum(), locs, scales)


@dataclass(frozen=True)
class ConjugateGaussianTarget(TargetModel):
    """Prior z ~ N(0, prior_std^2), one observation x | z ~ N(z, noise_std^2).

    ``log_joint`` carries all normalizing constants so its integral is the
    evidence p(x).
    """

    observation: float = 0.4
    prior_std: float = 1.0
    noise_std: float = 1.0
    dim: int = field(default=1, init=False)

    def log_joint(self, z):
        z = as_batch(z, 1)[..., 0]
        lp = -0.5 * LOG_2PI - np.log(self.prior_std) - 0.5 * (z / self.prior_std) ** 2
        ll = -0.5 * LOG_2PI - np.log(self.noise_std) - 0.5 * ((self.observation - z) / self.noise_std) ** 2
        return lp + ll

    def grad_log_joint(self, z):
        z = as_batch(z, 1)
        return -z / self.prior_std**2 + (self.observation - z) / self.noise_std**2

    @property
    def posterior(self):
        prec = 1 / self.prior_std**2 + 1 / self.noise_std**2
        return self.observation / self.noise_std**2 / prec, np.sqrt(1 / prec)


# --------------------------------------------------------------------------
# Bayesian logistic regression
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LogRegTarget(TargetModel):
    """log p(w, y | X) with w ~ N(0, prior_std^2 I) and a Bernoulli-logit likelihood."""

    features: np.ndarray
    labels: np.ndarray
    prior_std: float = 1.0
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=float)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise ValueError("features must be (n, p) and labels (n,)")
        if not np.all(np.isfinite(X)):
            raise ValueError("features contain NaN or infinite values")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be 0 or 1")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def dim(self):
        return self.features.shape[1]

    def log_likelihood(self, w):
        w = as_batch(w, self.dim)
        a = w @ self.features.T
        return np.sum(self.labels * log_expit(a) + (1 - self.labels) * log_expit(-a), axis=-1)

    def log_joint(self, w):
        w = as_batch(w, self.dim)
        log_prior = -0.5 * np.sum((w / self.prior_std) ** 2, axis=-1) - self.dim * (0.5 * LOG_2PI + np.log(self.prior_std))
        return self.log_likelihood(w) + log_prior

    def grad_log_joint(self, w):
        w = as_batch(w, self.dim)
        resid = self.labels - expit(w @ self.features.T)
        return resid @ self.features - w / self.prior_std**2


logreg_log_joint = LogRegTarget.log_joint

DATASET_NAMES = ("iris", "boston", "cancer", "diabetes")
# rows, feature columns, kind of target column
DATASET_SHAPES = {
    "iris": (150, 4, "class3"),
    "boston": (506, 13, "continuous"),
    "cancer": (569, 30, "binary"),
    "diabetes": (442, 10, "continuous"),
}


def read_numeric_csv(path):
    if not os.path.isfile(path):
        raise FileNotFoundError(f"dataset file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path}: expected a header row and at least one data row")
    header, body = rows[0], rows[1:]
    data = np.empty((len(body), len(header)))
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise ValueError(f"{path}: row {i + 2} has {len(row)} cells, header has {len(header)}")
        for k, cell in enumerate(row):
            try:
                data[i, k] = float(cell)
            except ValueError:
                raise ValueError(f"{path}: non-numeric cell {cell!r} at row {i + 2}, column {header[k]!r}") from None
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{path}: dataset contains NaN or infinite values")
    return header, data


def binarize_target(name, y):
    """Class 0 vs rest for iris, ``y > median`` for continuous targets."""
    y = np.asarray(y, dtype=float)
    if name == "iris":
        return (y == np.min(y)).astype(float)
    uniq = np.unique(y)
    if uniq.size <= 2 and np.all(np.isin(uniq, [0.0, 1.0])):
        return y.copy()
    return (y > np.median(y)).astype(float)


def standardize(X):
    """Zero-mean, unit-variance columns; constant columns are dropped."""
    X = np.asarray(X, dtype=float)
    sd = X.std(axis=0)
    keep = sd > 1e-12
    X = X[:, keep]
    return (X - X.mean(axis=0)) / sd[keep], keep


def load_dataset(name, path, subset_n, rng, prior_std=1.0):
    """Read a CSV (header row, target in the last column) into a LogRegTarget.

    Features of the subsample are standardized, targets binarized and a
    seeded uniform subsample of ``subset_n`` rows is drawn without replacement.
    """
    header, data = read_numeric_csv(path)
    n = data.shape[0]
    if subset_n > n:
        raise ValueError(f"subset_n={subset_n} exceeds the {n} rows available in {path}")
    gen = as_rng(rng).generator()
    rows = np.sort(gen.choice(n, size=subset_n, replace=False))
    labels = binarize_target(name, data[:, -1])[rows]
    X, keep = standardize(data[rows, :-1])
    meta = {
        "dataset": name,
        "path": str(path),
        "subset_n": int(subset_n),
        "rows": rows.tolist(),
        "features": [h for h, k in zip(header[:-1], keep) if k],
        "binarization": "class0_vs_rest" if name == "iris" else "above_median",
    }
    return LogRegTarget(X, labels, prior_std, meta)


def make_synthetic_dataset(name, rng):
    """Synthetic stand-in with the same shape as the named real dataset.

    Features are correlated Gaussians; the target comes from a sparse linear
    model pushed through the same kind of column the real data has.
    """
    if name not in DATASET_SHAPES:
        raise ValueError(f"unknown dataset {name!r}; expected one of {DATASET_NAMES}")
    n, p, kind = DATASET_SHAPES[name]
    gen = as_rng(rng).generator()
    mix = gen.normal(0.0, 1.0, (p, p)) / np.sqrt(p)
    X = gen.normal(0.0, 1.0, (n, p)) @ (np.eye(p) + mix)
    beta = gen.normal(0.0, 1.0, p) * (gen.uniform(size=p) < 0.5)
    beta[0] = 2.0
    signal = X @ beta
    if kind == "continuous":
        y = signal + gen.normal(0.0, 0.5 * signal.std(), n)
    elif kind == "binary":
        y = (gen.uniform(size=n) < expit(2.0 * signal / signal.std())).astype(float)
    else:
        cuts = np.quantile(signal, [1 / 3, 2 / 3])
        y = np.digitize(signal + gen.normal(0.0, 0.2 * signal.std(), n), cuts).astype(float)
    header = [f"x{k}" for k in range(p)] + ["target"]
    return header, np.column_stack([X, y])


def write_csv(path, header, data):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in data:
            w.writerow([repr(float(v)) for v in row])


# --------------------------------------------------------------------------
# Gaussian-process hyperparameters
# --------------------------------------------------------------------------


def quasi_periodic_kernel(tau, A, f, s, exponent="squared"):
    """A * envelope(tau; s) * cos(2 pi f tau); the white-noise term is added separately.

    ``exponent="squared"`` uses exp(-tau^2 / (2 s^2)); ``"linear"`` uses
    exp(-|tau| / (2 s^2)).
    """
    if exponent == "squared":
        env = np.exp(-(tau**2) / (2 * s**2))
    elif exponent == "linear":
        env = np.exp(-np.abs(tau) / (2 * s**2))
    else:
        raise ValueError(f"unknown kernel exponent {exponent!r}")
    return A * env * np.cos(2 * np.pi * f * tau)


class CholeskyError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class GpHyperTarget(TargetModel):
    """Posterior over theta = (log A, log f, log s, log B) of a quasi-periodic GP.

    Independent N(0, 1) priors on each log-hyperparameter.
    """

    times: np.ndarray
    observations: np.ndarray
    exponent: str = "squared"
    prior_std: float = 1.0
    jitter: float = 1e-8
    dim: int = field(default=4, init=False)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        y = np.asarray(self.observations, dtype=float)
        if t.ndim != 1 or y.shape != t.shape or t.size < 2:
            raise ValueError("need at least two (time, observation) pairs")
        if np.unique(t).size != t.size:
            raise ValueError("observation times must be distinct")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "observations", y)

    def covariance(self, theta):
        theta = as_batch(theta, 4)
        A, f, s, B = np.exp(theta).T
        tau = self.times[:, None] - self.times[None, :]
        K = quasi_periodic_kernel(tau[None], A[:, None, None], f[:, None, None], s[:, None, None], self.exponent)
        K = K + (B[:, None, None] + self.jitter) * np.eye(self.times.size)
        return K

    def log_marginal_likelihood(self, theta):
        theta = as_batch(theta, 4)
        K = self.covariance(theta)
        n = self.times.size
        out = np.empty(theta.shape[0])
        L = None
        for jitter in (0.0, 1e-6, 1e-4):
            try:
                L = np.linalg.cholesky(K + jitter * np.eye(n))
                break
            except np.linalg.LinAlgError:
                L = None
        if L is None:
            # fall back to per-point factorization so one bad point names itself
            for i, Ki in enumerate(K):
                out[i] = self._single_lml(Ki)
            return out
        alpha = np.linalg.solve(L, np.broadcast_to(self.observations, (theta.shape[0], n))[..., None])[..., 0]
        logdet = 2 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
        return -0.5 * np.sum(alpha**2, axis=-1) - 0.5 * logdet - 0.5 * n * LOG_2PI

    def _single_lml(self, K):
        n = K.shape[0]
        for jitter in (0.0, 1e-6, 1e-4):
            try:
                L = np.linalg.cholesky(K + jitter * np.eye(n))
                break
            except np.linalg.LinAlgError:
                continue
        else:
            raise CholeskyError("GP covariance is not positive definite even with jitter 1e-4")
        alpha = np.linalg.solve(L, self.observations)
        return -0.5 * alpha @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * LOG_2PI

    def log_joint(self, theta):
        theta = as_batch(theta, 4)
        log_prior = -0.5 * np.sum((theta / self.prior_std) ** 2, axis=-1) - 4 * (0.5 * LOG_2PI + np.log(self.prior_std))
        return self.log_marginal_likelihood(theta) + log_prior


gp_log_joint = GpHyperTarget.log_joint


def make_synthetic_quasiperiodic(n, rng, A=1.0, f=0.5, s=2.0, B=0.1, exponent="squared"):
    """Times equally spaced on [0, 10]; observations drawn from the GP at the given hyperparameters."""
    if n < 20:
        raise ValueError("need n >= 20 observations")
    t = np.linspace(0.0, 10.0, n)
    gen = as_rng(rng).generator()
    tau = t[:, None] - t[None, :]
    K = quasi_periodic_kernel(tau, A, f, s, exponent) + (B + 1e-8) * np.eye(n)
    y = np.linalg.cholesky(K) @ gen.standard_normal(n)
    return GpHyperTarget(t, y, exponent=exponent)
