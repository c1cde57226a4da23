"""Diagonal Gaussians truncated to a tessellation cell.

Sampling is by rejection: draw from the untruncated Gaussian and keep the
points that land in the component's cell. The empirical acceptance rate is
the estimate of the cell normalizer Z_j.

Gradients of expectations under a truncated component have to account for
the cell boundary. Treating the indicator as locally constant (plain
pathwise gradients) drops that boundary term and is only unbiased when the
cell is the whole space; the default ``"auto"`` estimator therefore uses
pathwise gradients for a single cell and score-function covariances
otherwise.

All estimators work on batches of components (one row per component, one
RNG substream per component); the single-component functions are thin
views of the batched kernels.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import as_point, as_rng
from .tessellation import StarvedCellError

LOG_STD_BOUND = 13.8  # exp(13.8) ~ 1e6
LOG_2PI = np.log(2 * np.pi)


class StarvedComponentError(StarvedCellError):
    def __init__(self, index, accepted, proposed):
        self.accepted = accepted
        self.proposed = proposed
        super().__init__(index, f"component starved on its cell {index}: {accepted} of {proposed} proposals accepted")


@dataclass(frozen=True)
class VariationalComponent:
    mean: np.ndarray
    log_std: np.ndarray
    cell_index: int
    log_Z: float = 0.0
    log_Z_se: float = 0.0
    ess: float = float("nan")

    def __post_init__(self):
        m = np.array(np.atleast_1d(self.mean), dtype=float)
        ls = np.clip(np.atleast_1d(np.asarray(self.log_std, dtype=float)), -LOG_STD_BOUND, LOG_STD_BOUND)
        if ls.shape == (1,) and m.shape[0] > 1:
            ls = np.full_like(m, ls[0])
        if m.ndim != 1 or m.shape != ls.shape:
            raise ValueError("mean and log_std must be vectors of the same length")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(ls))):
            raise ValueError("component parameters must be finite")
        if self.log_Z > 1e-12:
            raise ValueError("log_Z must be <= 0")
        m.setflags(write=False)
        ls.setflags(write=False)
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "log_std", ls)

    @classmethod
    def at_particle(cls, position, cell_index, log_std=0.0):
        position = as_point(position)
        return cls(position, np.full_like(position, log_std), cell_index)

    @property
    def dim(self):
        return self.mean.shape[0]

    @property
    def std(self):
        return np.exp(self.log_std)

    def base_log_density(self, z):
        """log q(z; theta) of the untruncated Gaussian."""
        eps = (np.asarray(z, dtype=float) - self.mean) / self.std
        return -0.5 * np.sum(eps**2, axis=-1) - np.sum(self.log_std) - 0.5 * self.dim * LOG_2PI

    def log_density(self, z):
        """log q_j(z) on the cell, using the stored normalizer estimate."""
        return self.base_log_density(z) - self.log_Z

    def score(self, z):
        """Gradient of log q(z; theta) w.r.t. (mean, log_std), stacked as ``(..., 2d)``."""
        eps = (np.asarray(z, dtype=float) - self.mean) / self.std
        return np.concatenate([eps / self.std, eps**2 - 1.0], axis=-1)

    def to_dict(self):
        return {
            "cell_index": int(self.cell_index),
            "mean": self.mean.tolist(),
            "log_std": self.log_std.tolist(),
            "log_Z": float(self.log_Z),
            "ess": None if not np.isfinite(self.ess) else float(self.ess),
        }

    @classmethod
    def from_dict(cls, d):
        ess = d.get("ess")
        return cls(
            np.array(d["mean"], dtype=float),
            np.array(d["log_std"], dtype=float),
            int(d["cell_index"]),
            float(d.get("log_Z", 0.0)),
            0.0,
            float("nan") if ess is None else float(ess),
        )


# --------------------------------------------------------------------------
# Rejection sampling
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ComponentSample:
    points: np.ndarray
    eps: np.ndarray
    acceptance_rate: float
    n_proposed: int
    n_accepted: int

    @property
    def log_Z(self):
        return float(np.log(self.acceptance_rate))

    @property
    def log_Z_se(self):
        a = self.acceptance_rate
        return float(np.sqrt((1 - a) / (a * self.n_proposed)))


@dataclass(frozen=True)
class BatchSample:
    """Accepted draws for K components, padded to ``n`` rows with ``mask`` marking real ones."""

    points: np.ndarray
    eps: np.ndarray
    mask: np.ndarray
    n_accepted: np.ndarray
    n_proposed: np.ndarray
    starved: np.ndarray

    @property
    def acceptance_rate(self):
        return self.n_accepted / self.n_proposed

    @property
    def log_Z(self):
        with np.errstate(divide="ignore"):
            return np.log(self.acceptance_rate)

    @property
    def log_Z_se(self):
        a = np.maximum(self.acceptance_rate, 1e-300)
        return np.sqrt((1 - a) / (a * self.n_proposed))

    @property
    def counts(self):
        return self.mask.sum(axis=1)

    def component(self, k):
        m = self.mask[k]
        return ComponentSample(self.points[k][m], self.eps[k][m], float(self.acceptance_rate[k]),
                               int(self.n_proposed[k]), int(self.n_accepted[k]))


def sample_components(components, t, n, rngs, max_factor=50, raise_on_starve=True) -> BatchSample:
    """Rejection-sample up to ``n`` points for each component from its own RNG substream.

    Component k is starved when fewer than max(1, n/10) of its
    ``max_factor * n`` proposals land in its cell.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    K = len(components)
    d = components[0].dim
    means = np.stack([c.mean for c in components])
    stds = np.stack([c.std for c in components])
    cells = np.array([c.cell_index for c in components])
    gens = [as_rng(r).generator() for r in rngs]
    eps_out = np.zeros((K, n, d))
    mask = np.zeros((K, n), dtype=bool)
    if t.n == 1:
        for k in range(K):
            eps_out[k] = gens[k].standard_normal((n, d))
        mask[:] = True
        full = np.full(K, n)
        return BatchSample(means[:, None, :] + stds[:, None, :] * eps_out, eps_out, mask, full, full, np.zeros(K, bool))

    budget = max_factor * n
    accepted = np.zeros(K, dtype=int)
    proposed = np.zeros(K, dtype=int)
    active = np.ones(K, dtype=bool)
    while np.any(active):
        idx = np.flatnonzero(active)
        draws, sizes = [], []
        for k in idx:
            rate = max(accepted[k] / proposed[k], 1e-3) if proposed[k] else 1.0
            size = int(np.ceil(1.1 * (n - accepted[k]) / max(rate, 0.02)))
            size = min(max(size, n // 4 + 1), budget - proposed[k])
            draws.append(gens[k].standard_normal((size, d)))
            sizes.append(size)
        eps = np.concatenate(draws)
        owner = np.repeat(idx, sizes)
        ok = t.assign(means[owner] + stds[owner] * eps) == cells[owner]
        start = 0
        for k, size in zip(idx, sizes):
            sl = slice(start, start + size)
            start += size
            hit = eps[sl][ok[sl]]
            take = min(hit.shape[0], n - min(accepted[k], n))
            if take > 0:
                lo = min(accepted[k], n)
                eps_out[k, lo:lo + take] = hit[:take]
                mask[k, lo:lo + take] = True
            accepted[k] += hit.shape[0]
            proposed[k] += size
            if accepted[k] >= n or proposed[k] >= budget:
                active[k] = False
    starved = accepted < max(1.0, n / 10)
    if raise_on_starve and np.any(starved):
        k = int(np.flatnonzero(starved)[0])
        raise StarvedComponentError(int(cells[k]), int(accepted[k]), int(proposed[k]))
    points = means[:, None, :] + stds[:, None, :] * eps_out
    return BatchSample(points, eps_out, mask, accepted, proposed, starved)


def sample_component(c: VariationalComponent, t, n, rng, max_factor=50) -> ComponentSample:
    """Rejection-sample ``n`` points of q_j; the acceptance rate estimates Z_j."""
    return sample_components([c], t, n, [rng], max_factor).component(0)


# --------------------------------------------------------------------------
# Batched estimator kernels
# --------------------------------------------------------------------------


def _params(components):
    means = np.stack([c.mean for c in components])
    log_stds = np.stack([c.log_std for c in components])
    return means, log_stds


def batch_scores(components, batch):
    """Scores (K, n, 2d) of the untruncated Gaussians at the sampled points."""
    _, log_stds = _params(components)
    stds = np.exp(log_stds)[:, None, :]
    eps = batch.eps
    return np.concatenate([eps / stds, eps**2 - 1.0], axis=-1)


def batch_base_log_density(components, batch):
    _, log_stds = _params(components)
    d = log_stds.shape[1]
    return -0.5 * np.sum(batch.eps**2, axis=-1) - log_stds.sum(axis=1)[:, None] - 0.5 * d * LOG_2PI


def batch_log_joint(target, batch):
    K, n, d = batch.points.shape
    out = np.full((K, n), -np.inf)
    flat = batch.points[batch.mask]
    out[batch.mask] = np.asarray(target.log_joint(flat), dtype=float)
    return out


def _masked_mean_se(x, mask):
    """Per-row mean and standard error of x (K, n, p) over rows where mask is set."""
    m = mask[..., None].astype(float)
    cnt = mask.sum(axis=1)[:, None].astype(float)
    mean = (x * m).sum(axis=1) / cnt
    var = (((x - mean[:, None, :]) ** 2) * m).sum(axis=1) / np.maximum(cnt - 1, 1)
    return mean, np.sqrt(var / cnt)


def _masked_cov(f, s, mask):
    """Unbiased per-row covariance of scalar f (K, n) with each column of s (K, n, p), with SEs."""
    m = mask.astype(float)
    cnt = mask.sum(axis=1).astype(float)
    fbar = (f * m).sum(axis=1) / cnt
    sbar = (s * m[..., None]).sum(axis=1) / cnt[:, None]
    fc = np.where(mask, f - fbar[:, None], 0.0)
    prod = fc[..., None] * (s - sbar[:, None, :])
    est = prod.sum(axis=1) / np.maximum(cnt - 1, 1)[:, None]
    pm = (prod * m[..., None]).sum(axis=1) / cnt[:, None]
    pv = (((prod - pm[:, None, :]) ** 2) * m[..., None]).sum(axis=1) / np.maximum(cnt - 1, 1)[:, None]
    return est, np.sqrt(pv / cnt[:, None])


def _pick_estimator(estimator, t):
    if estimator == "auto":
        return "pathwise" if t.n == 1 else "score"
    if estimator not in ("score", "pathwise"):
        raise ValueError(f"unknown gradient estimator {estimator!r}")
    return estimator


def _score_mean(scores, mask, t):
    """Term B = E_{q_j}[grad log q] = grad log Z_j, exactly zero on a single cell."""
    if t.n == 1:
        z = np.zeros((scores.shape[0], scores.shape[2]))
        return z, z.copy()
    return _masked_mean_se(scores, mask)


def batch_entropy_gradient(components, t, batch, estimator="score"):
    """Entropy gradients for every component; returns (grad, se, A, B) arrays of shape (K, 2d)."""
    estimator = _pick_estimator(estimator, t)
    d = components[0].dim
    scores = batch_scores(components, batch)
    B, B_se = _score_mean(scores, batch.mask, t)
    if estimator == "score":
        cov, cov_se = _masked_cov(batch_base_log_density(components, batch), scores, batch.mask)
        return -cov, cov_se, B + cov, B
    A = np.tile(np.concatenate([np.zeros(d), -np.ones(d)]), (len(components), 1))
    return -A + B, B_se, A, B


def batch_kl_gradient(components, t, target, batch, estimator="auto", log_joint=None):
    """KL(q_j || p_j) gradients for every component; returns (grad, se, terms) with (K, 2d) arrays."""
    estimator = _pick_estimator(estimator, t)
    d = components[0].dim
    log_p = batch_log_joint(target, batch) if log_joint is None else log_joint
    scores = batch_scores(components, batch)
    if estimator == "score":
        log_q = batch_base_log_density(components, batch)
        f = np.where(batch.mask, log_q - log_p, 0.0)
        g, se = _masked_cov(f, scores, batch.mask)
        g_logp, _ = _masked_cov(np.where(batch.mask, log_p, 0.0), scores, batch.mask)
        terms = {"grad_expected_log_joint": g_logp, "entropy_gradient": -g_logp - g}
        return g, se, terms
    K, n, _ = batch.points.shape
    grad_p = np.zeros((K, n, d))
    grad_p[batch.mask] = np.asarray(target.grad_log_joint(batch.points[batch.mask]), dtype=float)
    stds = np.exp(_params(components)[1])[:, None, :]
    per = np.concatenate([grad_p, grad_p * stds * batch.eps], axis=-1)
    g_logp, se = _masked_mean_se(per, batch.mask)
    B, B_se = _score_mean(scores, batch.mask, t)
    A = np.tile(np.concatenate([np.zeros(d), -np.ones(d)]), (K, 1))
    g_ent = -A + B
    return -g_logp - g_ent, np.sqrt(se**2 + B_se**2), {"grad_expected_log_joint": g_logp, "entropy_gradient": g_ent}


# --------------------------------------------------------------------------
# Single-component API
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamGradient:
    """Gradient w.r.t. (mean, log_std) with per-coordinate Monte Carlo standard errors."""

    mean: np.ndarray
    log_std: np.ndarray
    se_mean: np.ndarray
    se_log_std: np.ndarray
    terms: dict = None
    sample: ComponentSample = None

    @property
    def vector(self):
        return np.concatenate([self.mean, self.log_std])

    @property
    def se(self):
        return np.concatenate([self.se_mean, self.se_log_std])

    @property
    def norm(self):
        return float(np.linalg.norm(self.vector))

    @classmethod
    def from_vectors(cls, g, se, d, terms=None, sample=None):
        return cls(g[:d], g[d:], se[:d], se[d:], terms or {}, sample)


def _single_batch(c, t, n, rng):
    if n < 2:
        raise ValueError("need n >= 2 samples")
    b = sample_components([c], t, n, [rng])
    if b.counts[0] < 2:
        raise StarvedComponentError(c.cell_index, int(b.n_accepted[0]), int(b.n_proposed[0]))
    return b


def entropy_gradient(c: VariationalComponent, t, n, rng, estimator="score") -> ParamGradient:
    """Gradient of S[q_j] = -E_{q_j}[log q] + log Z_j w.r.t. (mean, log_std).

    Assembled as -A + B with A the gradient of E_{q_j}[log q(z; theta)] and
    B = E_{q_j}[grad log q] the gradient of log Z_j. With the score
    estimator A = B + Cov(log q, score), so the entropy gradient is
    -Cov(log q, score). With the pathwise estimator A is the reparameterized
    derivative, which for a Gaussian is (0, -1) exactly.
    """
    b = _single_batch(c, t, n, rng)
    g, se, A, B = batch_entropy_gradient([c], t, b, estimator)
    return ParamGradient.from_vectors(g[0], se[0], c.dim, {"A": A[0], "B": B[0]}, b.component(0))


def kl_gradient(c: VariationalComponent, t, target, n, rng, estimator="auto") -> ParamGradient:
    """Gradient of KL(q_j || p_j) w.r.t. (mean, log_std).

    Decomposed as -grad E_{q_j}[log p(z, x)] - grad S[q_j]; the constants
    log beta_j and log Z_j enter only through their gradients.
    """
    b = _single_batch(c, t, n, rng)
    g, se, terms = batch_kl_gradient([c], t, target, b, estimator)
    return ParamGradient.from_vectors(g[0], se[0], c.dim, {k: v[0] for k, v in terms.items()}, b.component(0))


def step_component(c: VariationalComponent, grad, eps, precondition=False, sample=None) -> VariationalComponent:
    """One descent step on (mean, log_std).

    With ``precondition=True`` the step uses the Gaussian Fisher metric: the
    mean gradient is scaled by std^2 and the log_std gradient by 1/2.
    """
    if eps <= 0:
        raise ValueError("step size must be positive")
    if isinstance(grad, ParamGradient):
        g_mean, g_ls = grad.mean, grad.log_std
        sample = sample or grad.sample
    else:
        g_mean, g_ls = np.split(np.asarray(grad, dtype=float), 2)
    if precondition:
        g_mean = g_mean * c.std**2
        g_ls = 0.5 * g_ls
    mean = c.mean - eps * g_mean
    log_std = np.clip(c.log_std - eps * g_ls, -LOG_STD_BOUND, LOG_STD_BOUND)
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(log_std))):
        raise FloatingPointError(f"non-finite parameters for component {c.cell_index}")
    log_Z, log_Z_se = c.log_Z, c.log_Z_se
    if sample is not None:
        log_Z, log_Z_se = sample.log_Z, sample.log_Z_se
    return replace(c, mean=mean, log_std=log_std, log_Z=min(log_Z, 0.0), log_Z_se=log_Z_se)


# --------------------------------------------------------------------------
# Evidence bounds
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ElboEstimate:
    value: float
    std_error: float
    n_samples: int
    acceptance_rate: float


def _elbo_from_sample(c, s, target, j, weights):
    beta = np.asarray(getattr(weights, "weights", weights), dtype=float)
    beta_se = getattr(weights, "std_errors", None)
    beta_se = np.zeros_like(beta) if beta_se is None else np.asarray(beta_se, dtype=float)
    f = np.asarray(target.log_joint(s.points), dtype=float) - c.base_log_density(s.points)
    m = s.points.shape[0]
    value = f.mean() + s.log_Z - np.log(beta[j])
    var = (f.var(ddof=1) / m if m > 1 else 0.0) + s.log_Z_se**2 + (beta_se[j] / beta[j]) ** 2
    return ElboEstimate(float(value), float(np.sqrt(var)), int(m), float(s.acceptance_rate))


def elbo_component(c: VariationalComponent, t, target, j, n, rng, weights) -> ElboEstimate:
    """E_{q_j}[log p_j(z, x) - log q_j(z)] with log p_j = log p - log beta_j on the cell.

    ``weights`` is a WeightEstimate (or plain vector of cell masses).
    """
    if c.cell_index != j:
        raise ValueError(f"component {c.cell_index} scored against cell {j}")
    return _elbo_from_sample(c, sample_component(c, t, n, rng), target, j, weights)


@dataclass(frozen=True)
class PelboEstimate:
    value: float
    std_error: float
    elbos: tuple
    weights: np.ndarray


def pelbo(state, t, target, weights, n, rng) -> PelboEstimate:
    """sum_j beta_j ELBO(q_j, p_j) with errors added in quadrature."""
    rng = as_rng(rng)
    beta = np.asarray(getattr(weights, "weights", weights), dtype=float)
    elbos = tuple(elbo_component(c, t, target, j, n, rng.spawn(j), weights) for j, c in enumerate(state.components))
    value = float(sum(b * e.value for b, e in zip(beta, elbos)))
    se = float(np.sqrt(sum((b * e.std_error) ** 2 for b, e in zip(beta, elbos))))
    return PelboEstimate(value, se, elbos, beta)


def gaussian_elbo(mean, log_std, target, n, rng):
    """Plain ELBO of an untruncated diagonal Gaussian: closed-form entropy plus MC log joint."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    log_std = np.broadcast_to(np.asarray(log_std, dtype=float), mean.shape)
    gen = as_rng(rng).generator()
    z = mean + np.exp(log_std) * gen.standard_normal((n, mean.size))
    lp = np.asarray(target.log_joint(z), dtype=float)
    entropy = np.sum(log_std) + 0.5 * mean.size * (1 + LOG_2PI)
    return ElboEstimate(float(lp.mean() + entropy), float(lp.std(ddof=1) / np.sqrt(n)), n, 1.0)
