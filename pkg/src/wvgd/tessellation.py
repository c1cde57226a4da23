"""Cells of minimal transport cost, restricted densities and cell-mass estimates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import ParticleEnsemble, SquaredEuclideanCost, as_batch, as_point, as_rng


class StarvedCellError(RuntimeError):
    def __init__(self, index, message=None):
        self.index = index
        super().__init__(message or f"cell {index} received no usable samples")


@dataclass(frozen=True)
class Tessellation:
    """Partition of latent space into cells L_j = {z : c(z_j, z) < c(z_k, z) for all k}.

    Ties go to the lowest particle index.
    """

    ensemble: ParticleEnsemble
    cost: object = SquaredEuclideanCost()

    @classmethod
    def from_particles(cls, particles, cost=None):
        return cls(ParticleEnsemble(particles), cost or SquaredEuclideanCost())

    @property
    def particles(self):
        return self.ensemble.particles

    @property
    def n(self):
        return self.ensemble.n

    @property
    def dim(self):
        return self.ensemble.dim

    def cost_matrix(self, z):
        z = as_batch(z, self.dim)
        return self.cost.evaluate(self.particles[None, :, :], z[:, None, :])

    def assign(self, z):
        """Cell index of each row of ``z``."""
        if self.n == 1:
            return np.zeros(as_batch(z, self.dim).shape[0], dtype=int)
        return np.argmin(self.cost_matrix(z), axis=1)

    def indicator(self, j, z):
        return self.assign(z) == j


def assign_cell(t: Tessellation, z) -> int:
    if t.n < 1:
        raise ValueError("empty ensemble")
    z = as_point(z, t.dim)
    return int(t.assign(z[None, :])[0])


def restricted_log_density(t: Tessellation, target, j, z):
    """log p(z, x) on cell j and -inf elsewhere (not divided by the cell mass)."""
    if not 0 <= j < t.n:
        raise IndexError(f"cell index {j} out of range for {t.n} particles")
    z = as_batch(z, t.dim)
    lj = np.asarray(target.log_joint(z), dtype=float)
    return np.where(t.assign(z) == j, lj, -np.inf)


@dataclass(frozen=True)
class WeightEstimate:
    weights: np.ndarray
    ess: np.ndarray
    n_samples: int
    std_errors: np.ndarray
    log_masses: np.ndarray

    @property
    def log_evidence(self):
        """Importance-sampling estimate of log of the total mass sum_j int_{L_j} p."""
        return float(logsumexp(self.log_masses))


def estimate_weights(t: Tessellation, target, proposals, n_samples, rng) -> WeightEstimate:
    """Cell masses beta_j proportional to int_{L_j} p(z, x) dz by importance sampling.

    Each cell's mass is Z_j * E_{q_j}[p / q] where q_j is the proposal q
    restricted to L_j and Z_j its acceptance rate. The estimates are then
    normalized across cells. Cell j draws from substream ``rng.spawn(j)``.
    """
    from .varfit import batch_base_log_density, batch_log_joint, sample_components

    if n_samples < 100:
        raise ValueError("n_samples must be at least 100")
    N = t.n
    if N == 1:
        return WeightEstimate(np.ones(1), np.array([float(n_samples)]), int(n_samples), np.zeros(1), np.zeros(1))
    if len(proposals) != N:
        raise ValueError("need one proposal per cell")
    for j, comp in enumerate(proposals):
        if comp.cell_index != j:
            raise ValueError(f"proposal {j} is attached to cell {comp.cell_index}")
    rng = as_rng(rng)
    batch = sample_components(list(proposals), t, n_samples, [rng.spawn(j) for j in range(N)])
    log_w = np.where(batch.mask, batch_log_joint(target, batch) - batch_base_log_density(proposals, batch), -np.inf)
    return weights_from_log_importance(log_w, batch)


def weights_from_log_importance(log_w, batch):
    """Normalize per-cell importance estimates Z_j * mean(w_j) into cell weights with delta-method SEs."""
    N = log_w.shape[0]
    finite = np.isfinite(log_w)
    for j in range(N):
        if not np.any(finite[j]):
            raise StarvedCellError(j, f"all importance weights are zero in cell {j}")
    shift = np.max(np.where(finite, log_w, -np.inf), axis=1)
    w = np.where(finite, np.exp(log_w - shift[:, None]), 0.0)
    cnt = batch.mask.sum(axis=1)
    m = w.sum(axis=1) / cnt
    acc = batch.acceptance_rate
    log_mass = np.log(acc) + shift + np.log(m)
    var_w = np.where(batch.mask, (w - m[:, None]) ** 2, 0.0).sum(axis=1) / np.maximum(cnt - 1, 1)
    # relative variances of the weight mean and of the acceptance rate add for the product
    rel_var = var_w / (cnt * m**2) + (1 - acc) / (acc * batch.n_proposed)
    ess = w.sum(axis=1) ** 2 / np.sum(w**2, axis=1)
    beta = np.exp(log_mass - logsumexp(log_mass))
    beta = beta / beta.sum()
    # delta method for beta_j = P_j / sum_k P_k with independent P_k
    var_p = rel_var * beta**2
    se = np.empty(N)
    for j in range(N):
        d = -beta[j] * np.ones(N)
        d[j] = 1 - beta[j]
        se[j] = np.sqrt(np.sum(d**2 * var_p))
    return WeightEstimate(beta, ess, int(batch.mask.shape[1]), se, log_mass)
