"""Shared domain types: points, costs, targets, particle ensembles and seeded RNG."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    pass


def as_point(z, dim=None):
    """Validate a single point and return it as a 1D float array."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.ndim != 1:
        raise DimensionError(f"expected a 1D point, got shape {z.shape}")
    if dim is not None and z.shape[0] != dim:
        raise DimensionError(f"expected dimension {dim}, got {z.shape[0]}")
    if not np.all(np.isfinite(z)):
        raise ValueError(f"point has non-finite coordinates: {z}")
    return z


def as_batch(z, dim):
    """Return ``z`` as an ``(n, dim)`` array; a single point becomes ``(1, dim)``."""
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z.reshape(1, -1) if dim != 1 or z.shape[0] == 1 else z.reshape(-1, 1)
    if z.shape[-1] != dim:
        raise DimensionError(f"expected trailing dimension {dim}, got {z.shape}")
    return z


# --------------------------------------------------------------------------
# Random numbers
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RngStream:
    """Counter-based (Philox) random stream identified by a seed and a key path.

    Children derived with :meth:`spawn` are independent of each other and of
    the order in which they are created, so per-particle draws are
    reproducible regardless of scheduling.
    """

    seed: int
    key: tuple = ()

    def spawn(self, *keys) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(int(k) % 2**63 for k in keys))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed) & (2**64 - 1), spawn_key=self.key)
        return np.random.Generator(np.random.Philox(ss))


def as_rng(rng) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    if rng is None:
        return RngStream(0)
    return RngStream(int(rng))


# --------------------------------------------------------------------------
# Costs
# --------------------------------------------------------------------------


class CostFunction:
    """Transport cost c(z, z') with its gradient in the first argument.

    Both methods broadcast over leading axes; the last axis is the latent
    dimension.
    """

    def evaluate(self, z, zp):
        raise NotImplementedError

    def grad_first(self, z, zp):
        raise NotImplementedError


@dataclass(frozen=True)
class SquaredEuclideanCost(CostFunction):
    scale: float = 1.0

    def _check(self, z, zp):
        z = np.asarray(z, dtype=float)
        zp = np.asarray(zp, dtype=float)
        if z.shape[-1:] != zp.shape[-1:]:
            raise DimensionError(f"cost arguments differ in dimension: {z.shape} vs {zp.shape}")
        return z, zp

    def evaluate(self, z, zp):
        z, zp = self._check(z, zp)
        return self.scale * np.sum((z - zp) ** 2, axis=-1)

    def grad_first(self, z, zp):
        z, zp = self._check(z, zp)
        return 2.0 * self.scale * (z - zp)


def squared_euclidean_cost() -> SquaredEuclideanCost:
    return SquaredEuclideanCost()


# --------------------------------------------------------------------------
# Targets
# --------------------------------------------------------------------------


class TargetModel:
    """Unnormalized log posterior log p(z, x).

    Subclasses implement :meth:`log_joint` for a batch ``(n, dim)`` and may
    override :meth:`grad_log_joint`; the default falls back to central
    finite differences.
    """

    dim: int

    def log_joint(self, z):
        raise NotImplementedError

    def grad_log_joint(self, z):
        z = as_batch(z, self.dim)
        return batch_finite_difference_gradient(self.log_joint, z, 1e-5)

    def __call__(self, z):
        return self.log_joint(z)


def finite_difference_gradient(f, z, h=1e-5):
    """Central-difference gradient of a scalar function at a single point."""
    if h <= 0:
        raise ValueError("step h must be positive")
    z = as_point(z)
    grad = np.empty_like(z)
    for k in range(z.shape[0]):
        e = np.zeros_like(z)
        e[k] = h
        fp, fm = float(np.squeeze(f(z + e))), float(np.squeeze(f(z - e)))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite function value near {z} along coordinate {k}")
        grad[k] = (fp - fm) / (2 * h)
    return grad


def batch_finite_difference_gradient(f, z, h=1e-5):
    """Central differences of a batched function ``f: (n, d) -> (n,)``."""
    z = np.asarray(z, dtype=float)
    n, d = z.shape
    steps = np.eye(d) * h
    shifted = np.concatenate([z[None, :, :] + steps[:, None, :], z[None, :, :] - steps[:, None, :]])
    vals = np.asarray(f(shifted.reshape(-1, d)), dtype=float).reshape(2, d, n)
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite function value in finite-difference stencil")
    return ((vals[0] - vals[1]) / (2 * h)).T


# --------------------------------------------------------------------------
# Particles
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ParticleEnsemble:
    particles: np.ndarray
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        z = np.array(self.particles, dtype=float, copy=True)
        if z.ndim == 1:
            z = z.reshape(-1, 1)
        if z.ndim != 2 or z.shape[0] < 1:
            raise ValueError("ensemble needs at least one particle")
        if not np.all(np.isfinite(z)):
            raise ValueError("particle positions must be finite")
        w = np.full(z.shape[0], 1.0 / z.shape[0]) if self.weights is None else np.array(self.weights, dtype=float)
        if w.shape != (z.shape[0],) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be a nonnegative vector summing to 1")
        z.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "particles", z)
        object.__setattr__(self, "weights", w)

    @property
    def n(self):
        return self.particles.shape[0]

    @property
    def dim(self):
        return self.particles.shape[1]

    def min_separation(self):
        if self.n < 2:
            return np.inf
        diff = self.particles[:, None, :] - self.particles[None, :, :]
        dist = np.sqrt(np.sum(diff**2, axis=-1))
        return dist[np.triu_indices(self.n, 1)].min()

    def with_weights(self, weights):
        return ParticleEnsemble(self.particles, weights)
