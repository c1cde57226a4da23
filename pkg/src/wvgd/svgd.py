"""Stein variational gradient descent with a Gaussian kernel (baseline)."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.distance import pdist

from .core import as_rng
from .dynamics import Trajectory, lr_schedule

BANDWIDTH_FALLBACK = 1e-3


def median_bandwidth(particles):
    """md^2 / log N with md the median pairwise distance (natural log)."""
    z = np.asarray(particles, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    n = z.shape[0]
    if n < 2:
        raise ValueError("median bandwidth needs at least two particles")
    md = np.median(pdist(z))
    if md == 0:
        return BANDWIDTH_FALLBACK
    return float(md**2 / np.log(n))


def rbf_kernel(z, bandwidth):
    """K_ij = exp(-|z_i - z_j|^2 / bw) and the gradient of K_ij in its first argument."""
    diff = z[:, None, :] - z[None, :, :]
    K = np.exp(-np.sum(diff**2, axis=-1) / bandwidth)
    grad_first = -2.0 / bandwidth * diff * K[..., None]
    return K, grad_first


def svgd_direction(z, grad_logp, bandwidth):
    """phi(z_i) = 1/N sum_j [k(z_j, z_i) grad log p(z_j) + grad_{z_j} k(z_j, z_i)]."""
    n = z.shape[0]
    if n == 1:
        return grad_logp.copy()
    K, gK = rbf_kernel(z, bandwidth)
    # gK[j, i] is the gradient in z_j of k(z_j, z_i)
    return (K.T @ grad_logp + gK.sum(axis=0)) / n


@dataclass(frozen=True)
class SvgdState:
    particles: np.ndarray
    learning_rate: float = 0.01
    bandwidth_mode: object = "adaptive_median"
    step: int = 0

    def __post_init__(self):
        z = np.array(self.particles, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        if z.shape[0] < 1 or not np.all(np.isfinite(z)):
            raise ValueError("SVGD needs at least one finite particle")
        object.__setattr__(self, "particles", z)

    def bandwidth(self):
        if self.particles.shape[0] == 1:
            return 1.0
        if self.bandwidth_mode == "adaptive_median":
            return median_bandwidth(self.particles)
        return float(self.bandwidth_mode)


def svgd_step(state: SvgdState, target, rng=None, learning_rate=None) -> SvgdState:
    lr = state.learning_rate if learning_rate is None else learning_rate
    z = state.particles
    phi = svgd_direction(z, np.asarray(target.grad_log_joint(z), dtype=float), state.bandwidth())
    new = z + lr * phi
    if not np.all(np.isfinite(new)):
        raise FloatingPointError("non-finite SVGD update")
    return replace(state, particles=new, step=state.step + 1)


def run_svgd(state: SvgdState, target, n_steps, rng=None, tau=None, decay=True, record_every=0):
    """Run SVGD with the same lr0 / (1 + t / tau) schedule as WVGD; returns (state, trajectory)."""
    traj = Trajectory()
    tau = tau or max(n_steps / 2.0, 1.0)
    lr0 = state.learning_rate
    for _ in range(n_steps):
        lr = lr_schedule(lr0, state.step, tau) if decay else lr0
        state = svgd_step(state, target, rng, lr)
        if record_every and state.step % record_every == 0:
            traj.record(state.step, state.particles, float("nan"), np.full(state.particles.shape[0], np.nan))
    return state, traj


def init_svgd(particles, learning_rate=0.01, bandwidth_mode="adaptive_median"):
    return SvgdState(np.asarray(particles, dtype=float), learning_rate, bandwidth_mode)
