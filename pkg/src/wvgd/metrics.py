"""Squared-error scoring of continuous approximations against a 1D target density."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import SquaredEuclideanCost, as_rng
from .oracle import window_for
from .tessellation import Tessellation
from .varfit import sample_component

GRID_SIZE = 2048
BANDWIDTH_BOUNDS = (1e-3, 10.0)
_GOLDEN = (np.sqrt(5) - 1) / 2


@dataclass(frozen=True)
class DensityScore:
    l2_error: float
    grid: np.ndarray


def score_grid(target, n=GRID_SIZE):
    return np.linspace(*window_for(target), n)


def l2_error(p_hat, p, grid):
    """Trapezoidal integral of (p_hat - p)^2 over the grid; arguments are arrays or callables."""
    a = p_hat(grid) if callable(p_hat) else np.asarray(p_hat, dtype=float)
    b = p(grid) if callable(p) else np.asarray(p, dtype=float)
    return float(np.trapezoid((a - b) ** 2, grid))


def refresh_normalizers(state, n, rng, cost=None):
    """Re-estimate each component's log Z_j from a fresh rejection sample of size ``n``."""
    rng = as_rng(rng)
    t = Tessellation(state.ensemble, cost or SquaredEuclideanCost())
    comps = []
    for j, c in enumerate(state.components):
        s = sample_component(c, t, n, rng.spawn(j))
        comps.append(replace(c, log_Z=s.log_Z, log_Z_se=s.log_Z_se))
    return replace(state, components=tuple(comps))


def wvgd_density(state, weights, z, cost=None):
    """sum_j beta_j I_j(z) q(z; theta_j) / Z_j evaluated at scalar or 1D array ``z``."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    pts = z.reshape(-1, state.ensemble.dim)
    beta = np.asarray(getattr(weights, "weights", weights), dtype=float)
    cells = Tessellation(state.ensemble, cost or SquaredEuclideanCost()).assign(pts)
    out = np.zeros(pts.shape[0])
    for j, c in enumerate(state.components):
        m = cells == j
        if np.any(m):
            out[m] = beta[j] * np.exp(c.base_log_density(pts[m]) - c.log_Z)
    return out


def kde_density(particles, bandwidth, z):
    """Gaussian KDE (1/N) sum_i N(z; z_i, bandwidth^2)."""
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    x = np.asarray(particles, dtype=float).ravel()
    z = np.atleast_1d(np.asarray(z, dtype=float))
    u = (z[:, None] - x[None, :]) / bandwidth
    return np.exp(-0.5 * u**2).sum(axis=1) / (x.size * bandwidth * np.sqrt(2 * np.pi))


def fit_kde_bandwidth(particles, true_density, grid, bounds=BANDWIDTH_BOUNDS, tol=1e-4):
    """Bandwidth minimizing the KDE's squared error against the true density.

    Golden-section search over log-bandwidth within ``bounds``; stops when
    the bracket is narrower than ``tol`` relative to the bandwidth.
    """
    x = np.asarray(particles, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("need at least two particles")
    if np.ptp(x) == 0:
        return bounds[0]
    p = true_density(grid) if callable(true_density) else np.asarray(true_density, dtype=float)

    def err(log_bw):
        return l2_error(kde_density(x, np.exp(log_bw), grid), p, grid)

    a, b = np.log(bounds[0]), np.log(bounds[1])
    c, d = b - _GOLDEN * (b - a), a + _GOLDEN * (b - a)
    fc, fd = err(c), err(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = err(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = err(d)
    best = min((fc, c), (fd, d), (err(np.log(bounds[0])), np.log(bounds[0])), (err(np.log(bounds[1])), np.log(bounds[1])))
    return float(np.exp(best[1]))


def score_wvgd(state, weights, target, grid=None):
    grid = score_grid(target) if grid is None else grid
    return DensityScore(l2_error(wvgd_density(state, weights, grid), target.density, grid), grid)


def score_kde(particles, target, grid=None):
    """Fit the KDE bandwidth on the true density, then score. Returns (score, bandwidth)."""
    grid = score_grid(target) if grid is None else grid
    bw = fit_kde_bandwidth(particles, target.density, grid)
    return DensityScore(l2_error(kde_density(particles, bw, grid), target.density, grid), grid), bw
