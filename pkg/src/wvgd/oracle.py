"""Brute-force 1D ground truth by composite Gauss-Legendre quadrature.

Everything here is independent of the Monte Carlo machinery: cell masses,
the optimal-transport loss, Lloyd quantizers, truncated Gaussian moments and
conjugate evidence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from .core import SquaredEuclideanCost, RngStream

_GL_ORDER = 16


@dataclass(frozen=True)
class Quadrature1D:
    """Composite Gauss-Legendre rule on ``[lower, upper]``.

    Sub-intervals are split into panels of width at most
    ``(upper - lower) / n_nodes * _GL_ORDER`` so a given ``n_nodes`` gives a
    uniform node density over the window.
    """

    lower: float
    upper: float
    n_nodes: int = 8192

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError("quadrature window needs lower < upper")
        if self.n_nodes < 64:
            raise ValueError("n_nodes must be at least 64")

    @property
    def panel_width(self):
        return (self.upper - self.lower) * _GL_ORDER / self.n_nodes

    def nodes(self, a, b):
        """Nodes and weights on ``[a, b]`` clipped to the window."""
        a, b = max(a, self.lower), min(b, self.upper)
        if not a < b:
            return np.empty(0), np.empty(0)
        n_panels = max(1, int(np.ceil((b - a) / self.panel_width)))
        x, w = leggauss(_GL_ORDER)
        edges = np.linspace(a, b, n_panels + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
        weights = (half[:, None] * w[None, :]).ravel()
        return nodes, weights

    def integrate(self, f, a=-np.inf, b=np.inf):
        z, w = self.nodes(a, b)
        if z.size == 0:
            return 0.0
        return float(np.dot(w, f(z)))

    def integrate_checked(self, f, a=-np.inf, b=np.inf, tol=1e-8):
        """Integral plus a flag telling whether node doubling moved it by < tol."""
        coarse = self.integrate(f, a, b)
        fine = Quadrature1D(self.lower, self.upper, 2 * self.n_nodes).integrate(f, a, b)
        return fine, abs(fine - coarse) < tol


def window_for(target, width=8.0):
    """Integration window ``[mu_min - width*sd_max, mu_max + width*sd_max]``."""
    locs = np.atleast_1d(target.locations)
    scales = np.atleast_1d(target.scales)
    return float(locs.min() - width * scales.max()), float(locs.max() + width * scales.max())


def default_quadrature(target, n_nodes=8192, width=8.0):
    return Quadrature1D(*window_for(target, width), n_nodes=n_nodes)


def _check_sorted(particles):
    z = np.asarray(particles, dtype=float).ravel()
    if np.any(np.diff(z) <= 0):
        raise ValueError("particles must be sorted and distinct")
    return z


def cell_boundaries(particles):
    """Cell edges of sorted 1D particles under squared-Euclidean cost."""
    z = _check_sorted(particles)
    mids = 0.5 * (z[1:] + z[:-1])
    return np.concatenate([[-np.inf], mids, [np.inf]])


class PanelMoments:
    """Cumulative zeroth, first and second moments of a density over the panels of a rule.

    Integrals over an arbitrary [a, b] inside the window cost two partial
    panels plus a table lookup, which keeps Lloyd iterations cheap.
    """

    def __init__(self, density, quad):
        self.density = density
        self.quad = quad
        n_panels = int(np.ceil((quad.upper - quad.lower) / quad.panel_width))
        self.edges = np.linspace(quad.lower, quad.upper, n_panels + 1)
        x, w = leggauss(_GL_ORDER)
        self._x, self._w = x, w
        half = 0.5 * np.diff(self.edges)
        mid = 0.5 * (self.edges[1:] + self.edges[:-1])
        z = mid[:, None] + half[:, None] * x[None, :]
        pw = density(z.ravel()).reshape(z.shape) * (half[:, None] * w[None, :])
        per_panel = np.stack([pw.sum(1), (pw * z).sum(1), (pw * z * z).sum(1)], axis=1)
        self.cum = np.vstack([np.zeros(3), np.cumsum(per_panel, axis=0)])

    def _partial(self, a, b):
        if not a < b:
            return np.zeros(3)
        half, mid = 0.5 * (b - a), 0.5 * (a + b)
        z = mid + half * self._x
        pw = self.density(z) * half * self._w
        return np.array([pw.sum(), (pw * z).sum(), (pw * z * z).sum()])

    def moments(self, a, b):
        """(int p, int z p, int z^2 p) over [a, b] clipped to the window."""
        a, b = max(a, self.quad.lower), min(b, self.quad.upper)
        if not a < b:
            return np.zeros(3)
        ia = int(np.searchsorted(self.edges, a, side="left"))
        ib = int(np.searchsorted(self.edges, b, side="right")) - 1
        if ia > ib:
            return self._partial(a, b)
        inner = self.cum[ib] - self.cum[ia]
        return inner + self._partial(a, self.edges[ia]) + self._partial(self.edges[ib], b)

    def cell_table(self, particles):
        z = _check_sorted(particles)
        edges = cell_boundaries(z)
        return np.array([self.moments(a, b) for a, b in zip(edges[:-1], edges[1:])])

    def loss(self, particles):
        """Squared-Euclidean transport loss of sorted particles."""
        z = np.asarray(particles, dtype=float).ravel()
        m = self.cell_table(z)
        return float(np.sum(z**2 * m[:, 0] - 2 * z * m[:, 1] + m[:, 2]))


def cell_masses(particles, density, quad):
    edges = cell_boundaries(particles)
    return np.array([quad.integrate(density, a, b) for a, b in zip(edges[:-1], edges[1:])])


def cell_moments(particles, density, quad):
    """Mass and conditional mean of the density in each cell."""
    edges = cell_boundaries(particles)
    mass = np.empty(len(edges) - 1)
    mean = np.empty(len(edges) - 1)
    for j, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
        z, w = quad.nodes(a, b)
        p = density(z) * w
        mass[j] = p.sum()
        mean[j] = np.dot(p, z) / mass[j] if mass[j] > 0 else np.nan
    return mass, mean


def quadrature_loss(particles, density, quad, cost=None):
    """Optimal-transport loss E_p[sum_j I_j(z) c(z_j, z)] for sorted 1D particles."""
    cost = cost or SquaredEuclideanCost()
    z = _check_sorted(particles)
    edges = cell_boundaries(z)
    total = 0.0
    for j, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
        zz, w = quad.nodes(a, b)
        c = cost.evaluate(np.full((zz.size, 1), z[j]), zz[:, None])
        total += float(np.dot(w, c * density(zz)))
    return total


def quadrature_loss_gradient(particles, density, quad, h=1e-5, cost=None):
    """Central differences of :func:`quadrature_loss` in each particle coordinate."""
    z = _check_sorted(particles)
    grad = np.empty_like(z)
    for k in range(z.size):
        e = np.zeros_like(z)
        e[k] = h
        grad[k] = (quadrature_loss(z + e, density, quad, cost) - quadrature_loss(z - e, density, quad, cost)) / (2 * h)
    return grad


def cell_cost_gradient(particles, density, quad, cost=None):
    """Interior term int_{L_j} grad_1 c(z_j, z) p(z) dz for each particle."""
    cost = cost or SquaredEuclideanCost()
    z = _check_sorted(particles)
    edges = cell_boundaries(z)
    out = np.empty_like(z)
    for j, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
        zz, w = quad.nodes(a, b)
        g = cost.grad_first(np.full((zz.size, 1), z[j]), zz[:, None])[:, 0]
        out[j] = np.dot(w, g * density(zz))
    return out


@dataclass(frozen=True)
class LloydResult:
    positions: np.ndarray
    loss: float
    n_iter: int
    loss_history: np.ndarray


def _inverse_cdf_grid(density, quad, n=4096):
    z = np.linspace(quad.lower, quad.upper, n)
    p = density(z)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * np.diff(z))])
    return z, cdf / cdf[-1]


def lloyd_1d(density, n_particles, quad, n_iter=5000, n_starts=8, seed=0, tol=1e-10, init=None):
    """Optimal N-point quantizer of a 1D density under squared-Euclidean cost.

    Alternates midpoint boundaries with conditional-mean centroids. With
    ``init=None`` runs ``n_starts`` seeded inits drawn from the density's
    quantiles and keeps the lowest loss.
    """
    grid, cdf = _inverse_cdf_grid(density, quad)
    pm = PanelMoments(density, quad)
    gen = RngStream(seed).generator()
    if init is not None:
        starts = [np.sort(np.asarray(init, dtype=float).ravel())]
    else:
        starts = []
        # evenly spaced quantiles first, then random quantiles
        u0 = (np.arange(n_particles) + 0.5) / n_particles
        starts.append(np.interp(u0, cdf, grid))
        for _ in range(n_starts - 1):
            u = np.sort(gen.uniform(0.02, 0.98, n_particles))
            starts.append(np.interp(u, cdf, grid))

    best = None
    for z in starts:
        z = np.unique(z)
        while z.size < n_particles:
            z = np.unique(np.concatenate([z, z[-1:] + 1e-3]))
        history = []
        it = 0
        for it in range(1, n_iter + 1):
            m = pm.cell_table(z)
            history.append(float(np.sum(z**2 * m[:, 0] - 2 * z * m[:, 1] + m[:, 2])))
            mass = m[:, 0]
            new = np.where(mass > 0, m[:, 1] / np.where(mass > 0, mass, 1.0), z)
            new = np.maximum.accumulate(new)
            new[1:] = np.maximum(new[1:], new[:-1] + 1e-12)
            delta = np.max(np.abs(new - z))
            z = new
            if delta < tol:
                break
        loss = pm.loss(z)
        history.append(loss)
        res = LloydResult(z, loss, it, np.array(history))
        if best is None or res.loss < best.loss:
            best = res
    return best


@dataclass(frozen=True)
class TruncatedMoments:
    Z: float
    mean: float
    var: float
    entropy: float


def truncated_moments_entropy(mean, std, interval, n_nodes=8192):
    """Normalizer, moments and differential entropy of N(mean, std^2) on an interval."""
    a, b = interval
    if not a < b:
        raise ValueError("invalid interval")
    lo = max(a, mean - 40 * std)
    hi = min(b, mean + 40 * std)
    if not lo < hi:
        raise ValueError("interval carries no Gaussian mass")
    quad = Quadrature1D(lo, hi, n_nodes)
    log_norm = -0.5 * np.log(2 * np.pi) - np.log(std)

    def logq(z):
        return log_norm - 0.5 * ((z - mean) / std) ** 2

    z, w = quad.nodes(lo, hi)
    q = np.exp(logq(z))
    Z = float(np.dot(w, q))
    if Z < 1e-300:
        raise ValueError("truncated normalizer underflows")
    m = float(np.dot(w, q * z)) / Z
    v = float(np.dot(w, q * (z - m) ** 2)) / Z
    ent = -float(np.dot(w, q * (logq(z) - np.log(Z)))) / Z
    return TruncatedMoments(Z, m, v, ent)


def truncated_kl(mean, std, interval, log_target, n_nodes=8192):
    """KL(q_trunc || p_trunc) for a normalized-on-interval target given by ``log_target``.

    ``log_target`` may be unnormalized; it is normalized on the interval here.
    """
    a, b = interval
    lo = max(a, mean - 40 * std)
    hi = min(b, mean + 40 * std)
    quad = Quadrature1D(lo, hi, n_nodes)
    z, w = quad.nodes(lo, hi)
    logq = -0.5 * np.log(2 * np.pi) - np.log(std) - 0.5 * ((z - mean) / std) ** 2
    q = np.exp(logq)
    Z = np.dot(w, q)
    # target normalizer over the whole interval, not just the q window
    lt_lo, lt_hi = max(a, -60.0), min(b, 60.0)
    tq = Quadrature1D(lt_lo, lt_hi, 4 * n_nodes)
    tz, tw = tq.nodes(lt_lo, lt_hi)
    lt = log_target(tz)
    shift = lt.max()
    log_P = shift + np.log(np.dot(tw, np.exp(lt - shift)))
    return float(np.dot(w, q * (logq - np.log(Z) - (log_target(z) - log_P)))) / Z


def conjugate_evidence(prior_std, noise_std, observation):
    """log N(x; 0, prior_std^2 + noise_std^2)."""
    if prior_std <= 0 or noise_std <= 0:
        raise ValueError("standard deviations must be positive")
    var = prior_std**2 + noise_std**2
    return float(-0.5 * np.log(2 * np.pi * var) - 0.5 * observation**2 / var)


def log_evidence_1d(log_joint, quad, a=-np.inf, b=np.inf):
    """log of the integral of exp(log_joint) over ``[a, b]`` by quadrature."""
    z, w = quad.nodes(a, b)
    lj = log_joint(z)
    shift = lj.max()
    return float(shift + np.log(np.dot(w, np.exp(lj - shift))))
