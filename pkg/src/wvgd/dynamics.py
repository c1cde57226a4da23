"""Wasserstein variational gradient descent.

Each particle moves against the expected cost gradient under its own
transportation density p_j (the posterior restricted to its cell). That
expectation is estimated by self-normalized importance sampling from the
particle's truncated Gaussian component, and the components themselves are
fitted by descending KL(q_j || p_j).
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .core import ParticleEnsemble, SquaredEuclideanCost, as_rng
from .tessellation import Tessellation, estimate_weights
from .varfit import (
    LOG_STD_BOUND,
    StarvedComponentError,
    VariationalComponent,
    batch_base_log_density,
    batch_kl_gradient,
    batch_log_joint,
    sample_components,
)

COLLISION_DISTANCE = 1e-12
COLLISION_JITTER = 1e-8
MAX_RESETS = 6
# Gradient and weight estimates draw from the fitted components with their
# scale multiplied by exp(PROPOSAL_WIDEN / sqrt(d)). The reverse-KL fit is mode
# seeking, so an unwidened proposal can miss mass of a multimodal cell
# entirely; the 1/sqrt(d) factor keeps the importance weight variance bounded
# as the dimension grows.
PROPOSAL_WIDEN = float(np.log(2.0))


def widen(components, amount=None):
    """Copies of ``components`` with log_std raised by ``amount`` (default PROPOSAL_WIDEN / sqrt(d))."""
    components = list(components)
    if amount is None:
        amount = PROPOSAL_WIDEN / np.sqrt(components[0].dim)
    if amount == 0:
        return components
    return [replace(c, log_std=np.clip(c.log_std + amount, -LOG_STD_BOUND, LOG_STD_BOUND)) for c in components]


@dataclass(frozen=True)
class WvgdState:
    ensemble: ParticleEnsemble
    components: tuple
    step: int = 0
    learning_rate: float = 0.05
    inner_lr: float = 0.1
    samples_per_step: int = 128
    weights: object = None

    def __post_init__(self):
        comps = tuple(self.components)
        if len(comps) != self.ensemble.n:
            raise ValueError("need one variational component per particle")
        for j, c in enumerate(comps):
            if c.cell_index != j:
                raise ValueError(f"component {j} is attached to cell {c.cell_index}")
        if self.learning_rate <= 0 or self.inner_lr <= 0 or self.samples_per_step < 1:
            raise ValueError("learning rates must be positive and samples_per_step >= 1")
        object.__setattr__(self, "components", comps)

    @property
    def particles(self):
        return self.ensemble.particles

    @property
    def n(self):
        return self.ensemble.n

    def tessellation(self, cost=None):
        return Tessellation(self.ensemble, cost or SquaredEuclideanCost())


def init_state(particles, learning_rate=0.05, inner_lr=0.1, samples_per_step=128, init_log_std=0.0):
    """State with each component centred on its particle."""
    ens = ParticleEnsemble(particles)
    comps = tuple(VariationalComponent.at_particle(z, j, init_log_std) for j, z in enumerate(ens.particles))
    return WvgdState(ens, comps, 0, learning_rate, inner_lr, samples_per_step)


@dataclass(frozen=True)
class GradientEstimate:
    per_particle_grads: np.ndarray
    per_particle_ess: np.ndarray
    loss_estimate: float
    per_particle_se: np.ndarray
    cell_losses: np.ndarray
    acceptance_rates: np.ndarray


def _gradients_from_batch(particles, components, target, cost, batch):
    """Self-normalized IS estimates of E_{p_j}[grad_1 c(z_j, z)] and E_{p_j}[c(z_j, z)] per particle.

    ``components`` are the proposals the batch was drawn from.
    """
    log_alpha = np.where(batch.mask, batch_log_joint(target, batch) - batch_base_log_density(components, batch), -np.inf)
    shift = np.max(log_alpha, axis=1)
    for j in np.flatnonzero(~np.isfinite(shift)):
        raise StarvedComponentError(int(j), int(batch.n_accepted[j]), int(batch.n_proposed[j]))
    alpha = np.exp(log_alpha - shift[:, None])
    w = alpha / alpha.sum(axis=1, keepdims=True)
    g = cost.grad_first(particles[:, None, :], batch.points)
    grad = np.einsum("kn,knd->kd", w, g)
    # delta-method standard error of a ratio estimator
    se = np.sqrt(np.einsum("kn,knd->kd", w**2, (g - grad[:, None, :]) ** 2))
    losses = np.sum(w * cost.evaluate(particles[:, None, :], batch.points), axis=1)
    ess = 1.0 / np.sum(w**2, axis=1)
    return grad, se, ess, losses


def estimate_gradient(state: WvgdState, target, cost=None, rng=0, n_samples=None,
                      widen_by=None) -> GradientEstimate:
    """Per-particle gradient estimates; the loss uses the state's latest weight estimate.

    Particle j samples from substream ``rng.spawn(j)`` using its component
    widened by ``widen_by`` in log scale (default as in ``widen``).
    """
    cost = cost or SquaredEuclideanCost()
    rng = as_rng(rng)
    n = n_samples or state.samples_per_step
    t = state.tessellation(cost)
    props = widen(state.components, widen_by)
    batch = sample_components(props, t, n, [rng.spawn(j) for j in range(state.n)])
    return _estimate_from_batch(state, target, cost, batch, props)


def _estimate_from_batch(state, target, cost, batch, proposals):
    grads, ses, ess, losses = _gradients_from_batch(state.particles, proposals, target, cost, batch)
    if not np.all(np.isfinite(grads)):
        raise FloatingPointError("non-finite particle gradient")
    beta = state.weights.weights if state.weights is not None else state.ensemble.weights
    return GradientEstimate(grads, ess, float(beta @ losses), ses, losses, batch.acceptance_rate)


def step_particles(state: WvgdState, grads, learning_rate=None, rng=0) -> WvgdState:
    """z_j <- z_j - lr * grad_j, then separate any particles closer than 1e-12."""
    lr = state.learning_rate if learning_rate is None else learning_rate
    g = grads.per_particle_grads if isinstance(grads, GradientEstimate) else np.asarray(grads, dtype=float)
    z = state.particles - lr * g
    if not np.all(np.isfinite(z)):
        raise FloatingPointError("non-finite particle update")
    gen = None
    for j in range(1, z.shape[0]):
        while np.min(np.linalg.norm(z[:j] - z[j], axis=1)) <= COLLISION_DISTANCE:
            gen = gen or as_rng(rng).spawn(state.step, 7).generator()
            u = gen.standard_normal(z.shape[1])
            z[j] = z[j] + COLLISION_JITTER * u / np.linalg.norm(u)
    ens = ParticleEnsemble(z, state.ensemble.weights)
    return replace(state, ensemble=ens, step=state.step + 1)


@dataclass
class Trajectory:
    """Per-step record of positions, loss estimates and ESS."""

    steps: list = field(default_factory=list)
    positions: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    ess: list = field(default_factory=list)
    resets: list = field(default_factory=list)

    def record(self, step, positions, loss, ess):
        self.steps.append(int(step))
        self.positions.append(np.array(positions))
        self.loss.append(float(loss))
        self.ess.append(np.array(ess))

    def rows(self):
        for step, z, loss, ess in zip(self.steps, self.positions, self.loss, self.ess):
            for j in range(z.shape[0]):
                yield [step, j, *z[j].tolist(), loss, float(ess[j])]

    def header(self):
        d = self.positions[0].shape[1] if self.positions else 1
        return ["step", "particle"] + [f"z{k}" for k in range(d)] + ["loss_estimate", "ess"]

    def to_csv(self, path):
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header())
            for row in self.rows():
                w.writerow([repr(v) if isinstance(v, float) else v for v in row])


@dataclass(frozen=True)
class RunResult:
    state: WvgdState
    trajectory: Trajectory


def lr_schedule(lr0, step, tau):
    return lr0 / (1.0 + step / tau)


def _sample_with_resets(comps, particles, t, n, rng, log, step, phase, widen_by=0.0):
    """Batch-sample all components (see ``widen``); a starved component is
    recentred on its particle (and narrowed on repeat failures) and the batch redrawn.

    Returns the possibly recentred components, the batch and the proposals used.
    """
    comps = list(comps)
    for attempt in range(MAX_RESETS + 1):
        props = widen(comps, widen_by)
        batch = sample_components(props, t, n, [rng.spawn(j, attempt) for j in range(len(comps))], raise_on_starve=False)
        if not batch.starved.any():
            return comps, batch, props
        bad = np.flatnonzero(batch.starved)
        if attempt == MAX_RESETS:
            j = int(bad[0])
            raise StarvedComponentError(j, int(batch.n_accepted[j]), int(batch.n_proposed[j]))
        for j in bad:
            c = comps[j]
            shrink = np.log(2.0) if attempt else 0.0
            comps[j] = replace(c, mean=particles[j].copy(), log_std=np.clip(c.log_std - shrink, -LOG_STD_BOUND, LOG_STD_BOUND))
            log.append((int(step), phase, int(j)))
    raise AssertionError("unreachable")


def _step_components(comps, grad, batch, eps, precondition):
    out = []
    d = comps[0].dim
    log_Z = np.minimum(batch.log_Z, 0.0)
    log_Z_se = batch.log_Z_se
    for j, c in enumerate(comps):
        g_mean, g_ls = grad[j, :d], grad[j, d:]
        if precondition:
            g_mean = g_mean * c.std**2
            g_ls = 0.5 * g_ls
        mean = c.mean - eps * g_mean
        log_std = np.clip(c.log_std - eps * g_ls, -LOG_STD_BOUND, LOG_STD_BOUND)
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(log_std))):
            raise FloatingPointError(f"non-finite parameters for component {j}")
        out.append(replace(c, mean=mean, log_std=log_std, log_Z=float(log_Z[j]), log_Z_se=float(log_Z_se[j])))
    return tuple(out)


def run(state: WvgdState, target, cost=None, n_steps=1000, rng=0, callbacks=(), tau=None,
        weight_refresh=25, estimator="auto", precondition=True, decay_inner=True,
        record_every=1) -> RunResult:
    """Alternate particle moves and component refits for ``n_steps`` steps.

    Per step: (1) importance-sampled particle gradients and a particle move,
    (2) one KL step for every component on the updated cells. Learning
    rates decay as lr0 / (1 + t / tau) with tau = n_steps / 2 by default.
    Components that lose their cell after a particle move are recentred on
    the particle rather than aborting the run; each such event is logged in
    ``trajectory.resets``.
    """
    cost = cost or SquaredEuclideanCost()
    rng = as_rng(rng)
    traj = Trajectory()
    if n_steps <= 0:
        return RunResult(state, traj)
    tau = tau or max(n_steps / 2.0, 1.0)
    n = state.samples_per_step
    lr0, eps0 = state.learning_rate, state.inner_lr
    if state.weights is None and state.n > 1:
        state = replace(state, weights=estimate_weights(state.tessellation(cost), target, widen(state.components), max(n, 100), rng.spawn(2**40)))
    for _ in range(n_steps):
        t_idx = state.step
        step_rng = rng.spawn(t_idx)
        lr = lr_schedule(lr0, t_idx, tau)
        eps = lr_schedule(eps0, t_idx, tau) if decay_inner else eps0

        t = state.tessellation(cost)
        comps, batch, props = _sample_with_resets(state.components, state.particles, t, n, step_rng.spawn(0),
                                                  traj.resets, t_idx, "gradient", None)
        state = replace(state, components=tuple(comps))
        grads = _estimate_from_batch(state, target, cost, batch, props)
        state = step_particles(state, grads, lr, step_rng.spawn(1))

        t = state.tessellation(cost)
        comps, batch, _ = _sample_with_resets(state.components, state.particles, t, n, step_rng.spawn(2), traj.resets, t_idx, "refit")
        g, _, _ = batch_kl_gradient(comps, t, target, batch, estimator)
        state = replace(state, components=_step_components(comps, g, batch, eps, precondition))

        if state.n > 1 and weight_refresh and state.step % weight_refresh == 0:
            try:
                state = replace(state, weights=estimate_weights(t, target, widen(state.components), max(n, 100), step_rng.spawn(3)))
            except StarvedComponentError:
                pass
        if record_every and (t_idx % record_every == 0 or state.step == n_steps):
            traj.record(t_idx, state.particles, grads.loss_estimate, grads.per_particle_ess)
        for cb in callbacks:
            cb(state, grads)
    return RunResult(state, traj)


# --------------------------------------------------------------------------
# Two-particle analysis
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RepulsionTerms:
    """int grad_1 c(z1, z) p(z) dz over the whole line, the same integral over
    particle 2's side of the boundary, and particle 1's cell mass.

    ``r12_cost`` is the cost itself (not its gradient) integrated over
    particle 2's side; it shrinks monotonically as the boundary moves out.
    """

    global_attraction: float
    r12: float
    cell_mass: float
    r12_cost: float = float("nan")

    @property
    def velocity(self):
        """Particle-1 velocity -E_{p_1}[grad_1 c] implied by the two terms."""
        return -(self.global_attraction - self.r12) / self.cell_mass


def repulsion_decomposition(state, target, quad=None, cost=None) -> RepulsionTerms:
    """Split particle 1's gradient into a global attraction and the share r12 on particle 2's side."""
    from .oracle import Quadrature1D

    cost = cost or SquaredEuclideanCost()
    z = state.particles if hasattr(state, "particles") else np.asarray(state, dtype=float).reshape(-1, 1)
    if z.shape != (2, 1):
        raise ValueError("repulsion decomposition needs exactly two 1D particles")
    z1, z2 = z[0, 0], z[1, 0]
    if not z1 < z2:
        raise ValueError("particles must be sorted with z1 < z2")
    if quad is None:
        locs = np.atleast_1d(getattr(target, "locations", np.zeros(1)))
        quad = Quadrature1D(min(z1, locs.min()) - 12.0, max(z2, locs.max()) + 12.0, 16384)

    def logp(x):
        return np.asarray(target.log_joint(np.asarray(x)[:, None]), dtype=float)

    xs, ws = quad.nodes(quad.lower, quad.upper)
    shift = logp(xs).max()
    norm = np.dot(ws, np.exp(logp(xs) - shift))

    def density(x):
        return np.exp(logp(x) - shift) / norm

    def g(x):
        return cost.grad_first(np.full((x.size, 1), z1), x[:, None])[:, 0] * density(x)

    def c(x):
        return cost.evaluate(np.full((x.size, 1), z1), x[:, None]) * density(x)

    mid = 0.5 * (z1 + z2)
    total = quad.integrate(g)
    r12 = quad.integrate(g, mid, np.inf)
    mass = quad.integrate(density, -np.inf, mid)
    return RepulsionTerms(float(total), float(r12), float(mass), float(quad.integrate(c, mid, np.inf)))
