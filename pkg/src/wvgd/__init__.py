"""Wasserstein variational gradient descent: particles plus per-cell truncated Gaussians."""

from .core import (
    CostFunction,
    DimensionError,
    ParticleEnsemble,
    RngStream,
    SquaredEuclideanCost,
    TargetModel,
    finite_difference_gradient,
    squared_euclidean_cost,
)
from .dynamics import (
    GradientEstimate,
    Trajectory,
    WvgdState,
    estimate_gradient,
    init_state,
    repulsion_decomposition,
    run,
    step_particles,
)
from .svgd import SvgdState, run_svgd, svgd_step
from .targets import (
    ConjugateGaussianTarget,
    GaussianMixtureTarget,
    GpHyperTarget,
    LogRegTarget,
    sample_random_mixture,
    standard_normal_target,
)
from .tessellation import StarvedCellError, Tessellation, WeightEstimate, assign_cell, estimate_weights, restricted_log_density
from .varfit import (
    StarvedComponentError,
    VariationalComponent,
    elbo_component,
    entropy_gradient,
    kl_gradient,
    pelbo,
    sample_component,
    step_component,
)

__version__ = "0.1.0"
