"""Particle samplers built on Stein variational gradient descent with importance weights."""

from .kernel import KernelSpec, kernel_cross_trace, kernel_eval, kernel_grad_x
from .sampler import BetaConfig, DivergenceError, beta_svgd_step, run_beta_svgd, run_svgd, svgd_direction
from .stein import (
    SteinMatrix,
    build_stein_matrix,
    ksd_estimate,
    mirror_descent_step,
    solve_stein_weights,
    stein_kernel_entry,
)
from .target import GaussianMixture, LogisticPosterior, load_dataset, synthesize_logistic_data

__version__ = "0.1.0"
