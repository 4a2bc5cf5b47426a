"""Exact spectral simulation of Whittaker-driven linear SDEs on a skewed torus
and their diffusive rescaling toward the additive stochastic heat equation."""
from .drift import (DriftStencil, LimitCoefficients, build_whittaker_stencil, a_hat,
                    limit_coefficients, validate_assumptions)
from .harness import (CovarianceEstimate, ExperimentConfig, SweepRow, estimate_x_covariance,
                      run_validate, sweep_delta, sweep_mean)
from .rescaled_field import GaussianTestFunction, RescaleScheme, cell_weights, y_delta
from .she_limit import LimitSpec, y0_limit, z0_covariance
from .spectral_sim import RngStream, evolve_exact, zero_modes
from .torus import TorusParams

__version__ = "0.1.0"
