"""Correlated-noise (matrix factorization) mechanisms for private prefix sums and DP-SGD."""

__version__ = "0.1.0"

from .errors import CorrNoiseError
from .loss import LossReport, evaluate_loss
from .noisegen import NoiseSource, make_generator, next_noise, regenerate_row
from .optimize import (
    OptimizationResult,
    OptimizerConfig,
    minimize_smooth,
    optimize_banded_toeplitz,
    optimize_blt,
    optimize_dense_multi,
    optimize_dense_streaming,
)
from .privacy import PrivacyTarget, amplification_reduction, calibrate_nu, gdp_to_zcdp
from .sensitivity import ParticipationSchema, strategy_sensitivity
from .strategies import Strategy, blt_invert, optimal_toeplitz_coeffs
from .workloads import WorkloadSpec

__all__ = [
    "CorrNoiseError", "LossReport", "evaluate_loss", "NoiseSource", "make_generator",
    "next_noise", "regenerate_row", "OptimizationResult", "OptimizerConfig", "minimize_smooth",
    "optimize_banded_toeplitz", "optimize_blt", "optimize_dense_multi", "optimize_dense_streaming",
    "PrivacyTarget", "amplification_reduction", "calibrate_nu", "gdp_to_zcdp",
    "ParticipationSchema", "strategy_sensitivity", "Strategy", "blt_invert",
    "optimal_toeplitz_coeffs", "WorkloadSpec",
]
