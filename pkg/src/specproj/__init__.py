"""Spectral projectors of sample covariance operators: perturbation theory,
risk constants, data-driven estimators and a Monte Carlo harness."""

from .estimators import (
    EmpiricalSpectralProjector,
    ProjectorRiskEstimator,
    b_hat_n,
    bias_estimator,
    sample_covariance,
    statistic_data_driven,
    statistic_pure,
    statistic_theory,
    variance_estimator,
)
from .exceptions import SpecProjError, ValidationError
from .linalg import SymmetricOperator, eigh, hs_inner, hs_norm, make_symmetric, op_norm
from .montecarlo import ExperimentConfig, preset_config, run_experiment, table1, table2
from .perturbation import decompose, empirical_projector, linear_term, partial_resolvent
from .sampling import SeedSpec, draw_batch, draw_covariance, make_sampler
from .spectral import SpikedModel, build_spiked, effective_rank, spectral_structure
from .theory import (
    a_r_eigensum,
    a_r_operator,
    a_r_spiked,
    b_r_eigensum,
    b_r_operator,
    b_r_spiked,
    theory_constants,
    var_linear_exact,
)

__version__ = "0.1.0"
