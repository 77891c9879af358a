"""Regularized nonparametric latent-trait estimation and score conversion.

The pipeline: describe each instrument with a measurement kernel model,
discretize it over latent bins, fit the regularized mixing distribution by
EM or mirror ascent, check feasibility, pick the kernel bandwidth from
repeat visits and the regularization weight from paired observations, then
convert scores between instruments through the latent quantile map.

Hot solver loops are compiled with numba when available; set
HARMONIZE_BACKEND=numpy to force the pure-numpy fallback.
"""

from ._backend import BACKEND_ENV, HAS_NUMBA, active_backend
from .baselines import (
    LogitNormalParams,
    ZScoreParams,
    fit_logit_normal,
    fit_zscore,
    logit_normal_binned,
    logit_normal_density,
    pseudo_response,
    zscore_convert_pmf,
    zscore_matrix,
    zscore_point,
)
from .conversion import (
    ConversionModel,
    CrossEntropyResult,
    CrosswalkRecord,
    FittedBranch,
    PiecewiseLinearCDF,
    QuantileMap,
    build_cdf,
    conditional_from_joint,
    conversion_matrix,
    conversion_sample,
    convert_pmf,
    population_cross_entropy,
    posterior_gamma,
    quantile_map,
    sample_cross_entropy,
)
from .diagnostics import (
    FeasibilityResult,
    first_order_feasibility,
    kth_order_feasibility,
    second_order_feasibility,
)
from .errors import (
    ConfigError,
    DataError,
    DegenerateModelError,
    HarmonizeError,
    NoDataError,
)
from .experiments import EXPERIMENTS, RunReport, run_experiment
from .measurement import (
    DEFAULT_NODES_PER_BIN,
    KERNEL_FAMILIES,
    DiscretizedModel,
    MeasurementModel,
    SecondOrderModel,
    bin_nodes,
    discretize,
    discretize_kth_order,
    discretize_second_order,
    pmf,
    pmf_matrix,
    sample_score,
    sample_scores,
)
from .probcore import (
    CovariateCell,
    ObservationRecord,
    ScoreDistribution,
    assign_cell,
    chi_square_sf,
    conditional_empirical,
    empirical,
    first_visits,
    kl_divergence,
    multinomial_kl_tail_bound,
    paired_empirical,
    read_records,
    tv_distance,
    write_records,
)
from .selection import (
    DEFAULT_MU_GRID,
    ModelGrid,
    ModelSelection,
    MuSelection,
    PairedSample,
    build_pairs,
    difference_distribution,
    intrinsic_variability,
    select_model,
    select_mu,
    two_obs_loglik,
)
from .simulate import (
    SimulationConfig,
    SimulatedData,
    beta_quantile,
    config_hash,
    simulate_harmonizable,
    true_joint,
)
from .solver import (
    BinnedLatent,
    FitOptions,
    contraction_diagnostic,
    em_step,
    fit,
    fit_per_cell,
    fit_second_order,
    implied_marginal,
    regularized_loglik,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND_ENV",
    "HAS_NUMBA",
    "active_backend",
    "LogitNormalParams",
    "ZScoreParams",
    "fit_logit_normal",
    "fit_zscore",
    "logit_normal_binned",
    "logit_normal_density",
    "pseudo_response",
    "zscore_convert_pmf",
    "zscore_matrix",
    "zscore_point",
    "ConversionModel",
    "CrossEntropyResult",
    "CrosswalkRecord",
    "FittedBranch",
    "PiecewiseLinearCDF",
    "QuantileMap",
    "build_cdf",
    "conditional_from_joint",
    "conversion_matrix",
    "conversion_sample",
    "convert_pmf",
    "population_cross_entropy",
    "posterior_gamma",
    "quantile_map",
    "sample_cross_entropy",
    "FeasibilityResult",
    "first_order_feasibility",
    "kth_order_feasibility",
    "second_order_feasibility",
    "ConfigError",
    "DataError",
    "DegenerateModelError",
    "HarmonizeError",
    "NoDataError",
    "EXPERIMENTS",
    "RunReport",
    "run_experiment",
    "DEFAULT_NODES_PER_BIN",
    "KERNEL_FAMILIES",
    "DiscretizedModel",
    "MeasurementModel",
    "SecondOrderModel",
    "bin_nodes",
    "discretize",
    "discretize_kth_order",
    "discretize_second_order",
    "pmf",
    "pmf_matrix",
    "sample_score",
    "sample_scores",
    "CovariateCell",
    "ObservationRecord",
    "ScoreDistribution",
    "assign_cell",
    "chi_square_sf",
    "conditional_empirical",
    "empirical",
    "first_visits",
    "kl_divergence",
    "multinomial_kl_tail_bound",
    "paired_empirical",
    "read_records",
    "tv_distance",
    "write_records",
    "DEFAULT_MU_GRID",
    "ModelGrid",
    "ModelSelection",
    "MuSelection",
    "PairedSample",
    "build_pairs",
    "difference_distribution",
    "intrinsic_variability",
    "select_model",
    "select_mu",
    "two_obs_loglik",
    "SimulationConfig",
    "SimulatedData",
    "beta_quantile",
    "config_hash",
    "simulate_harmonizable",
    "true_joint",
    "BinnedLatent",
    "FitOptions",
    "contraction_diagnostic",
    "em_step",
    "fit",
    "fit_per_cell",
    "fit_second_order",
    "implied_marginal",
    "regularized_loglik",
    "__version__",
]
