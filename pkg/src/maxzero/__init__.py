"""Max-tests of many zero restrictions in regression.

Fit many marginal models with one test coefficient each, take the largest
weighted scaled estimate, and compute p-values by a restricted-estimator
fixed-design wild multiplier bootstrap. Wald-type benchmarks and a
reproducible Monte Carlo harness are included.
"""

__version__ = "0.1.0"

from .bootstrap import (
    BootstrapConfig,
    BootstrapDegenerate,
    BootstrapDegenerateWarning,
    BootstrapOutcome,
    DrawFailed,
    max_bootstrap,
    wald_bootstrap,
)
from .dgp import AlternativeSpec, DgpSpec, gen_covariates, gen_dataset
from .estimation import (
    FullFit,
    InsufficientSample,
    NoConvergence,
    ParsimoniousFit,
    RestrictedFit,
    expansion_diagnostic,
    fit_all_parsimonious,
    fit_full,
    fit_parsimonious,
    fit_restricted,
    population_parsimonious,
    sandwich_se,
)
from .harness import (
    ConfigInvalid,
    ExperimentConfig,
    ExperimentReport,
    emit_report,
    load_config,
    run_experiment,
)
from .inference import (
    FLAT,
    INV_SE,
    EmptyFits,
    NonpositiveSe,
    TestResult,
    WeightScheme,
    max_statistic,
    normalized_wald,
    wald_statistic,
)
from .model import (
    CsvFormatError,
    Dataset,
    LinearResponse,
    ParsimoniousParam,
    ResponseModel,
    embed_full,
    linear_response,
    rate_rule_k,
    resolve_k,
)
from .numerics import (
    NonPositiveDefinite,
    RngStream,
    SpdMatrix,
    chisq_sf,
    draw_std_normals,
    normal_sf,
    solve_spd,
)

__all__ = [
    "__version__",
    "AlternativeSpec",
    "BootstrapConfig",
    "BootstrapDegenerate",
    "BootstrapDegenerateWarning",
    "BootstrapOutcome",
    "ConfigInvalid",
    "CsvFormatError",
    "Dataset",
    "DgpSpec",
    "DrawFailed",
    "EmptyFits",
    "ExperimentConfig",
    "ExperimentReport",
    "FLAT",
    "FullFit",
    "INV_SE",
    "InsufficientSample",
    "LinearResponse",
    "NoConvergence",
    "NonPositiveDefinite",
    "NonpositiveSe",
    "ParsimoniousFit",
    "ParsimoniousParam",
    "ResponseModel",
    "RestrictedFit",
    "RngStream",
    "SpdMatrix",
    "TestResult",
    "WeightScheme",
    "chisq_sf",
    "draw_std_normals",
    "embed_full",
    "emit_report",
    "expansion_diagnostic",
    "fit_all_parsimonious",
    "fit_full",
    "fit_parsimonious",
    "fit_restricted",
    "gen_covariates",
    "gen_dataset",
    "linear_response",
    "load_config",
    "max_bootstrap",
    "max_statistic",
    "normal_sf",
    "normalized_wald",
    "population_parsimonious",
    "rate_rule_k",
    "resolve_k",
    "run_experiment",
    "sandwich_se",
    "solve_spd",
    "wald_bootstrap",
    "wald_statistic",
]
