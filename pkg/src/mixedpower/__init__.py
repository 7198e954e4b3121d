"""Power and sample size for trials mixing continuous, ordinal, and binary endpoints.

A latent multivariate-Gaussian model ties the endpoint types together;
co-primary, multiple-primary, and composite-responder analyses all reduce
to normal rectangle probabilities evaluated by a shared QMC integrator.
"""

from ._backend import BACKEND
from .design import (
    LatentDesign,
    OrdinalThresholds,
    OutcomeSpec,
    ResponderRule,
    RuleEntry,
    build_design,
    build_grid_cell,
    composite_verification_design,
    design_from_dict,
    design_to_dict,
    latent_effect_from_proportions,
    latent_mean_from_proportion,
    load_design,
    load_fixture,
    lupus_trial_design,
    rule_intervals,
    save_design,
    validate,
)
from .exceptions import (
    ConvergenceError,
    DesignError,
    FitError,
    InfeasibleSizeError,
    MixedPowerError,
    NotPositiveDefiniteError,
    NumericalError,
    ValidationError,
)
from .fitting import (
    DeltaMethod,
    FitResult,
    ParameterLayout,
    ParameterVector,
    bootstrap_covariance,
    delta_star,
    delta_variance,
    fit,
    fitted_design,
    loglik_function,
    observed_information,
    params_from_design,
    wald_test,
)
from .mvn import (
    CorrelationMatrix,
    RectangleProbability,
    bvn_rectangle,
    cholesky,
    mvn_rectangle,
    std_normal_cdf,
    std_normal_quantile,
)
from .power import (
    CompositeEffect,
    CompositeSummary,
    PowerEstimate,
    PowerQuery,
    composite_effect,
    critical_shifts,
    power_binary_standard,
    power_composite,
    power_coprimary,
    power_individual,
    power_multiprimary,
    response_probability,
)
from .samplesize import (
    SampleSizeResult,
    n_binary_standard,
    n_composite,
    n_coprimary,
    n_individual,
    n_individual_for,
    n_multiprimary,
)
from .simulate import (
    EmpiricalPowerReport,
    TrialDataset,
    calibrate_sigma,
    derive_responders,
    empirical_power,
    simulate,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CompositeEffect",
    "CompositeSummary",
    "ConvergenceError",
    "CorrelationMatrix",
    "DeltaMethod",
    "DesignError",
    "EmpiricalPowerReport",
    "FitError",
    "FitResult",
    "InfeasibleSizeError",
    "LatentDesign",
    "MixedPowerError",
    "NotPositiveDefiniteError",
    "NumericalError",
    "OrdinalThresholds",
    "OutcomeSpec",
    "ParameterLayout",
    "ParameterVector",
    "PowerEstimate",
    "PowerQuery",
    "RectangleProbability",
    "ResponderRule",
    "RuleEntry",
    "SampleSizeResult",
    "TrialDataset",
    "ValidationError",
    "bootstrap_covariance",
    "build_design",
    "build_grid_cell",
    "bvn_rectangle",
    "calibrate_sigma",
    "cholesky",
    "composite_effect",
    "composite_verification_design",
    "critical_shifts",
    "delta_star",
    "delta_variance",
    "derive_responders",
    "design_from_dict",
    "design_to_dict",
    "empirical_power",
    "fit",
    "fitted_design",
    "latent_effect_from_proportions",
    "latent_mean_from_proportion",
    "load_design",
    "load_fixture",
    "loglik_function",
    "lupus_trial_design",
    "mvn_rectangle",
    "n_binary_standard",
    "n_composite",
    "n_coprimary",
    "n_individual",
    "n_individual_for",
    "n_multiprimary",
    "observed_information",
    "params_from_design",
    "power_binary_standard",
    "power_composite",
    "power_coprimary",
    "power_individual",
    "power_multiprimary",
    "response_probability",
    "rule_intervals",
    "save_design",
    "simulate",
    "std_normal_cdf",
    "std_normal_quantile",
    "validate",
    "wald_test",
    "__version__",
]
