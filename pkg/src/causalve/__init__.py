"""Causal vaccine-effectiveness estimation from observational cohorts.

The proposed estimator fits two discrete-day Cox models (unvaccinated
hazard on calendar time, post-ramp-up vaccinated hazard on time since
vaccination) and marginalizes their plug-in cumulative incidences over the
vaccinated population.  A rolling-cohort exact-matching comparator,
bootstrap bands and a simulation benchmark with a Monte-Carlo oracle are
included.
"""

__version__ = "0.1.0"

from .exceptions import CohortError, ConvergenceError, EstimationError
from .data import CovariateSchema, Cohort, SubjectRecord, read_cohort_csv, write_cohort_csv
from .survival import StepCurve, expit, inv_log1m, kaplan_meier, log1m, logit, nelson_aalen, risk_table
from .cox import CoxFit, DesignSpec, fit_cox, natural_spline_matrix, predict_hazard
from .estimator import (
    CausalVE,
    CurveEstimate,
    MarginalWeights,
    StudyConfig,
    VEResult,
    WeightTable,
    build_lambda0_dataset,
    build_lambda1_dataset,
    estimate_ve,
    positivity_diagnostic,
    psi0_hat,
    psi1_hat,
)
from .matching import MatchedCohort, MatchedPair, MatchingVE, matched_cox, matched_km, rolling_match
from .bootstrap import (
    BootstrapMatrix,
    ConfidenceBand,
    bootstrap_estimates,
    mvn_sample,
    pointwise_ci,
    simultaneous_ci,
)
from .simulation import SimConfig, SimTruth, ToyDGP, generate_cohort, null_config, true_curves_oracle
from .benchmark import BenchmarkResult, MetricsRow, run_benchmark, seed_sweep

__all__ = [
    "__version__",
    "CohortError", "ConvergenceError", "EstimationError",
    "CovariateSchema", "Cohort", "SubjectRecord", "read_cohort_csv", "write_cohort_csv",
    "StepCurve", "expit", "inv_log1m", "kaplan_meier", "log1m", "logit", "nelson_aalen", "risk_table",
    "CoxFit", "DesignSpec", "fit_cox", "natural_spline_matrix", "predict_hazard",
    "CausalVE", "CurveEstimate", "MarginalWeights", "StudyConfig", "VEResult", "WeightTable",
    "build_lambda0_dataset", "build_lambda1_dataset", "estimate_ve", "positivity_diagnostic",
    "psi0_hat", "psi1_hat",
    "MatchedCohort", "MatchedPair", "MatchingVE", "matched_cox", "matched_km", "rolling_match",
    "BootstrapMatrix", "ConfidenceBand", "bootstrap_estimates", "mvn_sample", "pointwise_ci",
    "simultaneous_ci",
    "SimConfig", "SimTruth", "ToyDGP", "generate_cohort", "null_config", "true_curves_oracle",
    "BenchmarkResult", "MetricsRow", "run_benchmark", "seed_sweep",
]
