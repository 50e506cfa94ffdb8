"""Discrete-time progressive event-history models with time-dependent covariates."""

from eventhistory.core import (
    CovariateSeries,
    DomainError,
    EventObservation,
    LinkFunction,
    MissingDataError,
    MultiEventObservation,
    TimeGrid,
    ValidationError,
    link_forward,
    link_inverse,
    log_link_inverse_pair,
)
from eventhistory.features import (
    FeatureMapSpec,
    ThresholdFeatureSpec,
    agdd,
    build_features,
    build_multi_event_features,
    gdd,
)
from eventhistory.likelihood import (
    ModelSpec,
    ParamVector,
    daily_event_prob,
    grad_loglik,
    loglik_censored,
    loglik_multi,
    loglik_single,
)
from eventhistory.estimation import (
    BootstrapResult,
    FitConfig,
    FittedModel,
    bootstrap_ci,
    consistency_study,
    fit_mle,
)
from eventhistory.covariates import (
    ArmaModel,
    SeasonalModel,
    TemperatureGenerator,
    fit_arma,
    fit_seasonal,
    model_select,
    simulate_paths,
)
from eventhistory.prediction import (
    PredictionRequest,
    PredictiveDistribution,
    predict_event_time,
    predict_next_event_multi,
    summarize,
)
from eventhistory.evaluation import (
    EvaluationPlan,
    EvaluationReport,
    bootstrap_coverage_experiment,
    compute_metrics,
    lag_curves,
    run_evaluation,
)

__version__ = "0.1.0"
