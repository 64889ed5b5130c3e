"""Debiased machine learning of regression functionals under covariate shift."""

from ._normal import normal_cdf, normal_quantile
from .debias import (
    DebiasResult,
    FoldComponents,
    FoldPlan,
    SummaryEstimate,
    TrainingSummaries,
    TrimSpec,
    VarianceReport,
    crossfit_estimate,
    estimate_from_summaries,
    nocrossfit_estimate,
    plug_in_estimate,
    pseudo_inverse_estimate,
    remainder_terms,
    split_sample_estimate,
    training_summaries,
    trim,
    variance_and_ci,
)
from .dictionary import (
    DictionarySpec,
    PolynomialFeatureMap,
    expand,
    expand_matrix,
    term_names,
)
from .functionals import LinearFunctional, MeanOutcome, PotentialOutcome
from .harness import (
    AggregateRow,
    AggregationError,
    ExperimentConfig,
    ReplicationRecord,
    aggregate,
    emit_outputs,
    read_records,
    run_experiment,
    write_records,
)
from .learners import (
    FunctionRegressor,
    LassoDictionaryRegressor,
    MlpRegressor,
    TrainingDivergenceError,
)
from .riesz import (
    RepresenterMoments,
    RieszFit,
    RieszRepresenter,
    compensated_gram,
    compute_moments,
    debias_weights,
    fit_representer,
    pseudo_inverse_weights,
    residual_projection_coefficients,
)
from .simgen import (
    OracleEstimate,
    SimSample,
    SimSpec,
    draw_covariates,
    draw_outcomes,
    draw_sample,
    eval_g,
    eval_g_batch,
    oracle_theta,
    random_spec,
    spec_oracle,
)
from .solvers import (
    DegenerateCoordinateError,
    LassoFit,
    PenalizedQuadraticProblem,
    SolverOptions,
    cross_validated_penalty,
    default_penalty,
    kkt_violation,
    lasso_objective,
    lasso_regression,
    penalized_objective,
    penalized_quadratic,
    soft_threshold,
)

__version__ = "0.1.0"
