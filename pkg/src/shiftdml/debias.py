"""Debiased estimators of shifted-sample functionals, with variance and CIs.

Every estimator decomposes as

    theta_hat = plug_in + correction

where the plug-in averages the functional of the trained regression over
the field sample and the correction averages the product of estimated
reweighting values with training residuals. Variants differ in which rows
train the regression, which rows form the dictionary second moment, and
which rows the correction averages over:

* ``crossfit_estimate``: K-fold split of the training sample; the
  regression and reweighting coefficients for a fold come from its
  complement, the correction averages over the fold, and fold estimates
  combine with size weights.
* ``split_sample_estimate``: a fitted learner plus a fresh holdout sample;
  the second moment comes from the learner's training rows and the
  correction averages over the holdout.
* ``nocrossfit_estimate``: a single penalized dictionary regression on all
  training rows; the correction uses the dictionary/residual cross
  product, so the estimate is reconstructible from compact training
  summaries plus field data (see ``training_summaries``).
* ``pseudo_inverse_estimate``: reweighting coefficients from a
  pseudo-inverse solve instead of the penalized program.
"""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ._normal import normal_quantile
from .dictionary import DictionarySpec, expand_matrix
from .functionals import LinearFunctional
from .riesz import (
    RepresenterMoments,
    compensated_gram,
    fit_representer,
    pseudo_inverse_weights,
)
from .solvers import SolverOptions, lasso_regression

VARIANCE_MODES = ("corrected", "printed")


@dataclass(frozen=True)
class FoldPlan:
    """Assignment of each training row to one of ``num_folds`` folds."""

    num_folds: int
    assignments: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        assignments = np.asarray(self.assignments, dtype=int)
        object.__setattr__(self, "assignments", assignments)
        if self.num_folds < 2:
            raise ValueError(f"need at least 2 folds, got {self.num_folds}")
        counts = np.bincount(assignments, minlength=self.num_folds)
        if assignments.min(initial=0) < 0 or assignments.max(initial=0) >= self.num_folds:
            raise ValueError("fold assignments out of range")
        if counts.min() == 0:
            raise ValueError("every fold must receive at least one row")
        if counts.max() - counts.min() > 1:
            raise ValueError(f"fold sizes must differ by at most 1, got {counts}")

    @classmethod
    def make(cls, n_obs: int, num_folds: int, seed: int) -> "FoldPlan":
        """Balanced random partition of ``n_obs`` rows."""
        perm = np.random.default_rng(seed).permutation(n_obs)
        assignments = np.empty(n_obs, dtype=int)
        assignments[perm] = np.arange(n_obs) % num_folds
        return cls(num_folds=num_folds, assignments=assignments, seed=seed)

    def indices(self, fold: int) -> np.ndarray:
        return np.where(self.assignments == fold)[0]


@dataclass(frozen=True)
class TrimSpec:
    """Clamp bound for reweighting values in the variance estimate.

    A fixed ``tau_bar`` overrides the default growth rule
    ``growth_scale * n_field ** 0.25``.
    """

    tau_bar: float | None = None
    growth_scale: float = 5.0

    def bound(self, n_field: int | None = None) -> float:
        if self.tau_bar is not None:
            b = float(self.tau_bar)
        else:
            if n_field is None:
                raise ValueError("growth rule needs the field sample size")
            b = self.growth_scale * float(n_field) ** 0.25
        if b <= 0:
            raise ValueError(f"trim bound must be positive, got {b}")
        return b


def trim(values, spec, n_field: int | None = None):
    """Clamp ``values`` to [-bound, bound]; pass-through inside the bound.

    ``spec`` may be a :class:`TrimSpec` or a numeric bound.
    """
    bound = spec.bound(n_field) if isinstance(spec, TrimSpec) else float(spec)
    if bound <= 0:
        raise ValueError(f"trim bound must be positive, got {bound}")
    clipped = np.clip(values, -bound, bound)
    return float(clipped) if np.isscalar(values) else clipped


@dataclass(frozen=True)
class FoldComponents:
    """Raw per-fold pieces needed for the variance estimate."""

    functional_values: np.ndarray  # functional of the fold regression, field sample
    weight_values: np.ndarray  # untrimmed reweighting values on the fold rows
    residuals: np.ndarray  # outcome minus fold regression on the fold rows

    @property
    def fold_size(self) -> int:
        return len(self.residuals)


@dataclass(frozen=True)
class VarianceReport:
    v_hat: float
    std_error: float
    ci_low: float
    ci_high: float
    per_fold: tuple


def variance_and_ci(
    theta_hat: float,
    folds: list[FoldComponents],
    trim_spec: TrimSpec = TrimSpec(),
    level: float = 0.95,
    variance_mode: str = "corrected",
) -> VarianceReport:
    """Size-weighted variance combination and the normal-quantile interval.

    Each fold contributes the field-side spread of its functional values
    plus the fold average of squared trimmed-weight-times-residual. The
    ``corrected`` mode scales the residual term by the field/training size
    ratio before forming the interval; ``printed`` leaves it unscaled. The
    two coincide when the samples have equal size.
    """
    if not 0.0 < level < 1.0:
        raise ValueError(f"confidence level must lie in (0, 1), got {level}")
    if variance_mode not in VARIANCE_MODES:
        raise ValueError(f"variance_mode must be one of {VARIANCE_MODES}")
    if not folds:
        raise ValueError("need at least one fold")
    n_field = len(folds[0].functional_values)
    t_total = sum(f.fold_size for f in folds)
    bound = trim_spec.bound(n_field)
    xi_hat = n_field / t_total
    factor = xi_hat if variance_mode == "corrected" else 1.0

    v_hat = 0.0
    per_fold = []
    for f in folds:
        m_vals = np.asarray(f.functional_values, dtype=float)
        s2_functional = float(np.mean((m_vals - m_vals.mean()) ** 2))
        trimmed = trim(np.asarray(f.weight_values, dtype=float), bound)
        s2_correction = float(np.mean(trimmed**2 * np.asarray(f.residuals) ** 2))
        v_fold = s2_functional + factor * s2_correction
        weight = f.fold_size / t_total
        v_hat += weight * v_fold
        per_fold.append(
            {
                "v_hat": v_fold,
                "s2_functional": s2_functional,
                "s2_correction": s2_correction,
                "fold_size": f.fold_size,
            }
        )
    std_error = math.sqrt(v_hat / n_field)
    z = normal_quantile(1.0 - (1.0 - level) / 2.0)
    return VarianceReport(
        v_hat=v_hat,
        std_error=std_error,
        ci_low=theta_hat - z * std_error,
        ci_high=theta_hat + z * std_error,
        per_fold=tuple(per_fold),
    )


@dataclass(frozen=True)
class DebiasResult:
    """Point estimate with its decomposition, variance, and interval.

    Serialized keys (:meth:`to_dict` / :meth:`to_json`): ``theta_hat``,
    ``plug_in``, ``correction``, ``v_hat``, ``std_error``, ``ci_low``,
    ``ci_high``, ``level``, ``xi_hat``, ``n_field``, ``n_train``,
    ``variance_mode``, and ``per_fold`` (a list of objects with keys
    ``theta``, ``v_hat``, ``s2_functional``, ``s2_correction``,
    ``fold_size``). Numbers serialize as IEEE-754 doubles at full
    round-trip precision.
    """

    theta_hat: float
    plug_in: float
    correction: float
    v_hat: float
    std_error: float
    ci_low: float
    ci_high: float
    level: float
    xi_hat: float
    n_field: int
    n_train: int
    variance_mode: str
    per_fold: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.v_hat < 0 or self.std_error < 0:
            raise ValueError("variance and standard error must be nonnegative")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["per_fold"] = [dict(f) for f in self.per_fold]
        return out

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _as_sample(x, name, allow_empty=False):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError(f"{name} must be a matrix, got shape {x.shape}")
    if not allow_empty and x.shape[0] == 0:
        raise ValueError(f"{name} must be nonempty")
    return x


def _predictor(learner):
    if callable(learner) and not hasattr(learner, "predict"):
        return learner
    return learner.predict


def _assemble(
    functional,
    spec,
    predict,
    field,
    m_vec,
    q_hat,
    corr_design,
    corr_x,
    corr_y,
    riesz_penalty,
    trim_spec,
    level,
    variance_mode,
    solver_options,
    weights_coef=None,
    correction_form="weights",
    n_train=None,
):
    n_field = field.shape[0]
    t_train = n_train if n_train is not None else corr_x.shape[0]
    if weights_coef is None:
        moments = RepresenterMoments(
            functional_moments=m_vec,
            second_moments=q_hat,
            n_field=n_field,
            n_train=t_train,
        )
        weights_coef = fit_representer(moments, riesz_penalty, solver_options).coefficients
    m_vals = functional.apply_batch(field, predict)
    residuals = corr_y - predict(corr_x)
    weight_values = corr_design @ weights_coef
    plug_in = float(np.mean(m_vals))
    if correction_form == "crossprod":
        crossprod = corr_design.T @ residuals / corr_design.shape[0]
        correction = float(weights_coef @ crossprod)
    else:
        correction = float(np.mean(weight_values * residuals))
    theta_hat = plug_in + correction
    components = FoldComponents(
        functional_values=m_vals, weight_values=weight_values, residuals=residuals
    )
    report = variance_and_ci(theta_hat, [components], trim_spec, level, variance_mode)
    per_fold = ({"theta": theta_hat, **report.per_fold[0]},)
    return (
        DebiasResult(
            theta_hat=theta_hat,
            plug_in=plug_in,
            correction=correction,
            v_hat=report.v_hat,
            std_error=report.std_error,
            ci_low=report.ci_low,
            ci_high=report.ci_high,
            level=level,
            xi_hat=n_field / corr_x.shape[0],
            n_field=n_field,
            n_train=t_train,
            variance_mode=variance_mode,
            per_fold=per_fold,
        ),
        weights_coef,
    )


def crossfit_estimate(
    functional: LinearFunctional,
    spec: DictionarySpec,
    x_train,
    y_train,
    field,
    plan: FoldPlan,
    learner_factory,
    riesz_penalty: float,
    trim_spec: TrimSpec = TrimSpec(),
    *,
    level: float = 0.95,
    variance_mode: str = "corrected",
    solver_options: SolverOptions | None = None,
) -> DebiasResult:
    """K-fold debiased estimate.

    For each fold, ``learner_factory(fold)`` builds a fresh learner that is
    fit on the fold's complement; the dictionary second moment also comes
    from the complement while the functional moments use the full field
    sample. The fold estimate adds the field plug-in to the fold-averaged
    product of reweighting values and residuals, and folds combine with
    size weights.
    """
    x_train = _as_sample(x_train, "training sample")
    field = _as_sample(field, "field sample")
    y_train = np.asarray(y_train, dtype=float)
    if y_train.shape[0] != x_train.shape[0]:
        raise ValueError("outcome length does not match the training sample")
    if plan.assignments.shape[0] != x_train.shape[0]:
        raise ValueError("fold plan does not cover the training sample")

    t_total = x_train.shape[0]
    n_field = field.shape[0]
    design = expand_matrix(spec, x_train)
    m_vec = functional.basis_moments(spec, field)

    fold_components = []
    fold_plug, fold_corr, fold_sizes = [], [], []
    for fold in range(plan.num_folds):
        idx = plan.indices(fold)
        comp = plan.assignments != fold
        if idx.size == 0 or comp.sum() == 0:
            raise ValueError(f"fold {fold} leaves no rows to fit on")
        learner = learner_factory(fold)
        learner.fit(x_train[comp], y_train[comp])
        predict = _predictor(learner)
        q_fold = compensated_gram(design[comp]) / comp.sum()
        moments = RepresenterMoments(
            functional_moments=m_vec,
            second_moments=0.5 * (q_fold + q_fold.T),
            n_field=n_field,
            n_train=int(comp.sum()),
        )
        coef = fit_representer(moments, riesz_penalty, solver_options).coefficients
        m_vals = functional.apply_batch(field, predict)
        residuals = y_train[idx] - predict(x_train[idx])
        weight_values = design[idx] @ coef
        fold_plug.append(float(np.mean(m_vals)))
        fold_corr.append(float(np.mean(weight_values * residuals)))
        fold_sizes.append(idx.size)
        fold_components.append(
            FoldComponents(
                functional_values=m_vals,
                weight_values=weight_values,
                residuals=residuals,
            )
        )

    weights = np.asarray(fold_sizes, dtype=float) / t_total
    plug_in = float(weights @ np.asarray(fold_plug))
    correction = float(weights @ np.asarray(fold_corr))
    theta_hat = plug_in + correction
    report = variance_and_ci(theta_hat, fold_components, trim_spec, level, variance_mode)
    per_fold = tuple(
        {"theta": fold_plug[i] + fold_corr[i], **report.per_fold[i]}
        for i in range(plan.num_folds)
    )
    return DebiasResult(
        theta_hat=theta_hat,
        plug_in=plug_in,
        correction=correction,
        v_hat=report.v_hat,
        std_error=report.std_error,
        ci_low=report.ci_low,
        ci_high=report.ci_high,
        level=level,
        xi_hat=n_field / t_total,
        n_field=n_field,
        n_train=t_total,
        variance_mode=variance_mode,
        per_fold=per_fold,
    )


def split_sample_estimate(
    functional: LinearFunctional,
    spec: DictionarySpec,
    learner,
    x_train,
    y_train,
    x_holdout,
    y_holdout,
    field,
    riesz_penalty: float,
    trim_spec: TrimSpec = TrimSpec(),
    *,
    level: float = 0.95,
    variance_mode: str = "corrected",
    solver_options: SolverOptions | None = None,
) -> DebiasResult:
    """Debiased estimate with an already fitted learner and a holdout sample.

    The dictionary second moment comes from the learner's training rows and
    the correction averages over the holdout rows. Passing the training
    sample as the holdout reproduces the single-sample (no split) variant.
    """
    x_train = _as_sample(x_train, "training sample")
    x_holdout = _as_sample(x_holdout, "holdout sample")
    field = _as_sample(field, "field sample")
    y_holdout = np.asarray(y_holdout, dtype=float)
    if y_holdout.shape[0] != x_holdout.shape[0]:
        raise ValueError("holdout outcome length does not match the holdout sample")
    del y_train  # the learner is already fitted; kept for signature symmetry

    design = expand_matrix(spec, x_train)
    q_hat = compensated_gram(design) / x_train.shape[0]
    m_vec = functional.basis_moments(spec, field)
    result, _ = _assemble(
        functional,
        spec,
        _predictor(learner),
        field,
        m_vec,
        0.5 * (q_hat + q_hat.T),
        expand_matrix(spec, x_holdout),
        x_holdout,
        y_holdout,
        riesz_penalty,
        trim_spec,
        level,
        variance_mode,
        solver_options,
        n_train=x_train.shape[0],
    )
    return result


def nocrossfit_estimate(
    functional: LinearFunctional,
    spec: DictionarySpec,
    x_train,
    y_train,
    field,
    gamma_penalty: float,
    riesz_penalty: float,
    trim_spec: TrimSpec = TrimSpec(),
    *,
    level: float = 0.95,
    variance_mode: str = "corrected",
    solver_options: SolverOptions | None = None,
) -> DebiasResult:
    """Single-sample estimate with a penalized dictionary regression.

    One penalized regression on all training rows supplies the fitted
    values; the correction is the reweighting coefficients dotted with the
    dictionary/residual cross product, the form that makes the estimate
    reconstructible from :func:`training_summaries` plus field data.
    """
    x_train = _as_sample(x_train, "training sample")
    field = _as_sample(field, "field sample")
    y_train = np.asarray(y_train, dtype=float)
    if y_train.shape[0] != x_train.shape[0]:
        raise ValueError("outcome length does not match the training sample")

    design = expand_matrix(spec, x_train)
    reg = lasso_regression(design, y_train, gamma_penalty, solver_options)

    def predict(x):
        return expand_matrix(spec, np.asarray(x, dtype=float)) @ reg.coefficients

    q_hat = compensated_gram(design) / x_train.shape[0]
    m_vec = functional.basis_moments(spec, field)
    result, _ = _assemble(
        functional,
        spec,
        predict,
        field,
        m_vec,
        0.5 * (q_hat + q_hat.T),
        design,
        x_train,
        y_train,
        riesz_penalty,
        trim_spec,
        level,
        variance_mode,
        solver_options,
        correction_form="crossprod",
    )
    return result


def pseudo_inverse_estimate(
    functional: LinearFunctional,
    spec: DictionarySpec,
    learner,
    x_train,
    y_train,
    field,
    trim_spec: TrimSpec = TrimSpec(),
    *,
    rank_tol: float = 1e-10,
    level: float = 0.95,
    variance_mode: str = "corrected",
) -> DebiasResult:
    """Single-sample estimate with pseudo-inverse reweighting coefficients.

    Equivalent to regressing the training residuals on the dictionary by
    minimum-norm least squares and applying those coefficients to the
    field-sample dictionary means; here the reweighting coefficients are
    formed explicitly so the variance uses the same per-row weights.
    """
    x_train = _as_sample(x_train, "training sample")
    field = _as_sample(field, "field sample")
    y_train = np.asarray(y_train, dtype=float)

    design = expand_matrix(spec, x_train)
    q_hat = compensated_gram(design) / x_train.shape[0]
    m_vec = functional.basis_moments(spec, field)
    moments = RepresenterMoments(
        functional_moments=m_vec,
        second_moments=0.5 * (q_hat + q_hat.T),
        n_field=field.shape[0],
        n_train=x_train.shape[0],
    )
    coef = pseudo_inverse_weights(moments, rank_tol)
    result, _ = _assemble(
        functional,
        spec,
        _predictor(learner),
        field,
        m_vec,
        moments.second_moments,
        design,
        x_train,
        y_train,
        riesz_penalty=0.0,
        trim_spec=trim_spec,
        level=level,
        variance_mode=variance_mode,
        solver_options=None,
        weights_coef=coef,
    )
    return result


def plug_in_estimate(
    functional: LinearFunctional,
    learner,
    field,
    *,
    level: float = 0.95,
    n_train: int = 0,
) -> DebiasResult:
    """Uncorrected field average of the functional of a fitted learner."""
    field = _as_sample(field, "field sample")
    m_vals = functional.apply_batch(field, _predictor(learner))
    theta_hat = float(np.mean(m_vals))
    s2 = float(np.mean((m_vals - theta_hat) ** 2))
    n_field = field.shape[0]
    std_error = math.sqrt(s2 / n_field)
    z = normal_quantile(1.0 - (1.0 - level) / 2.0)
    per_fold = (
        {
            "theta": theta_hat,
            "v_hat": s2,
            "s2_functional": s2,
            "s2_correction": 0.0,
            "fold_size": 0,
        },
    )
    return DebiasResult(
        theta_hat=theta_hat,
        plug_in=theta_hat,
        correction=0.0,
        v_hat=s2,
        std_error=std_error,
        ci_low=theta_hat - z * std_error,
        ci_high=theta_hat + z * std_error,
        level=level,
        xi_hat=float(n_field / n_train) if n_train else float("nan"),
        n_field=n_field,
        n_train=n_train,
        variance_mode="corrected",
        per_fold=per_fold,
    )


@dataclass(frozen=True)
class TrainingSummaries:
    """The only training-data features the no-split estimate needs."""

    second_moments: np.ndarray  # (1/T) of the dictionary Gram
    residual_crossprod: np.ndarray  # (1/T) dictionary'residuals
    n_train: int


def training_summaries(
    spec: DictionarySpec, x_train, y_train, fitted_values
) -> TrainingSummaries:
    """Compact sufficient statistics for the no-split correction."""
    x_train = _as_sample(x_train, "training sample")
    y_train = np.asarray(y_train, dtype=float)
    fitted_values = np.asarray(fitted_values, dtype=float)
    if y_train.shape != fitted_values.shape or y_train.shape[0] != x_train.shape[0]:
        raise ValueError("shapes of outcomes and fitted values must match the sample")
    design = expand_matrix(spec, x_train)
    t = x_train.shape[0]
    q_hat = compensated_gram(design) / t
    return TrainingSummaries(
        second_moments=0.5 * (q_hat + q_hat.T),
        residual_crossprod=design.T @ (y_train - fitted_values) / t,
        n_train=t,
    )


@dataclass(frozen=True)
class SummaryEstimate:
    theta_hat: float
    plug_in: float
    correction: float


def estimate_from_summaries(
    functional: LinearFunctional,
    spec: DictionarySpec,
    summaries: TrainingSummaries,
    field,
    predict,
    riesz_penalty: float,
    solver_options: SolverOptions | None = None,
) -> SummaryEstimate:
    """Rebuild the no-split point estimate from summaries plus field data.

    ``predict`` is the trained regression (matrix to vector); no raw
    training rows are touched, so only the variance is out of reach.
    """
    field = _as_sample(field, "field sample")
    m_vec = functional.basis_moments(spec, field)
    moments = RepresenterMoments(
        functional_moments=m_vec,
        second_moments=summaries.second_moments,
        n_field=field.shape[0],
        n_train=summaries.n_train,
    )
    coef = fit_representer(moments, riesz_penalty, solver_options).coefficients
    plug_in = float(np.mean(functional.apply_batch(field, predict)))
    correction = float(coef @ summaries.residual_crossprod)
    return SummaryEstimate(
        theta_hat=plug_in + correction, plug_in=plug_in, correction=correction
    )


def remainder_terms(
    functional: LinearFunctional,
    predict,
    weight_predict,
    oracle_regression,
    oracle_weights,
    x_train,
    y_train,
    field,
) -> dict:
    """Diagnostic decomposition of the estimation error against known truths.

    Given oracle functions for the regression and the reweighting function
    (matrix-to-vector callables), returns the three cross terms whose decay
    drives the estimator's first-order behavior: the regression-error term
    (field functional of the error minus its reweighted training average),
    the weight-error-times-noise term, and the product-of-errors term.
    """
    x_train = _as_sample(x_train, "training sample")
    field = _as_sample(field, "field sample")
    y_train = np.asarray(y_train, dtype=float)

    gamma_hat_train = predict(x_train)
    gamma_true_train = oracle_regression(x_train)
    w_hat = weight_predict(x_train)
    w_true = oracle_weights(x_train)

    r1 = float(
        np.mean(functional.apply_batch(field, predict))
        - np.mean(functional.apply_batch(field, oracle_regression))
        + np.mean(w_true * (gamma_true_train - gamma_hat_train))
    )
    r2 = float(np.mean((w_hat - w_true) * (y_train - gamma_true_train)))
    r3 = float(np.mean((w_hat - w_true) * (gamma_true_train - gamma_hat_train)))
    return {"regression_error": r1, "weight_error": r2, "error_product": r3}
