"""Estimation of the reweighting (Riesz representer) function.

The debiasing weight is the function alpha with
E[m(Z, g)] = E[alpha(X) g(X)] for all square-integrable g. On a dictionary
b(x) it is estimated as b(x)'c where c minimizes

    -2 m'c + c'Q c + 2 r ||c||_1,

with the linear term m built from the field sample (the functional applied
to each dictionary element) and the quadratic term Q the training-sample
second moment of the dictionary. A pseudo-inverse alternative regresses
the training residuals on the dictionary by minimum-norm least squares.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .dictionary import DictionarySpec, expand_matrix
from .functionals import LinearFunctional, MeanOutcome
from .solvers import (
    LassoFit,
    PenalizedQuadraticProblem,
    SolverOptions,
    default_penalty,
    penalized_quadratic,
)


def compensated_gram(design, chunk_size: int = 8192) -> np.ndarray:
    """Sum of outer products of the rows, accumulated with Kahan compensation.

    Rows are processed in fixed-size chunks (BLAS per chunk) and the chunk
    results added with compensated summation in a deterministic order, so
    accumulation error stays far below solver tolerances even for long
    samples.
    """
    design = np.asarray(design, dtype=float)
    j = design.shape[1]
    total = np.zeros((j, j))
    comp = np.zeros((j, j))
    for start in range(0, design.shape[0], chunk_size):
        block = design[start : start + chunk_size]
        term = block.T @ block - comp
        acc = total + term
        comp = (acc - total) - term
        total = acc
    return total


@dataclass(frozen=True)
class RepresenterMoments:
    """Sample moments defining the reweighting problem.

    ``functional_moments`` holds the field-sample mean of the functional at
    each dictionary element; ``second_moments`` is the symmetrized
    training-sample second moment of the dictionary.
    """

    functional_moments: np.ndarray
    second_moments: np.ndarray
    n_field: int
    n_train: int

    def __post_init__(self):
        m = np.asarray(self.functional_moments, dtype=float)
        q = np.asarray(self.second_moments, dtype=float)
        if not np.all(np.isfinite(m)):
            raise ValueError("functional moments contain non-finite values")
        if q.shape != (m.shape[0], m.shape[0]):
            raise ValueError(f"second moment shape {q.shape} does not match {m.shape}")
        scale = max(1.0, float(np.max(np.abs(q))))
        if float(np.max(np.abs(q - q.T))) > 1e-10 * scale:
            raise ValueError("second moment matrix is not symmetric")
        eigmin = float(np.linalg.eigvalsh(q)[0])
        if eigmin < -1e-8 * scale:
            raise ValueError(f"second moment matrix is not PSD (min eigval {eigmin})")
        object.__setattr__(self, "functional_moments", m)
        object.__setattr__(self, "second_moments", 0.5 * (q + q.T))


@dataclass(frozen=True)
class RieszFit:
    coefficients: np.ndarray
    penalty: float
    diagnostics: LassoFit


def compute_moments(
    functional: LinearFunctional,
    spec: DictionarySpec,
    field,
    train,
    chunk_size: int = 8192,
) -> RepresenterMoments:
    """Build the reweighting problem moments from field and training samples."""
    field = np.asarray(field, dtype=float)
    train = np.asarray(train, dtype=float)
    if field.ndim != 2 or field.shape[0] == 0:
        raise ValueError("field sample must be a nonempty matrix")
    if train.ndim != 2 or train.shape[0] == 0:
        raise ValueError("training sample must be a nonempty matrix")
    m = functional.basis_moments(spec, field)
    design = expand_matrix(spec, train)
    q = compensated_gram(design, chunk_size) / train.shape[0]
    q = 0.5 * (q + q.T)
    return RepresenterMoments(
        functional_moments=m,
        second_moments=q,
        n_field=field.shape[0],
        n_train=train.shape[0],
    )


def fit_representer(
    moments: RepresenterMoments,
    penalty: float,
    opts: SolverOptions | None = None,
    warm_start=None,
) -> RieszFit:
    """Solve the penalized quadratic for the reweighting coefficients."""
    prob = PenalizedQuadraticProblem(
        linear=moments.functional_moments,
        quadratic=moments.second_moments,
        penalty=penalty,
    )
    fit = penalized_quadratic(prob, opts, warm_start=warm_start)
    return RieszFit(coefficients=fit.coefficients, penalty=float(penalty), diagnostics=fit)


def debias_weights(spec: DictionarySpec, coefficients, x) -> np.ndarray | float:
    """Reweighting value b(x)'c at one input vector or at each matrix row."""
    coefficients = np.asarray(coefficients, dtype=float)
    if coefficients.shape != (spec.output_dim,):
        raise ValueError(
            f"expected {spec.output_dim} coefficients, got {coefficients.shape}"
        )
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return float(expand_matrix(spec, x[np.newaxis, :])[0] @ coefficients)
    return expand_matrix(spec, x) @ coefficients


def residual_projection_coefficients(
    design, y, fitted_values, rank_tol: float = 1e-10
) -> np.ndarray:
    """Minimum-norm least squares coefficients of the residuals on the dictionary.

    Computed through a rank-revealing SVD of the design; singular values
    below ``rank_tol`` times the largest are treated as zero.
    """
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    fitted_values = np.asarray(fitted_values, dtype=float)
    if y.shape != fitted_values.shape or y.shape[0] != design.shape[0]:
        raise ValueError("residual inputs do not match the design matrix rows")
    if not (
        np.all(np.isfinite(design))
        and np.all(np.isfinite(y))
        and np.all(np.isfinite(fitted_values))
    ):
        raise ValueError("non-finite inputs")
    coef, _, _, _ = np.linalg.lstsq(design, y - fitted_values, rcond=rank_tol)
    return coef


def pseudo_inverse_weights(moments: RepresenterMoments, rank_tol: float = 1e-10):
    """Reweighting coefficients via the pseudo-inverse of the second moment."""
    return np.linalg.pinv(moments.second_moments, rcond=rank_tol, hermitian=True) @ (
        moments.functional_moments
    )


class RieszRepresenter(BaseEstimator):
    """Scikit-learn style estimator for the reweighting function.

    ``fit(X, Z)`` takes the training inputs and the field sample; after
    fitting, ``predict(X)`` returns the estimated reweighting values.
    """

    def __init__(
        self,
        functional: LinearFunctional | None = None,
        max_order: int = 2,
        include_intercept: bool = True,
        penalty: float | None = None,
        penalty_scale: float = 0.5,
    ):
        self.functional = functional
        self.max_order = max_order
        self.include_intercept = include_intercept
        self.penalty = penalty
        self.penalty_scale = penalty_scale

    def fit(self, X, Z):
        X = check_array(X)
        Z = check_array(Z)
        self.n_features_in_ = X.shape[1]
        self.spec_ = DictionarySpec(
            input_dim=self.n_features_in_,
            max_order=self.max_order,
            include_intercept=self.include_intercept,
        )
        functional = self.functional if self.functional is not None else MeanOutcome()
        self.moments_ = compute_moments(functional, self.spec_, Z, X)
        r = self.penalty
        if r is None:
            r = default_penalty(
                min(self.moments_.n_field, self.moments_.n_train),
                self.spec_.output_dim,
                self.penalty_scale,
            )
        self.fit_ = fit_representer(self.moments_, r)
        self.coef_ = self.fit_.coefficients
        self.penalty_ = r
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, ensure_min_samples=0)
        return debias_weights(self.spec_, self.coef_, X)
