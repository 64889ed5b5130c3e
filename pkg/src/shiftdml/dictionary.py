"""Polynomial dictionary expansion shared by the regression and reweighting steps.

A dictionary of all monomials up to a fixed total degree is the common
feature space for the penalized regression, the reweighting-function
estimate, and the pseudo-inverse correction, so the expansion lives in one
place with a fixed, documented term order.
"""

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations_with_replacement
from math import comb

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted


@lru_cache(maxsize=None)
def _term_indices(input_dim: int, max_order: int, include_intercept: bool):
    start = 0 if include_intercept else 1
    terms = []
    for degree in range(start, max_order + 1):
        terms.extend(combinations_with_replacement(range(input_dim), degree))
    return tuple(terms)


@dataclass(frozen=True)
class DictionarySpec:
    """All monomials of total degree <= ``max_order`` in ``input_dim`` variables.

    Terms are ordered degree-ascending and lexicographically within a degree,
    so two inputs at order 2 expand to ``[1, x1, x2, x1*x1, x1*x2, x2*x2]``.
    Each unordered cross term appears exactly once. ``max_order=0`` gives the
    intercept-only dictionary.
    """

    input_dim: int
    max_order: int = 2
    include_intercept: bool = True

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be positive, got {self.input_dim}")
        if self.max_order < 0:
            raise ValueError(f"max_order must be nonnegative, got {self.max_order}")
        if self.max_order == 0 and not self.include_intercept:
            raise ValueError("max_order=0 without an intercept leaves no terms")

    @property
    def output_dim(self) -> int:
        full = comb(self.input_dim + self.max_order, self.max_order)
        return full if self.include_intercept else full - 1

    @property
    def terms(self):
        """Tuple of variable-index tuples, one per dictionary element."""
        return _term_indices(self.input_dim, self.max_order, self.include_intercept)


def expand(spec: DictionarySpec, x) -> np.ndarray:
    """Expand a single input vector into its dictionary values."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != spec.input_dim:
        raise ValueError(
            f"expected a vector of length {spec.input_dim}, got shape {x.shape}"
        )
    return expand_matrix(spec, x[np.newaxis, :])[0]


def expand_matrix(spec: DictionarySpec, data) -> np.ndarray:
    """Expand each row of ``data``; row i of the result is ``expand(spec, data[i])``."""
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != spec.input_dim:
        raise ValueError(
            f"expected a matrix with {spec.input_dim} columns, got shape {data.shape}"
        )
    n = data.shape[0]
    out = np.empty((n, spec.output_dim))
    for j, term in enumerate(spec.terms):
        if len(term) == 0:
            out[:, j] = 1.0
        else:
            col = data[:, term[0]].copy()
            for k in term[1:]:
                col *= data[:, k]
            out[:, j] = col
    return out


def term_names(spec: DictionarySpec, prefix: str = "x"):
    """Human-readable name per dictionary element, e.g. ``x0*x1``."""
    names = []
    for term in spec.terms:
        names.append("1" if len(term) == 0 else "*".join(f"{prefix}{k}" for k in term))
    return names


class PolynomialFeatureMap(BaseEstimator, TransformerMixin):
    """Dictionary expansion as a scikit-learn transformer.

    ``fit`` only records the input dimension; ``transform`` is the
    deterministic expansion. Useful for composing the dictionary with
    pipelines and model-selection utilities.
    """

    def __init__(self, max_order: int = 2, include_intercept: bool = True):
        self.max_order = max_order
        self.include_intercept = include_intercept

    def fit(self, X, y=None):
        X = check_array(X)
        self.n_features_in_ = X.shape[1]
        self.spec_ = DictionarySpec(
            input_dim=self.n_features_in_,
            max_order=self.max_order,
            include_intercept=self.include_intercept,
        )
        return self

    def transform(self, X):
        check_is_fitted(self, "spec_")
        X = check_array(X)
        return expand_matrix(self.spec_, X)

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "spec_")
        return np.asarray(term_names(self.spec_), dtype=object)
