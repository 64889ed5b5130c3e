"""Linear functionals of a regression, evaluated on field observations.

A functional maps a field row ``z`` and a regression function ``g`` to a
real number, linearly in ``g``. The target parameter is the field-sample
average of the functional applied to the true regression; the built-ins
cover the shifted mean outcome and the fixed-treatment potential outcome.
"""

import abc

import numpy as np

from .dictionary import DictionarySpec, expand, expand_matrix


class LinearFunctional(abc.ABC):
    """Interface: ``apply(z, g)`` must be linear in the function ``g``."""

    @abc.abstractmethod
    def apply(self, z, g) -> float:
        """Evaluate on one field row; ``g`` maps an input vector to a float."""

    def apply_batch(self, field, predict) -> np.ndarray:
        """Functional value for every field row.

        ``predict`` maps a matrix of regression inputs to a vector. The
        default loops ``apply`` row by row; subclasses override with
        vectorized versions.
        """
        field = np.asarray(field, dtype=float)

        def g(x):
            return float(predict(np.asarray(x, dtype=float)[np.newaxis, :])[0])

        return np.array([self.apply(z, g) for z in field])

    def basis_moments(self, spec: DictionarySpec, field) -> np.ndarray:
        """Field-sample mean of the functional applied to each dictionary term."""
        field = np.asarray(field, dtype=float)
        if field.ndim != 2 or field.shape[0] == 0:
            raise ValueError("field sample must be a nonempty matrix")
        out = np.empty(spec.output_dim)
        for j in range(spec.output_dim):
            def g(x, _j=j):
                return float(expand(spec, np.asarray(x, dtype=float))[_j])

            out[j] = np.mean([self.apply(z, g) for z in field])
        return out


class MeanOutcome(LinearFunctional):
    """Average regression value over the field sample: m(z, g) = g(z)."""

    def apply(self, z, g) -> float:
        return float(g(np.asarray(z, dtype=float)))

    def apply_batch(self, field, predict) -> np.ndarray:
        return np.asarray(predict(np.asarray(field, dtype=float)), dtype=float)

    def basis_moments(self, spec: DictionarySpec, field) -> np.ndarray:
        field = np.asarray(field, dtype=float)
        if field.ndim != 2 or field.shape[0] == 0:
            raise ValueError("field sample must be a nonempty matrix")
        return expand_matrix(spec, field).mean(axis=0)


class PotentialOutcome(LinearFunctional):
    """Regression at a fixed treatment level: m(z, g) = g(x(d, z)).

    The field row carries the covariates; the treatment coordinate is
    inserted at ``treatment_index`` before evaluating the regression, or
    overwrites that coordinate when ``substitute=True``.
    """

    def __init__(
        self, treatment_value: float, treatment_index: int = 0, substitute: bool = False
    ):
        self.treatment_value = float(treatment_value)
        self.treatment_index = int(treatment_index)
        self.substitute = bool(substitute)

    def lift(self, field) -> np.ndarray:
        """Map field rows into regression-input rows at the fixed treatment."""
        field = np.asarray(field, dtype=float)
        if field.ndim != 2:
            raise ValueError("field sample must be a matrix")
        if self.substitute:
            out = field.copy()
            out[:, self.treatment_index] = self.treatment_value
            return out
        return np.insert(field, self.treatment_index, self.treatment_value, axis=1)

    def apply(self, z, g) -> float:
        x = self.lift(np.asarray(z, dtype=float)[np.newaxis, :])[0]
        return float(g(x))

    def apply_batch(self, field, predict) -> np.ndarray:
        return np.asarray(predict(self.lift(field)), dtype=float)

    def basis_moments(self, spec: DictionarySpec, field) -> np.ndarray:
        lifted = self.lift(field)
        if lifted.shape[0] == 0:
            raise ValueError("field sample must be nonempty")
        return expand_matrix(spec, lifted).mean(axis=0)
