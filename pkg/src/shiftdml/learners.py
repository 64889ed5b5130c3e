"""Regression learners behind a common scikit-learn fit/predict surface.

Two learners produce the trained regression used by the estimators: a
penalized polynomial regression (dictionary expansion plus the coordinate
descent solver) and a small fully connected ReLU network trained by plain
mini-batch SGD with an L2 weight penalty.
"""

import json

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .dictionary import DictionarySpec, expand_matrix
from .solvers import SolverOptions, default_penalty, lasso_regression

PARAMS_FORMAT = "shiftdml-mlp-params"
PARAMS_VERSION = 1


class TrainingDivergenceError(RuntimeError):
    """Raised when the training loss becomes non-finite."""


class LassoDictionaryRegressor(BaseEstimator, RegressorMixin):
    """Penalized least squares on a polynomial dictionary.

    Parameters
    ----------
    max_order : polynomial order of the dictionary (0 = intercept only).
    include_intercept : prepend the constant dictionary term.
    penalty : l1 penalty level; ``None`` uses the rate default
        ``penalty_scale * sqrt(log(J) / n)``.
    penalty_scale : multiplier for the default penalty rule.
    penalize_intercept : include the intercept in the l1 penalty (default,
        matching the penalized objective as stated).
    standardize : solve on unit-second-moment columns and back-transform.
    """

    def __init__(
        self,
        max_order: int = 2,
        include_intercept: bool = True,
        penalty: float | None = None,
        penalty_scale: float = 0.5,
        penalize_intercept: bool = True,
        standardize: bool = False,
        coord_tol: float = 1e-8,
        kkt_tol: float = 1e-6,
        max_sweeps: int = 10_000,
    ):
        self.max_order = max_order
        self.include_intercept = include_intercept
        self.penalty = penalty
        self.penalty_scale = penalty_scale
        self.penalize_intercept = penalize_intercept
        self.standardize = standardize
        self.coord_tol = coord_tol
        self.kkt_tol = kkt_tol
        self.max_sweeps = max_sweeps

    def _solver_options(self) -> SolverOptions:
        return SolverOptions(
            max_sweeps=self.max_sweeps,
            coord_tol=self.coord_tol,
            kkt_tol=self.kkt_tol,
            penalize_intercept=self.penalize_intercept,
            standardize=self.standardize,
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        self.n_features_in_ = X.shape[1]
        self.spec_ = DictionarySpec(
            input_dim=self.n_features_in_,
            max_order=self.max_order,
            include_intercept=self.include_intercept,
        )
        design = expand_matrix(self.spec_, X)
        r = self.penalty
        if r is None:
            r = default_penalty(X.shape[0], self.spec_.output_dim, self.penalty_scale)
        self.solver_fit_ = lasso_regression(design, y, r, self._solver_options())
        self.coef_ = self.solver_fit_.coefficients
        self.penalty_ = r
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, ensure_2d=True, allow_nd=False, ensure_min_samples=0)
        return expand_matrix(self.spec_, X) @ self.coef_


def _he_uniform_init(layer_sizes, rng):
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return weights, biases


class MlpRegressor(BaseEstimator, RegressorMixin):
    """Fully connected ReLU network trained by mini-batch SGD.

    The loss is the mini-batch mean squared error plus
    ``0.5 * l2_penalty * sum(W**2)`` over the weight matrices (biases are
    not penalized). With ``warm_start=True`` a refit continues training
    from the current state up to the (possibly increased) ``epochs`` total,
    drawing batch shuffles from a persistent stream so that interrupted and
    one-shot training schedules produce identical parameters.
    """

    def __init__(
        self,
        hidden_layers=(32, 32, 32, 32),
        learning_rate: float = 0.01,
        batch_size: int = 1024,
        epochs: int = 100,
        l2_penalty: float = 2e-4,
        max_epochs: int = 500,
        seed: int = 0,
        warm_start: bool = False,
    ):
        self.hidden_layers = hidden_layers
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.l2_penalty = l2_penalty
        self.max_epochs = max_epochs
        self.seed = seed
        self.warm_start = warm_start

    def _validate(self):
        if not self.hidden_layers:
            raise ValueError("hidden_layers must be nonempty")
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise ValueError("learning_rate and batch_size must be positive")
        if self.l2_penalty < 0:
            raise ValueError("l2_penalty must be nonnegative")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.epochs > self.max_epochs:
            raise ValueError(
                f"epochs={self.epochs} exceeds max_epochs={self.max_epochs}"
            )

    def _forward(self, X):
        """Returns the list of post-activation values, ending in the output."""
        activations = [X]
        h = X
        for i, (w, b) in enumerate(zip(self.weights_, self.biases_)):
            h = h @ w + b
            if i < len(self.weights_) - 1:
                h = np.maximum(h, 0.0)
            activations.append(h)
        return activations

    def _loss_and_gradients(self, X, y):
        """Mean squared error plus weight penalty, with its exact gradients."""
        acts = self._forward(X)
        pred = acts[-1][:, 0]
        resid = pred - y
        n = X.shape[0]
        loss = float(resid @ resid / n)
        loss += 0.5 * self.l2_penalty * sum(float(np.sum(w * w)) for w in self.weights_)
        grad_w = [None] * len(self.weights_)
        grad_b = [None] * len(self.biases_)
        delta = (2.0 * resid / n)[:, np.newaxis]
        for i in range(len(self.weights_) - 1, -1, -1):
            grad_w[i] = acts[i].T @ delta + self.l2_penalty * self.weights_[i]
            grad_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights_[i].T) * (acts[i] > 0.0)
        return loss, grad_w, grad_b

    def _training_loss(self, X, y):
        acts = self._forward(X)
        resid = acts[-1][:, 0] - y
        loss = float(resid @ resid / X.shape[0])
        return loss + 0.5 * self.l2_penalty * sum(
            float(np.sum(w * w)) for w in self.weights_
        )

    def fit(self, X, y):
        self._validate()
        X, y = check_X_y(X, y, y_numeric=True)
        fresh = not (self.warm_start and hasattr(self, "weights_"))
        if fresh:
            self.n_features_in_ = X.shape[1]
            sizes = [X.shape[1], *self.hidden_layers, 1]
            self._rng = np.random.default_rng(self.seed)
            self.weights_, self.biases_ = _he_uniform_init(sizes, self._rng)
            self.epochs_trained_ = 0
        elif X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"warm start expects {self.n_features_in_} features, got {X.shape[1]}"
            )
        n = X.shape[0]
        for epoch in range(self.epochs_trained_ + 1, self.epochs + 1):
            order = self._rng.permutation(n)
            for start in range(0, n, self.batch_size):
                batch = order[start : start + self.batch_size]
                _, grad_w, grad_b = self._loss_and_gradients(X[batch], y[batch])
                for i in range(len(self.weights_)):
                    self.weights_[i] -= self.learning_rate * grad_w[i]
                    self.biases_[i] -= self.learning_rate * grad_b[i]
            loss = self._training_loss(X, y)
            if not np.isfinite(loss):
                raise TrainingDivergenceError(
                    f"training loss became non-finite at epoch {epoch}"
                )
            self.epochs_trained_ = epoch
        return self

    def predict(self, X):
        check_is_fitted(self, "weights_")
        X = check_array(X, ensure_2d=True, ensure_min_samples=0)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"expected {self.n_features_in_} features, got {X.shape[1]}"
            )
        return self._forward(X)[-1][:, 0]

    def parameter_count(self) -> int:
        check_is_fitted(self, "weights_")
        return sum(w.size for w in self.weights_) + sum(b.size for b in self.biases_)

    def save_params(self, path):
        """Write trained parameters as versioned JSON (for run resumption)."""
        check_is_fitted(self, "weights_")
        payload = {
            "format": PARAMS_FORMAT,
            "version": PARAMS_VERSION,
            "n_features": int(self.n_features_in_),
            "hidden_layers": [int(h) for h in self.hidden_layers],
            "epochs_trained": int(self.epochs_trained_),
            "weights": [w.tolist() for w in self.weights_],
            "biases": [b.tolist() for b in self.biases_],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)

    def load_params(self, path):
        """Restore parameters previously written by :meth:`save_params`."""
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        if payload.get("format") != PARAMS_FORMAT:
            raise ValueError(f"unrecognized parameter file format in {path}")
        if payload.get("version") != PARAMS_VERSION:
            raise ValueError(f"unsupported parameter file version in {path}")
        self.n_features_in_ = int(payload["n_features"])
        self.weights_ = [np.asarray(w, dtype=float) for w in payload["weights"]]
        self.biases_ = [np.asarray(b, dtype=float) for b in payload["biases"]]
        self.epochs_trained_ = int(payload["epochs_trained"])
        self._rng = np.random.default_rng(self.seed)
        return self


class FunctionRegressor(BaseEstimator, RegressorMixin):
    """Wrap a fixed vectorized function as a fitted learner.

    Used to inject known regressions (oracles, deliberately biased fits)
    into the estimators.
    """

    def __init__(self, fn):
        self.fn = fn

    def fit(self, X=None, y=None):
        return self

    def predict(self, X):
        return np.asarray(self.fn(np.asarray(X, dtype=float)), dtype=float)
