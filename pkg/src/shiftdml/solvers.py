"""Cyclic coordinate descent for the two l1-penalized programs.

Both the penalized regression

    min_b (1/T) sum_t (y_t - B_t'b)^2 + 2 r sum_j |b_j|

and the penalized quadratic

    min_c -2 m'c + c'Q c + 2 r sum_j |c_j|

share first-order conditions once the regression is written in terms of
its sample moments m = (1/T) B'y and Q = (1/T) B'B, so a single solver
core drives both. Convergence requires the maximum coordinate change to
fall below ``coord_tol`` and the subgradient (KKT) residual to fall below
``kkt_tol``.
"""

from dataclasses import dataclass, field

import numpy as np


class DegenerateCoordinateError(ValueError):
    """A coordinate with zero curvature and a nonzero linear term at zero penalty."""


@dataclass
class SolverOptions:
    max_sweeps: int = 10_000
    coord_tol: float = 1e-8
    kkt_tol: float = 1e-6
    penalize_intercept: bool = True
    standardize: bool = False
    track_objective: bool = False


@dataclass(frozen=True)
class LassoFit:
    coefficients: np.ndarray
    penalty: float
    iterations: int
    converged: bool
    max_kkt_violation: float
    objective_path: tuple = ()


@dataclass
class PenalizedQuadraticProblem:
    """Linear term, symmetric PSD quadratic term, and scalar penalty level.

    The quadratic matrix is symmetrized on construction; asymmetry beyond
    1e-10 (relative to its largest entry) is rejected.
    """

    linear: np.ndarray
    quadratic: np.ndarray
    penalty: float

    def __post_init__(self):
        self.linear = np.asarray(self.linear, dtype=float)
        self.quadratic = np.asarray(self.quadratic, dtype=float)
        if self.linear.ndim != 1:
            raise ValueError("linear term must be a vector")
        j = self.linear.shape[0]
        if self.quadratic.shape != (j, j):
            raise ValueError(
                f"quadratic term must be {j}x{j}, got {self.quadratic.shape}"
            )
        if not np.all(np.isfinite(self.linear)) or not np.all(
            np.isfinite(self.quadratic)
        ):
            raise ValueError("non-finite problem data")
        if self.penalty < 0:
            raise ValueError(f"penalty must be nonnegative, got {self.penalty}")
        scale = max(1.0, float(np.max(np.abs(self.quadratic))))
        asym = float(np.max(np.abs(self.quadratic - self.quadratic.T)))
        if asym > 1e-10 * scale:
            raise ValueError(f"quadratic term is not symmetric (max asymmetry {asym})")
        self.quadratic = 0.5 * (self.quadratic + self.quadratic.T)


def soft_threshold(z, r):
    """sign(z) * max(|z| - r, 0); works on scalars and arrays."""
    if np.any(np.asarray(r) < 0):
        raise ValueError("threshold must be nonnegative")
    return np.sign(z) * np.maximum(np.abs(z) - r, 0.0)


def penalized_objective(linear, quadratic, penalty_vec, coeffs) -> float:
    """Value of -2 m'c + c'Q c + 2 sum_j r_j |c_j|."""
    coeffs = np.asarray(coeffs, dtype=float)
    return float(
        -2.0 * linear @ coeffs
        + coeffs @ (quadratic @ coeffs)
        + 2.0 * np.asarray(penalty_vec) @ np.abs(coeffs)
    )


def lasso_objective(design, y, penalty, coeffs) -> float:
    """Value of (1/T) ||y - B c||^2 + 2 r ||c||_1."""
    resid = np.asarray(y, float) - np.asarray(design, float) @ np.asarray(coeffs, float)
    t = len(resid)
    return float(resid @ resid / t + 2.0 * penalty * np.sum(np.abs(coeffs)))


def kkt_violation(linear, quadratic, penalty_vec, coeffs) -> float:
    """Largest subgradient residual of the penalized quadratic at ``coeffs``.

    For an active coordinate the stationarity residual is
    |m_j - (Qc)_j - r_j sign(c_j)|; for an inactive one the slack is
    max(|m_j - (Qc)_j| - r_j, 0).
    """
    coeffs = np.asarray(coeffs, dtype=float)
    grad = np.asarray(linear, float) - np.asarray(quadratic, float) @ coeffs
    pen = np.broadcast_to(np.asarray(penalty_vec, float), coeffs.shape)
    active = coeffs != 0.0
    viol = np.where(
        active,
        np.abs(grad - pen * np.sign(coeffs)),
        np.maximum(np.abs(grad) - pen, 0.0),
    )
    return float(np.max(viol)) if viol.size else 0.0


def _coordinate_descent(linear, quadratic, penalty_vec, start, opts: SolverOptions):
    j_dim = linear.shape[0]
    x = np.zeros(j_dim) if start is None else np.asarray(start, dtype=float).copy()
    qdiag = np.diag(quadratic).copy()
    live = qdiag > 0.0
    dead = np.where(~live)[0]
    for j in dead:
        if penalty_vec[j] == 0.0 and linear[j] != 0.0:
            raise DegenerateCoordinateError(
                f"coordinate {j} has zero curvature, zero penalty, and a "
                f"nonzero linear term {linear[j]}"
            )
        x[j] = 0.0

    history = []
    converged = False
    sweeps = 0
    kkt = np.inf
    for sweep in range(1, opts.max_sweeps + 1):
        sweeps = sweep
        qx = quadratic @ x  # refreshed each sweep to cap incremental drift
        max_delta = 0.0
        for j in range(j_dim):
            if not live[j]:
                continue
            z = linear[j] - qx[j] + qdiag[j] * x[j]
            new = soft_threshold(z, penalty_vec[j]) / qdiag[j]
            delta = new - x[j]
            if delta != 0.0:
                qx += quadratic[:, j] * delta
                x[j] = new
                ad = abs(delta)
                if ad > max_delta:
                    max_delta = ad
        if opts.track_objective:
            history.append(penalized_objective(linear, quadratic, penalty_vec, x))
        if max_delta < opts.coord_tol:
            kkt = kkt_violation(linear, quadratic, penalty_vec, x)
            if kkt <= opts.kkt_tol:
                converged = True
                break
    if not converged:
        kkt = kkt_violation(linear, quadratic, penalty_vec, x)
    return x, sweeps, converged, kkt, tuple(history)


def _penalty_vector(j_dim, penalty, opts: SolverOptions):
    pen = np.full(j_dim, float(penalty))
    if not opts.penalize_intercept and j_dim > 0:
        pen[0] = 0.0  # dictionary convention: intercept is the first column
    return pen


def _solve_moments(linear, quadratic, penalty, opts, warm_start):
    pen = _penalty_vector(linear.shape[0], penalty, opts)
    if opts.standardize:
        scale = np.sqrt(np.diag(quadratic))
        scale = np.where(scale > 0.0, scale, 1.0)
        x, sweeps, conv, _, hist = _coordinate_descent(
            linear / scale,
            quadratic / np.outer(scale, scale),
            pen,
            None if warm_start is None else np.asarray(warm_start) * scale,
            opts,
        )
        x = x / scale
        kkt = kkt_violation(linear, quadratic, pen * scale, x)
    else:
        x, sweeps, conv, kkt, hist = _coordinate_descent(
            linear, quadratic, pen, warm_start, opts
        )
    return LassoFit(
        coefficients=x,
        penalty=float(penalty),
        iterations=sweeps,
        converged=conv,
        max_kkt_violation=kkt,
        objective_path=hist,
    )


def penalized_quadratic(
    prob: PenalizedQuadraticProblem, opts: SolverOptions | None = None, warm_start=None
) -> LassoFit:
    """Minimize -2 m'c + c'Q c + 2 r ||c||_1 by cyclic coordinate descent."""
    opts = opts or SolverOptions()
    return _solve_moments(prob.linear, prob.quadratic, prob.penalty, opts, warm_start)


def lasso_regression(
    design, y, penalty: float, opts: SolverOptions | None = None, warm_start=None
) -> LassoFit:
    """Penalized least squares on a design matrix, via the shared moment form."""
    opts = opts or SolverOptions()
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    if design.ndim != 2:
        raise ValueError("design must be a matrix")
    if y.ndim != 1 or y.shape[0] != design.shape[0]:
        raise ValueError(
            f"outcome length {y.shape} does not match {design.shape[0]} rows"
        )
    if design.shape[0] < 1:
        raise ValueError("need at least one observation")
    if not np.all(np.isfinite(design)) or not np.all(np.isfinite(y)):
        raise ValueError("non-finite inputs")
    if penalty < 0:
        raise ValueError(f"penalty must be nonnegative, got {penalty}")
    t = design.shape[0]
    gram = design.T @ design / t
    gram = 0.5 * (gram + gram.T)
    return _solve_moments(design.T @ y / t, gram, penalty, opts, warm_start)


def default_penalty(n_obs: int, n_terms: int, scale: float = 0.5) -> float:
    """Rate-based default penalty level ``scale * sqrt(log(J) / n)``."""
    if n_obs < 1 or n_terms < 1:
        raise ValueError("sample size and dictionary size must be positive")
    return float(scale * np.sqrt(np.log(n_terms) / n_obs))


def cross_validated_penalty(
    design,
    y,
    grid=None,
    n_folds: int = 5,
    seed: int = 0,
    opts: SolverOptions | None = None,
):
    """Pick the penalty on a grid by K-fold cross-validated prediction error.

    Returns ``(best_penalty, grid, cv_mse)``. Fits warm-start along the
    grid from largest to smallest penalty within each fold.
    """
    opts = opts or SolverOptions()
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    t = design.shape[0]
    if grid is None:
        r_max = float(np.max(np.abs(design.T @ y)) / t)
        r_max = r_max if r_max > 0 else 1.0
        grid = np.geomspace(r_max, r_max * 1e-3, 20)
    grid = np.sort(np.asarray(grid, dtype=float))[::-1]
    if n_folds < 2 or n_folds > t:
        raise ValueError(f"n_folds must be in [2, {t}], got {n_folds}")
    assign = np.random.default_rng(seed).permutation(t) % n_folds
    mse = np.zeros(grid.shape[0])
    for fold in range(n_folds):
        hold = assign == fold
        warm = None
        for i, r in enumerate(grid):
            fit = lasso_regression(design[~hold], y[~hold], r, opts, warm_start=warm)
            warm = fit.coefficients
            resid = y[hold] - design[hold] @ fit.coefficients
            mse[i] += float(resid @ resid) / hold.sum() / n_folds
    best = int(np.argmin(mse))
    return float(grid[best]), grid, mse
