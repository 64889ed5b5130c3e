"""Monte Carlo data generator: sparse random polynomials under covariate shift.

The regression truth is a polynomial of the form

    g(u) = scale * (w0 + w1 * (c1'u) + w2 * (c2'u)^2 + ... + wQ * (cQ'u)^Q)

with per-order weights ``w`` and per-order linear coefficients ``c``
(rows of ``linear_coeffs``), most of which are zeroed for sparsity.
Training covariates mix a standard normal with a low-weight uniform on
[-5, 5]; the field sample uses the same mixture with the normal mean
shifted. Outcomes add centered Gaussian noise.
"""

import json
from dataclasses import dataclass, replace

import numpy as np

_ORACLE_STREAM_TAG = 2  # stream namespaces under a spec seed
_REP_STREAM_TAG = 1
_ORACLE_CHUNK = 1 << 17


@dataclass(frozen=True)
class SimSpec:
    """Frozen description of one simulation specification."""

    input_dim: int
    order: int
    order_weights: np.ndarray  # length order+1, constant term first
    linear_coeffs: np.ndarray  # (order, input_dim), dimension scaling applied
    dim_scale: np.ndarray  # per-dimension multiplier baked into linear_coeffs
    output_scale: float
    noise_sd: float
    shift: np.ndarray  # per-dimension field mean shift
    uniform_weight: float
    sparsity: float
    seed: int

    def __post_init__(self):
        object.__setattr__(
            self, "order_weights", np.asarray(self.order_weights, dtype=float)
        )
        object.__setattr__(
            self, "linear_coeffs", np.asarray(self.linear_coeffs, dtype=float)
        )
        object.__setattr__(self, "dim_scale", np.asarray(self.dim_scale, dtype=float))
        object.__setattr__(self, "shift", np.asarray(self.shift, dtype=float))
        if self.input_dim < 1 or self.order < 1:
            raise ValueError("input_dim and order must be positive")
        if self.noise_sd <= 0:
            raise ValueError("noise_sd must be positive")
        if not 0.0 <= self.uniform_weight < 1.0:
            raise ValueError("uniform_weight must lie in [0, 1)")
        if self.order_weights.shape != (self.order + 1,):
            raise ValueError("order_weights must have length order+1")
        if self.linear_coeffs.shape != (self.order, self.input_dim):
            raise ValueError("linear_coeffs must be (order, input_dim)")
        if self.shift.shape != (self.input_dim,):
            raise ValueError("shift must have one entry per dimension")

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "order": self.order,
            "order_weights": self.order_weights.tolist(),
            "linear_coeffs": self.linear_coeffs.tolist(),
            "dim_scale": self.dim_scale.tolist(),
            "output_scale": self.output_scale,
            "noise_sd": self.noise_sd,
            "shift": self.shift.tolist(),
            "uniform_weight": self.uniform_weight,
            "sparsity": self.sparsity,
            "seed": self.seed,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data: dict) -> "SimSpec":
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "SimSpec":
        return cls.from_dict(json.loads(text))


def random_spec(
    master_seed: int,
    *,
    input_dim: int = 6,
    order: int = 3,
    sparsity: float = 0.6,
    first_dim_scale: float = 1.71,
    last_dim_scale: float = 0.29,
    noise_sd: float = 0.1,
    shift_size: float = 1.1,
    shift_in_noise_units: bool = False,
    uniform_weight: float = 0.05,
    pilot_size: int = 100_000,
) -> SimSpec:
    """Draw one specification: random polynomial weights, sparsified and scaled.

    Entries of the per-order coefficients are zeroed independently with
    probability ``sparsity``; the first and last dimensions are rescaled by
    the stated multipliers. The output scale maps twice the sample standard
    deviation of the raw polynomial, over a dedicated unshifted pilot draw
    of ``pilot_size`` points, to 1, keeping outputs near [-1, 1]. The shift
    is ``shift_size`` in covariate units, or times ``noise_sd`` when
    ``shift_in_noise_units`` is set.
    """
    param_seq, pilot_seq = np.random.SeedSequence(master_seed).spawn(2)
    rng = np.random.default_rng(param_seq)
    order_weights = rng.standard_normal(order + 1)
    coeffs = rng.standard_normal((order, input_dim))
    coeffs[rng.random((order, input_dim)) < sparsity] = 0.0
    dim_scale = np.ones(input_dim)
    dim_scale[0] = first_dim_scale
    dim_scale[-1] = last_dim_scale
    coeffs = coeffs * dim_scale
    shift_value = shift_size * (noise_sd if shift_in_noise_units else 1.0)
    spec = SimSpec(
        input_dim=input_dim,
        order=order,
        order_weights=order_weights,
        linear_coeffs=coeffs,
        dim_scale=dim_scale,
        output_scale=1.0,
        noise_sd=noise_sd,
        shift=np.full(input_dim, shift_value),
        uniform_weight=uniform_weight,
        sparsity=sparsity,
        seed=int(master_seed),
    )
    pilot = draw_covariates(spec, pilot_size, False, np.random.default_rng(pilot_seq))
    sd = float(eval_g_batch(spec, pilot).std())
    scale = 1.0 if sd < 1e-12 else 1.0 / (2.0 * sd)
    return replace(spec, output_scale=scale)


def eval_g_batch(spec: SimSpec, data) -> np.ndarray:
    """Polynomial truth at each row: inner sums, then powers, then the weighted sum."""
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != spec.input_dim:
        raise ValueError(f"expected {spec.input_dim} columns, got shape {data.shape}")
    inner = data @ spec.linear_coeffs.T  # (n, order)
    total = np.full(data.shape[0], spec.order_weights[0])
    for q in range(1, spec.order + 1):
        total = total + spec.order_weights[q] * inner[:, q - 1] ** q
    return spec.output_scale * total


def eval_g(spec: SimSpec, u) -> float:
    u = np.asarray(u, dtype=float)
    if u.ndim != 1 or u.shape[0] != spec.input_dim:
        raise ValueError(f"expected a vector of length {spec.input_dim}")
    return float(eval_g_batch(spec, u[np.newaxis, :])[0])


def draw_covariates(spec: SimSpec, n: int, shifted: bool, rng) -> np.ndarray:
    """Mixture draw: uniform [-5, 5] with the stated weight, else unit normals.

    The normal component's mean is the per-dimension shift when ``shifted``.
    """
    if n < 1:
        raise ValueError(f"need at least one observation, got {n}")
    mask = rng.random(n) < spec.uniform_weight
    normal = rng.standard_normal((n, spec.input_dim))
    if shifted:
        normal = normal + spec.shift
    uniform = rng.uniform(-5.0, 5.0, size=(n, spec.input_dim))
    return np.where(mask[:, np.newaxis], uniform, normal)


def draw_outcomes(spec: SimSpec, covariates, rng) -> np.ndarray:
    """Truth at each row plus centered Gaussian noise."""
    covariates = np.asarray(covariates, dtype=float)
    return eval_g_batch(spec, covariates) + spec.noise_sd * rng.standard_normal(
        covariates.shape[0]
    )


@dataclass(frozen=True)
class OracleEstimate:
    value: float
    mc_se: float


def oracle_theta(spec: SimSpec, n_oracle: int, rng) -> OracleEstimate:
    """Large-sample Monte Carlo target: mean noisy outcome over the shifted draw."""
    if n_oracle < 10_000:
        raise ValueError(f"oracle draw must use at least 1e4 points, got {n_oracle}")
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_oracle:
        take = min(_ORACLE_CHUNK, n_oracle - done)
        z = draw_covariates(spec, take, True, rng)
        vals = draw_outcomes(spec, z, rng)
        total += float(vals.sum())
        total_sq += float(vals @ vals)
        done += take
    mean = total / n_oracle
    var = max(total_sq / n_oracle - mean * mean, 0.0) * n_oracle / (n_oracle - 1)
    return OracleEstimate(value=mean, mc_se=float(np.sqrt(var / n_oracle)))


@dataclass(frozen=True)
class SimSample:
    """One replication's datasets plus the specification's oracle target."""

    x_train: np.ndarray
    y_train: np.ndarray
    v_validate: np.ndarray | None
    y_validate: np.ndarray | None
    z_field: np.ndarray
    truth_theta: float
    truth_mc_se: float

    def __post_init__(self):
        for name in ("x_train", "y_train", "z_field"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite values")
        if not np.isfinite(self.truth_theta):
            raise ValueError("truth_theta must be finite")


def spec_oracle(spec: SimSpec, n_oracle: int = 1_000_000) -> OracleEstimate:
    """Oracle target on the spec's dedicated stream (same for every replication)."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, _ORACLE_STREAM_TAG]))
    return oracle_theta(spec, n_oracle, rng)


def draw_sample(
    spec: SimSpec,
    n_train: int,
    n_field: int,
    n_validate: int = 0,
    rep_seed: int = 0,
    truth: OracleEstimate | None = None,
    oracle_size: int = 1_000_000,
) -> SimSample:
    """Draw one replication with independent streams per dataset role."""
    root = np.random.SeedSequence([spec.seed, _REP_STREAM_TAG, int(rep_seed)])
    train_seq, validate_seq, field_seq = root.spawn(3)
    rng = np.random.default_rng(train_seq)
    x_train = draw_covariates(spec, n_train, False, rng)
    y_train = draw_outcomes(spec, x_train, rng)
    v_validate = y_validate = None
    if n_validate > 0:
        rng = np.random.default_rng(validate_seq)
        v_validate = draw_covariates(spec, n_validate, False, rng)
        y_validate = draw_outcomes(spec, v_validate, rng)
    z_field = draw_covariates(spec, n_field, True, np.random.default_rng(field_seq))
    if truth is None:
        truth = spec_oracle(spec, oracle_size)
    return SimSample(
        x_train=x_train,
        y_train=y_train,
        v_validate=v_validate,
        y_validate=y_validate,
        z_field=z_field,
        truth_theta=truth.value,
        truth_mc_se=truth.mc_se,
    )
