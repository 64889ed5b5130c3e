"""Experiment runner: replication loops, aggregation, and file outputs.

A run sweeps specifications x replications x training epochs x estimators,
emitting one record per combination. Records are keyed by
(spec_id, rep_id, epoch, estimator) so interrupted runs resume by skipping
keys already on disk. Aggregation turns records into per-(estimator,
epoch) rows of RMS bias (with a bootstrap standard error over
specifications), average RMSE, and CI coverage.
"""

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .debias import (
    TrimSpec,
    plug_in_estimate,
    pseudo_inverse_estimate,
    split_sample_estimate,
)
from .dictionary import DictionarySpec
from .functionals import MeanOutcome
from .learners import (
    LassoDictionaryRegressor,
    MlpRegressor,
    TrainingDivergenceError,
)
from .simgen import SimSpec, draw_sample, random_spec, spec_oracle
from .solvers import default_penalty

ESTIMATOR_NAMES = ("plug_in", "cross_fit", "no_cross_fit", "pseudo_inverse")
LEARNER_NAMES = ("mlp", "lasso")

RECORD_COLUMNS = (
    "spec_id",
    "rep_id",
    "epoch",
    "estimator",
    "theta_hat",
    "plug_in",
    "correction",
    "v_hat",
    "ci_low",
    "ci_high",
    "truth_theta",
    "truth_mc_se",
    "failed",
    "wall_time_ms",
)

AGGREGATE_COLUMNS = (
    "estimator",
    "epoch",
    "rms_bias",
    "avg_rmse",
    "rms_bias_se",
    "coverage_rate",
    "n_records",
)


class AggregationError(ValueError):
    """Raised when a record group cannot be aggregated."""


@dataclass(frozen=True)
class ExperimentConfig:
    """All knobs of one experiment; serializes to/from a flat JSON object."""

    num_specs: int = 2
    reps_per_spec: int = 3
    n_train: int = 2000
    n_field: int = 2000
    n_validate: int | None = None  # defaults to n_train
    epoch_grid: tuple = (100,)
    estimators: tuple = ("plug_in", "cross_fit")
    learner: str = "mlp"
    hidden_layers: tuple = (32, 32, 32, 32)
    learning_rate: float = 0.01
    batch_size: int = 1024
    l2_penalty: float = 2e-4
    max_epochs: int = 500
    lasso_penalty: float | None = None
    lasso_penalty_scale: float = 0.5
    riesz_penalty: float | None = None
    riesz_penalty_scale: float = 0.5
    trim_tau: float | None = None
    trim_scale: float = 5.0
    dict_order: int = 2
    input_dim: int = 6
    dgp_order: int = 3
    sparsity: float = 0.6
    noise_sd: float = 0.1
    shift_size: float = 1.1
    shift_in_noise_units: bool = False
    uniform_weight: float = 0.05
    oracle_size: int = 1_000_000
    ci_level: float = 0.95
    variance_mode: str = "corrected"
    master_seed: int = 0
    out_dir: str = "results"
    workers: int = 1

    def validate(self):
        for name in ("num_specs", "reps_per_spec", "n_train", "n_field"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.epoch_grid:
            raise ValueError("epoch_grid must be nonempty")
        if list(self.epoch_grid) != sorted(self.epoch_grid):
            raise ValueError("epoch_grid must be sorted ascending")
        unknown = set(self.estimators) - set(ESTIMATOR_NAMES)
        if unknown:
            raise ValueError(f"unknown estimators {sorted(unknown)}")
        if not self.estimators:
            raise ValueError("at least one estimator must be enabled")
        if self.learner not in LEARNER_NAMES:
            raise ValueError(f"learner must be one of {LEARNER_NAMES}")
        if self.workers < 1:
            raise ValueError("workers must be positive")
        return self

    @property
    def validate_size(self) -> int:
        return self.n_train if self.n_validate is None else self.n_validate

    @property
    def effective_epoch_grid(self) -> tuple:
        # Epochs parameterize MLP training time; the lasso fit has none.
        return tuple(self.epoch_grid) if self.learner == "mlp" else (0,)

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("epoch_grid", "estimators", "hidden_layers"):
            out[key] = list(out[key])
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        coerced = dict(data)
        for key in ("epoch_grid", "estimators", "hidden_layers"):
            if key in coerced:
                coerced[key] = tuple(coerced[key])
        return cls(**coerced)

    @classmethod
    def from_json_file(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


@dataclass(frozen=True)
class ReplicationRecord:
    spec_id: int
    rep_id: int
    epoch: int
    estimator: str
    theta_hat: float
    plug_in: float
    correction: float
    v_hat: float
    ci_low: float
    ci_high: float
    truth_theta: float
    truth_mc_se: float
    failed: bool
    wall_time_ms: float

    def __post_init__(self):
        if not self.failed:
            if not np.isfinite(self.theta_hat):
                raise ValueError("theta_hat must be finite on successful records")
            if self.ci_low > self.ci_high:
                raise ValueError("ci_low must not exceed ci_high")

    @property
    def key(self):
        return (self.spec_id, self.rep_id, self.epoch, self.estimator)


@dataclass(frozen=True)
class AggregateRow:
    estimator: str
    epoch: int
    rms_bias: float
    avg_rmse: float
    rms_bias_se: float
    coverage_rate: float
    n_records: int

    def __post_init__(self):
        if self.rms_bias < 0:
            raise ValueError("rms_bias must be nonnegative")
        if not 0.0 <= self.coverage_rate <= 1.0:
            raise ValueError("coverage_rate must lie in [0, 1]")


def _spec_seed(cfg: ExperimentConfig, spec_id: int) -> int:
    return int(np.random.SeedSequence([cfg.master_seed, spec_id]).generate_state(1)[0])


def build_spec(cfg: ExperimentConfig, spec_id: int) -> SimSpec:
    return random_spec(
        _spec_seed(cfg, spec_id),
        input_dim=cfg.input_dim,
        order=cfg.dgp_order,
        sparsity=cfg.sparsity,
        noise_sd=cfg.noise_sd,
        shift_size=cfg.shift_size,
        shift_in_noise_units=cfg.shift_in_noise_units,
        uniform_weight=cfg.uniform_weight,
    )


def planned_keys(cfg: ExperimentConfig):
    """Every record key a run of ``cfg`` will produce, in emission order."""
    keys = []
    for spec_id in range(cfg.num_specs):
        for rep_id in range(cfg.reps_per_spec):
            for epoch in cfg.effective_epoch_grid:
                for name in cfg.estimators:
                    keys.append((spec_id, rep_id, epoch, name))
    return keys


def _riesz_penalty(cfg: ExperimentConfig, dict_spec: DictionarySpec) -> float:
    if cfg.riesz_penalty is not None:
        return cfg.riesz_penalty
    n = min(cfg.n_field, cfg.n_train)
    return default_penalty(n, dict_spec.output_dim, cfg.riesz_penalty_scale)


def _make_learner(cfg: ExperimentConfig, spec_id: int, rep_id: int):
    if cfg.learner == "mlp":
        seed = int(
            np.random.SeedSequence(
                [cfg.master_seed, spec_id, rep_id, 7]
            ).generate_state(1)[0]
        )
        return MlpRegressor(
            hidden_layers=cfg.hidden_layers,
            learning_rate=cfg.learning_rate,
            batch_size=cfg.batch_size,
            epochs=0,
            l2_penalty=cfg.l2_penalty,
            max_epochs=cfg.max_epochs,
            seed=seed,
            warm_start=True,
        )
    return LassoDictionaryRegressor(
        max_order=cfg.dict_order,
        penalty=cfg.lasso_penalty,
        penalty_scale=cfg.lasso_penalty_scale,
    )


def _failed_record(spec_id, rep_id, epoch, name, truth, elapsed_ms):
    nan = float("nan")
    return ReplicationRecord(
        spec_id=spec_id,
        rep_id=rep_id,
        epoch=epoch,
        estimator=name,
        theta_hat=nan,
        plug_in=nan,
        correction=nan,
        v_hat=nan,
        ci_low=nan,
        ci_high=nan,
        truth_theta=truth.value,
        truth_mc_se=truth.mc_se,
        failed=True,
        wall_time_ms=elapsed_ms,
    )


def _replication_records(cfg, spec, spec_id, rep_id, truth, needed):
    """All records for one (spec, rep), in epoch-then-estimator order."""
    sample = draw_sample(
        spec,
        cfg.n_train,
        cfg.n_field,
        n_validate=cfg.validate_size,
        rep_seed=rep_id,
        truth=truth,
    )
    dict_spec = DictionarySpec(cfg.input_dim, cfg.dict_order, include_intercept=True)
    functional = MeanOutcome()
    riesz_r = _riesz_penalty(cfg, dict_spec)
    trim_spec = TrimSpec(tau_bar=cfg.trim_tau, growth_scale=cfg.trim_scale)
    learner = _make_learner(cfg, spec_id, rep_id)

    records = []
    diverged = False
    for epoch in cfg.effective_epoch_grid:
        keys_here = [
            (spec_id, rep_id, epoch, name)
            for name in cfg.estimators
            if (spec_id, rep_id, epoch, name) in needed
        ]
        if not keys_here and cfg.learner == "lasso":
            continue
        start = time.perf_counter()
        if not diverged:
            try:
                if cfg.learner == "mlp":
                    learner = replace_epochs(learner, epoch)
                    learner.fit(sample.x_train, sample.y_train)
                else:
                    learner.fit(sample.x_train, sample.y_train)
            except TrainingDivergenceError:
                diverged = True
        fit_ms = (time.perf_counter() - start) * 1000.0
        for name in cfg.estimators:
            key = (spec_id, rep_id, epoch, name)
            if key not in needed:
                continue
            if diverged:
                records.append(
                    _failed_record(spec_id, rep_id, epoch, name, truth, fit_ms)
                )
                continue
            start = time.perf_counter()
            result = _estimate(
                name, cfg, functional, dict_spec, learner, sample, riesz_r, trim_spec
            )
            elapsed_ms = (time.perf_counter() - start) * 1000.0
            records.append(
                ReplicationRecord(
                    spec_id=spec_id,
                    rep_id=rep_id,
                    epoch=epoch,
                    estimator=name,
                    theta_hat=result.theta_hat,
                    plug_in=result.plug_in,
                    correction=result.correction,
                    v_hat=result.v_hat,
                    ci_low=result.ci_low,
                    ci_high=result.ci_high,
                    truth_theta=truth.value,
                    truth_mc_se=truth.mc_se,
                    failed=False,
                    wall_time_ms=elapsed_ms,
                )
            )
    return records


def replace_epochs(learner: MlpRegressor, epoch: int) -> MlpRegressor:
    learner.epochs = epoch
    return learner


def _estimate(name, cfg, functional, dict_spec, learner, sample, riesz_r, trim_spec):
    common = {"level": cfg.ci_level, "variance_mode": cfg.variance_mode}
    if name == "plug_in":
        return plug_in_estimate(
            functional,
            learner,
            sample.z_field,
            level=cfg.ci_level,
            n_train=len(sample.y_train),
        )
    if name == "cross_fit":
        return split_sample_estimate(
            functional,
            dict_spec,
            learner,
            sample.x_train,
            sample.y_train,
            sample.v_validate,
            sample.y_validate,
            sample.z_field,
            riesz_r,
            trim_spec,
            **common,
        )
    if name == "no_cross_fit":
        return split_sample_estimate(
            functional,
            dict_spec,
            learner,
            sample.x_train,
            sample.y_train,
            sample.x_train,
            sample.y_train,
            sample.z_field,
            riesz_r,
            trim_spec,
            **common,
        )
    if name == "pseudo_inverse":
        return pseudo_inverse_estimate(
            functional,
            dict_spec,
            learner,
            sample.x_train,
            sample.y_train,
            sample.z_field,
            trim_spec,
            **common,
        )
    raise ValueError(f"unknown estimator {name!r}")


def _job(args):
    cfg_dict, spec_json, spec_id, rep_id, truth_value, truth_se, needed = args
    from .simgen import OracleEstimate  # local import keeps the tuple picklable

    cfg = ExperimentConfig.from_dict(cfg_dict)
    spec = SimSpec.from_json(spec_json)
    truth = OracleEstimate(value=truth_value, mc_se=truth_se)
    return _replication_records(cfg, spec, spec_id, rep_id, truth, frozenset(needed))


def run_experiment(cfg: ExperimentConfig, existing_keys=frozenset()):
    """Yield one record per missing (spec, rep, epoch, estimator) combination.

    Records stream in deterministic order; combinations whose keys appear
    in ``existing_keys`` are skipped, which makes reruns resume cleanly.
    """
    cfg.validate()
    existing = frozenset(existing_keys)
    jobs = []
    for spec_id in range(cfg.num_specs):
        rep_keys = {}
        for rep_id in range(cfg.reps_per_spec):
            needed = [
                k
                for k in planned_rep_keys(cfg, spec_id, rep_id)
                if k not in existing
            ]
            if needed:
                rep_keys[rep_id] = needed
        if not rep_keys:
            continue
        spec = build_spec(cfg, spec_id)
        truth = spec_oracle(spec, cfg.oracle_size)
        for rep_id, needed in rep_keys.items():
            jobs.append(
                (
                    cfg.to_dict(),
                    spec.to_json(),
                    spec_id,
                    rep_id,
                    truth.value,
                    truth.mc_se,
                    tuple(needed),
                )
            )
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for records in pool.map(_job, jobs):
                yield from records
    else:
        for job in jobs:
            yield from _job(job)


def planned_rep_keys(cfg: ExperimentConfig, spec_id: int, rep_id: int):
    return [
        (spec_id, rep_id, epoch, name)
        for epoch in cfg.effective_epoch_grid
        for name in cfg.estimators
    ]


def aggregate(
    records, bootstrap_resamples: int = 1000, bootstrap_seed: int = 0
) -> list:
    """Per-(estimator, epoch) summary across specifications and replications.

    Within a specification the bias is the mean estimation error over its
    replications; the headline metric is the root mean square of those
    per-spec biases, with a seeded nonparametric bootstrap over
    specifications for its standard error. RMSE is computed per spec and
    averaged. Coverage is the fraction of intervals containing the target.
    """
    records = list(records)
    if not records:
        raise AggregationError("no records to aggregate")
    groups = {}
    for record in records:
        groups.setdefault((record.estimator, record.epoch), []).append(record)

    rng = np.random.default_rng(bootstrap_seed)
    rows = []
    for (estimator, epoch) in sorted(groups):
        ok = [r for r in groups[(estimator, epoch)] if not r.failed]
        if not ok:
            raise AggregationError(
                f"group (estimator={estimator}, epoch={epoch}) has no successful records"
            )
        by_spec = {}
        for r in ok:
            by_spec.setdefault(r.spec_id, []).append(r.theta_hat - r.truth_theta)
        spec_ids = sorted(by_spec)
        biases = np.array([np.mean(by_spec[s]) for s in spec_ids])
        rmses = np.array(
            [math.sqrt(np.mean(np.square(by_spec[s]))) for s in spec_ids]
        )
        rms_bias = float(np.sqrt(np.mean(biases**2)))
        avg_rmse = float(np.mean(rmses))
        coverage = float(
            np.mean([r.ci_low <= r.truth_theta <= r.ci_high for r in ok])
        )
        if len(spec_ids) > 1 and bootstrap_resamples > 0:
            draws = rng.integers(0, len(biases), size=(bootstrap_resamples, len(biases)))
            boot = np.sqrt(np.mean(biases[draws] ** 2, axis=1))
            rms_bias_se = float(np.std(boot, ddof=1))
        else:
            rms_bias_se = 0.0
        rows.append(
            AggregateRow(
                estimator=estimator,
                epoch=epoch,
                rms_bias=rms_bias,
                avg_rmse=avg_rmse,
                rms_bias_se=rms_bias_se,
                coverage_rate=coverage,
                n_records=len(ok),
            )
        )
    return rows


def _format(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_records(records, path, append: bool = False):
    """Write records as CSV with the documented column order."""
    path = Path(path)
    mode = "a" if append and path.exists() else "w"
    with open(path, mode, newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if mode == "w":
            writer.writerow(RECORD_COLUMNS)
        for record in records:
            writer.writerow(
                [_format(getattr(record, col)) for col in RECORD_COLUMNS]
            )


def append_record(fh, record):
    csv.writer(fh).writerow([_format(getattr(record, col)) for col in RECORD_COLUMNS])


def read_records(path) -> list:
    """Parse a records CSV back into typed records (exact float round trip)."""
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != RECORD_COLUMNS:
            raise ValueError(f"unexpected records header {header}")
        for row in reader:
            values = dict(zip(RECORD_COLUMNS, row))
            records.append(
                ReplicationRecord(
                    spec_id=int(values["spec_id"]),
                    rep_id=int(values["rep_id"]),
                    epoch=int(values["epoch"]),
                    estimator=values["estimator"],
                    theta_hat=float(values["theta_hat"]),
                    plug_in=float(values["plug_in"]),
                    correction=float(values["correction"]),
                    v_hat=float(values["v_hat"]),
                    ci_low=float(values["ci_low"]),
                    ci_high=float(values["ci_high"]),
                    truth_theta=float(values["truth_theta"]),
                    truth_mc_se=float(values["truth_mc_se"]),
                    failed=values["failed"] == "1",
                    wall_time_ms=float(values["wall_time_ms"]),
                )
            )
    return records


def emit_outputs(rows, records, out_dir):
    """Write records.csv, aggregate.csv, aggregate.json, and plot_data.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_records(records, out / "records.csv")
    with open(out / "aggregate.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(AGGREGATE_COLUMNS)
        for row in rows:
            writer.writerow([_format(getattr(row, col)) for col in AGGREGATE_COLUMNS])
    with open(out / "aggregate.json", "w", encoding="utf-8") as fh:
        json.dump([asdict(row) for row in rows], fh, indent=2)
        fh.write("\n")
    # Enough to redraw the bias/RMSE-versus-training-time figures externally.
    with open(out / "plot_data.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["estimator", "epoch", "rms_bias", "rms_bias_se", "avg_rmse"])
        for row in sorted(rows, key=lambda r: (r.estimator, r.epoch)):
            writer.writerow(
                [
                    row.estimator,
                    row.epoch,
                    repr(row.rms_bias),
                    repr(row.rms_bias_se),
                    repr(row.avg_rmse),
                ]
            )
    return {
        "records": out / "records.csv",
        "aggregate_csv": out / "aggregate.csv",
        "aggregate_json": out / "aggregate.json",
        "plot_data": out / "plot_data.csv",
    }
