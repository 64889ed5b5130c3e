"""Command line interface: ``run``, ``aggregate``, and ``report``.

``run`` streams records to ``<out>/records.csv``, resuming past partial
runs by key. ``aggregate`` summarizes a records file into CSV/JSON plus a
plot-data file. ``report`` prints an aggregate file as a table.
"""

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .harness import (
    ExperimentConfig,
    RECORD_COLUMNS,
    aggregate,
    append_record,
    emit_outputs,
    read_records,
    run_experiment,
)

_LIST_FIELDS = {"epoch_grid": int, "estimators": str, "hidden_layers": int}
_SKIP_FLAGS = {"master_seed", "out_dir"}  # exposed as --seed / --out instead


def _add_config_flags(parser):
    for f in dataclasses.fields(ExperimentConfig):
        if f.name in _SKIP_FLAGS:
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.name in _LIST_FIELDS:
            parser.add_argument(
                flag,
                type=str,
                default=None,
                help=f"comma-separated {f.name} (default {f.default})",
            )
        elif f.type == "bool":
            parser.add_argument(
                flag,
                action=argparse.BooleanOptionalAction,
                default=None,
                help=f"{f.name} (default {f.default})",
            )
        elif f.type in ("int", "float", "str"):
            parser.add_argument(
                flag,
                type={"int": int, "float": float, "str": str}[f.type],
                default=None,
                help=f"{f.name} (default {f.default})",
            )
        else:  # optional numerics such as "float | None"
            caster = int if "int" in f.type else float
            parser.add_argument(
                flag, type=caster, default=None, help=f"{f.name} (default {f.default})"
            )


def _config_from_args(args) -> ExperimentConfig:
    data = {}
    if args.config is not None:
        data = json.loads(Path(args.config).read_text(encoding="utf-8"))
    for f in dataclasses.fields(ExperimentConfig):
        if f.name in _SKIP_FLAGS:
            continue
        value = getattr(args, f.name, None)
        if value is None:
            continue
        if f.name in _LIST_FIELDS:
            caster = _LIST_FIELDS[f.name]
            value = [caster(part) for part in str(value).split(",") if part]
        data[f.name] = value
    if args.seed is not None:
        data["master_seed"] = args.seed
    if args.out is not None:
        data["out_dir"] = str(args.out)
    return ExperimentConfig.from_dict(data)


def _cmd_run(args) -> int:
    cfg = _config_from_args(args).validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write_json(out / "config.json")
    records_path = out / "records.csv"
    existing = read_records(records_path) if records_path.exists() else []
    existing_keys = {r.key for r in existing}
    if existing:
        print(f"resuming: {len(existing)} records already in {records_path}")
    mode = "a" if records_path.exists() else "w"
    written = 0
    with open(records_path, mode, newline="", encoding="utf-8") as fh:
        if mode == "w":
            fh.write(",".join(RECORD_COLUMNS) + "\n")
        for record in run_experiment(cfg, existing_keys):
            append_record(fh, record)
            fh.flush()
            written += 1
            print(
                f"spec {record.spec_id} rep {record.rep_id} epoch {record.epoch} "
                f"{record.estimator}: theta_hat={record.theta_hat:.6g}"
                + (" [failed]" if record.failed else "")
            )
    print(f"wrote {written} new records to {records_path}")
    return 0


def _cmd_aggregate(args) -> int:
    records = read_records(args.records)
    rows = aggregate(
        records,
        bootstrap_resamples=args.bootstrap,
        bootstrap_seed=args.bootstrap_seed,
    )
    paths = emit_outputs(rows, records, args.out)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def _cmd_report(args) -> int:
    with open(args.aggregate, encoding="utf-8") as fh:
        rows = json.load(fh)
    if not rows:
        print("no aggregate rows")
        return 0
    columns = list(rows[0])
    widths = {
        c: max(len(c), *(len(_cell(r[c])) for r in rows)) for c in columns
    }
    print("  ".join(c.ljust(widths[c]) for c in columns))
    for row in rows:
        print("  ".join(_cell(row[c]).ljust(widths[c]) for c in columns))
    return 0


def _cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="shiftdml",
        description="Debiased estimation experiments under covariate shift.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run (or resume) an experiment")
    run_p.add_argument("--config", type=Path, default=None, help="JSON config file")
    run_p.add_argument("--seed", type=int, default=None, help="override master_seed")
    run_p.add_argument("--out", type=Path, default=None, help="output directory")
    _add_config_flags(run_p)
    run_p.set_defaults(func=_cmd_run)

    agg_p = sub.add_parser("aggregate", help="summarize a records file")
    agg_p.add_argument("--records", type=Path, required=True)
    agg_p.add_argument("--out", type=Path, required=True)
    agg_p.add_argument("--bootstrap", type=int, default=1000)
    agg_p.add_argument("--bootstrap-seed", type=int, default=0)
    agg_p.set_defaults(func=_cmd_aggregate)

    rep_p = sub.add_parser("report", help="print an aggregate.json as a table")
    rep_p.add_argument("--aggregate", type=Path, required=True)
    rep_p.set_defaults(func=_cmd_report)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
