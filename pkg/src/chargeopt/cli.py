"""Command-line entry point.

Subcommands:

    simulate          Monte Carlo run for one controller; writes report files.
    train-forecaster  Fit the elastic-net load forecaster on baseline logs.
    eval-forecaster   Training/simulation RMSE and mean peak per forecaster.
    generate-data     Write synthetic session CSVs.
    report            Merge saved run JSONs into one comparison table.

Exit codes: 0 ok, 1 runtime failure, 2 invalid config or data. The config
file is given with --config or the CHARGEOPT_CONFIG environment variable;
flags override config values.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import config as config_mod
from . import pipeline, reporting
from .config import AppConfig, ConfigError
from .simulator import ComparisonRow, RunRow, SessionRecord, summarize_runs, simulate_month, replication_rng
from datetime import datetime

log = logging.getLogger("chargeopt")

SESSION_HEADER = ["session_id", "arrival_iso8601", "departure_iso8601", "energy_kwh", "choice_label"]


class DataError(ValueError):
    pass


def ingest_sessions(path: str | Path) -> list[SessionRecord]:
    """Parse and validate a session CSV; problems are reported with row
    numbers (header is row 1)."""
    problems: list[str] = []
    records: list[SessionRecord] = []
    seen: dict[str, int] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected header {','.join(SESSION_HEADER)}")
        if [h.strip() for h in header] != SESSION_HEADER:
            raise DataError(f"{path}: row 1: header must be {','.join(SESSION_HEADER)}")
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(SESSION_HEADER):
                problems.append(f"row {row_no}: expected {len(SESSION_HEADER)} columns, got {len(row)}")
                continue
            sid, arr_s, dep_s, kwh_s, label = [c.strip() for c in row]
            try:
                arrival = datetime.fromisoformat(arr_s)
                departure = datetime.fromisoformat(dep_s)
            except ValueError:
                problems.append(f"row {row_no}: bad ISO-8601 timestamp")
                continue
            try:
                energy = float(kwh_s)
            except ValueError:
                problems.append(f"row {row_no}: energy_kwh {kwh_s!r} is not a number")
                continue
            if arrival >= departure:
                problems.append(f"row {row_no}: departure must be after arrival")
                continue
            if energy < 0:
                problems.append(f"row {row_no}: negative energy")
                continue
            if label not in ("", "regular", "scheduled"):
                problems.append(f"row {row_no}: choice_label {label!r} "
                                "must be regular, scheduled, or empty")
                continue
            if sid in seen:
                problems.append(f"row {row_no}: duplicate session_id {sid!r} (first at row {seen[sid]})")
                continue
            seen[sid] = row_no
            records.append(SessionRecord(sid, arrival, departure, energy, label or None))
    if problems:
        raise DataError(f"{path}: " + "; ".join(problems))
    records.sort(key=lambda r: (r.arrival, r.session_id))
    return records


def sessions_csv(records: list[SessionRecord]) -> str:
    lines = [",".join(SESSION_HEADER)]
    for r in records:
        lines.append(",".join([
            r.session_id, r.arrival.isoformat(), r.departure.isoformat(),
            repr(float(r.energy_kwh)), r.choice_label or "",
        ]))
    return "\n".join(lines) + "\n"


def _load_config(args) -> AppConfig:
    path = args.config or os.environ.get("CHARGEOPT_CONFIG")
    cfg = config_mod.load_config(path)
    if getattr(args, "controller", None):
        cfg = replace(cfg, controller_mode=args.controller)
    if getattr(args, "forecaster", None):
        cfg = replace(cfg, forecaster=replace(cfg.forecaster, kind=args.forecaster))
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "reps", None) is not None:
        cfg = replace(cfg, replications=args.reps)
    if getattr(args, "months", None):
        cfg = replace(cfg, months=tuple(args.months.split(",")))
    if getattr(args, "out", None):
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def _records_by_month(paths: list[str]) -> dict[str, list[SessionRecord]]:
    by_month: dict[str, list[SessionRecord]] = {}
    for path in paths:
        for rec in ingest_sessions(path):
            label = f"{rec.arrival.year:04d}-{rec.arrival.month:02d}"
            by_month.setdefault(label, []).append(rec)
    return by_month


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    records = _records_by_month(args.sessions) if args.sessions else None
    labels = sorted(records) if records and not args.months else None
    months = pipeline.months_from_config(cfg, records, labels)
    mode = cfg.controller_mode
    if mode == "mpc":
        mode = f"mpc:{cfg.forecaster.kind}"
    mc = pipeline.run_simulation(cfg, months, [mode])
    out = Path(cfg.out_dir)
    reporting.write_text_atomic(out / "runs.csv", reporting.runs_csv(mc.runs))
    reporting.write_text_atomic(out / "summary.csv", reporting.comparison_csv(mc.comparison))
    reporting.write_text_atomic(out / "report.json",
                                reporting.result_json(mc, config_mod.to_dict(cfg)))
    reporting.write_text_atomic(out / "config.yaml", config_mod.dump_config(cfg))
    if args.audit or args.trace:
        sim = cfg.sim_config()
        needed = {cfg.forecaster.kind} if cfg.controller_mode == "mpc" else set()
        forecasters = pipeline.make_forecasters(cfg, needed)
        fc = forecasters.get(cfg.forecaster.kind) if needed else None
        results = []
        for m_idx, spec in enumerate(months):
            for rep in range(cfg.replications):
                results.append(simulate_month(
                    list(spec.records), spec.grid, sim, cfg.tariff,
                    replication_rng(cfg.seed, m_idx, rep),
                    forecaster=fc, controller_mode=cfg.controller_mode, label=spec.label))
        if args.audit:
            reporting.write_text_atomic(out / "audit.csv", reporting.audit_csv(results))
        if args.trace:
            reporting.write_text_atomic(out / "trace.csv", reporting.trace_csv(results))
    print(reporting.comparison_table(mc.comparison), end="")
    print(f"wrote {out}/runs.csv, summary.csv, report.json")
    return 0


def cmd_generate_data(args) -> int:
    cfg = _load_config(args)
    out = Path(cfg.out_dir)
    months = pipeline.months_from_config(cfg)
    for spec in months:
        path = out / f"sessions-{spec.label}.csv"
        reporting.write_text_atomic(path, sessions_csv(list(spec.records)))
        print(f"wrote {path} ({len(spec.records)} sessions)")
    return 0


def cmd_train_forecaster(args) -> int:
    cfg = _load_config(args)
    records = _records_by_month(args.sessions) if args.sessions else None
    labels = sorted(records) if records and not args.months else None
    months = pipeline.months_from_config(cfg, records, labels)
    result = pipeline.train_linear_forecaster(cfg, months)
    out = Path(args.model_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.workday_model.save(out / "forecaster-workday.json")
    result.offday_model.save(out / "forecaster-offday.json")
    print(f"trained on {result.n_workday} workday / {result.n_offday} off-day samples")
    print(f"training RMSE: linear {result.training_rmse_linear:.2f} kW, "
          f"naive {result.training_rmse_naive:.2f} kW")
    print(f"wrote {out}/forecaster-workday.json, forecaster-offday.json")
    return 0


def cmd_eval_forecaster(args) -> int:
    cfg = _load_config(args)
    records = _records_by_month(args.sessions) if args.sessions else None
    labels = sorted(records) if records and not args.months else None
    months = pipeline.months_from_config(cfg, records, labels)

    kinds = [k.strip() for k in (args.kinds or "naive,linear").split(",") if k.strip()]
    training = pipeline.train_linear_forecaster(cfg, months)
    rows = []
    sim = cfg.sim_config()
    for kind in kinds:
        if kind == "linear":
            forecaster = training.forecaster(frozenset(cfg.holidays))
            training_rmse = training.training_rmse_linear
        elif kind == "naive":
            forecaster = pipeline.make_forecasters(cfg, {"naive"})["naive"]
            training_rmse = training.training_rmse_naive
        else:
            forecaster = pipeline.make_forecasters(cfg, {kind})[kind]
            training_rmse = None
        rmses, peaks = [], []
        for m_idx, spec in enumerate(months):
            res = simulate_month(list(spec.records), spec.grid, sim, cfg.tariff,
                                 replication_rng(cfg.seed, m_idx, 0),
                                 forecaster=forecaster, controller_mode="mpc", label=spec.label)
            if res.forecast_rmse is not None:
                rmses.append(res.forecast_rmse)
            peaks.append(res.report.peak_kw)
        rows.append({
            "forecaster": kind,
            "training_rmse": training_rmse,
            "simulation_rmse": sum(rmses) / len(rmses) if rmses else None,
            "mean_peak_kw": sum(peaks) / len(peaks) if peaks else None,
        })
    print(reporting.rmse_table(rows), end="")
    return 0


def cmd_report(args) -> int:
    runs: list[RunRow] = []
    for path in args.inputs:
        doc = json.loads(Path(path).read_text())
        for r in doc["runs"]:
            runs.append(RunRow(**r))
    runs.sort(key=lambda r: (r.controller, r.forecaster or "", r.month, r.replication))
    comparison = summarize_runs(runs)
    text = reporting.comparison_table(comparison)
    print(text, end="")
    if args.out:
        reporting.write_text_atomic(Path(args.out) / "comparison.csv",
                                    reporting.comparison_csv(comparison))
        print(f"wrote {args.out}/comparison.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chargeopt",
                                     description="Joint price/power optimization for "
                                                 "workplace EV charging")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_controller=True):
        p.add_argument("--config", help="YAML config path (or CHARGEOPT_CONFIG)")
        if with_controller:
            p.add_argument("--controller",
                           choices=["baseline", "threshold", "softplus", "mpc"])
            p.add_argument("--forecaster", choices=["naive", "linear", "external"])
        p.add_argument("--seed", type=int)
        p.add_argument("--reps", type=int)
        p.add_argument("--months", help="comma-separated YYYY-MM list")
        p.add_argument("--out")
        p.add_argument("--sessions", nargs="*",
                       help="session CSVs to replay (default: synthetic workload)")

    p = sub.add_parser("simulate", help="run the Monte Carlo simulation")
    common(p)
    p.add_argument("--audit", action="store_true", help="also write per-arrival audit.csv")
    p.add_argument("--trace", action="store_true", help="also write per-step trace.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("generate-data", help="write synthetic session CSVs")
    common(p, with_controller=False)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train-forecaster", help="train the elastic-net forecaster")
    common(p, with_controller=False)
    p.add_argument("--model-dir", help="directory for model files (default: output dir)")
    p.set_defaults(func=cmd_train_forecaster)

    p = sub.add_parser("eval-forecaster", help="training/simulation RMSE per forecaster")
    common(p, with_controller=False)
    p.add_argument("--kinds", help="comma-separated forecaster kinds (default naive,linear)")
    p.set_defaults(func=cmd_eval_forecaster)

    p = sub.add_parser("report", help="merge saved report.json files into one table")
    p.add_argument("inputs", nargs="+", help="report.json files")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        log.exception("command failed")
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
