"""Report rendering and atomic file output.

Money is carried at full precision internally and rounded to cents only
here, at presentation. All files are written to a temp name and renamed,
so a crash never leaves a plausible-looking partial report.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from .simulator import ComparisonRow, McResult, MonthResult, RunRow


def write_text_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def csv_line(values) -> str:
    return ",".join(_fmt(v) for v in values)


def runs_csv(runs: list[RunRow]) -> str:
    header = ("controller,forecaster,month,replication,demand_cost,energy_cost,"
              "revenue,total_cost,profit,peak_kw,rejected,forecast_rmse")
    lines = [header]
    for r in runs:
        lines.append(csv_line([
            r.controller, r.forecaster or "", r.month, r.replication,
            r.demand_cost, r.energy_cost, r.revenue, r.total_cost,
            r.profit, r.peak_kw, r.rejected, r.forecast_rmse,
        ]))
    return "\n".join(lines) + "\n"


def comparison_csv(rows: list[ComparisonRow]) -> str:
    header = ("controller,forecaster,demand_cost,energy_cost,revenue,total_cost,profit,"
              "peak_kw,forecast_rmse,demand_change_pct,energy_change_pct,cost_change_pct")
    lines = [header]
    for r in rows:
        lines.append(csv_line([
            r.controller, r.forecaster or "", r.demand_cost, r.energy_cost, r.revenue,
            r.total_cost, r.profit, r.peak_kw, r.forecast_rmse,
            r.demand_change_pct, r.energy_change_pct, r.cost_change_pct,
        ]))
    return "\n".join(lines) + "\n"


def audit_csv(results: list[MonthResult]) -> str:
    header = ("controller,forecaster,month,session_id,t_start,menu_scheduled,menu_regular,"
              "expected_cost,p_reg,p_sch,p_leave,realized_choice,locked_price,power_cap")
    lines = [header]
    for res in results:
        for a in res.audits:
            lines.append(csv_line([
                res.controller, res.forecaster or "", res.label, a.session_id, a.t_start,
                a.menu_scheduled, a.menu_regular, a.expected_cost,
                a.p_reg, a.p_sch, a.p_leave, a.realized_choice, a.locked_price, a.power_cap,
            ]))
    return "\n".join(lines) + "\n"


def trace_csv(results: list[MonthResult]) -> str:
    header = "controller,forecaster,month,step,load_kw"
    lines = [header]
    for res in results:
        for step, load in enumerate(res.load_trace):
            lines.append(csv_line([res.controller, res.forecaster or "", res.label, step, float(load)]))
    return "\n".join(lines) + "\n"


def comparison_table(rows: list[ComparisonRow]) -> str:
    """Plain-text cost comparison with change-from-baseline columns."""
    header = (f"{'Controller':16s} {'Demand':>10s} {'TOU':>10s} {'Revenue':>10s} "
              f"{'Cost':>10s} {'Profit':>10s} {'Demand %':>9s} {'TOU %':>8s} {'Cost %':>8s}")
    out = [header, "-" * len(header)]

    def money(v):
        return "" if v is None else f"{v:,.2f}"

    def pct(v):
        return "" if v is None else f"{v:+.2f}"

    for r in rows:
        out.append(
            f"{r.name:16s} {money(r.demand_cost):>10s} {money(r.energy_cost):>10s} "
            f"{money(r.revenue):>10s} {money(r.total_cost):>10s} {money(r.profit):>10s} "
            f"{pct(r.demand_change_pct):>9s} {pct(r.energy_change_pct):>8s} {pct(r.cost_change_pct):>8s}"
        )
    return "\n".join(out) + "\n"


def rmse_table(rows: list[dict]) -> str:
    """Forecast accuracy table: training vs simulation RMSE and mean peak."""
    header = (f"{'Forecaster':12s} {'Training RMSE (kW)':>20s} "
              f"{'Simulation RMSE (kW)':>22s} {'Mean Peak Power (kW)':>22s}")
    out = [header, "-" * len(header)]
    for r in rows:
        def num(v):
            return "" if v is None else f"{v:.2f}"
        out.append(f"{r['forecaster']:12s} {num(r.get('training_rmse')):>20s} "
                   f"{num(r.get('simulation_rmse')):>22s} {num(r.get('mean_peak_kw')):>22s}")
    return "\n".join(out) + "\n"


def result_json(mc: McResult, config_doc: dict) -> str:
    doc = {
        "config": config_doc,
        "runs": [vars(r) for r in mc.runs],
        "comparison": [vars(r) for r in mc.comparison],
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"
