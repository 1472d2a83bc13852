import json
from pathlib import Path

import pytest
import yaml

from chargeopt import config as config_mod
from chargeopt.cli import DataError, ingest_sessions, main, sessions_csv
from chargeopt.config import AppConfig, ConfigError, from_dict, load_config, to_dict
from chargeopt.simulator import SessionRecord

FAST_CONTROLLER = {"controller": {"price_step": 0.3}}


def write_cfg(tmp_path, doc, name="cfg.yaml"):
    merged = {"simulation": {"seed": 5, "replications": 1, "months": ["2023-06"]},
              "synthetic": {"sessions_per_workday": 2.0}}
    merged.update(doc)
    merged.setdefault("controller", {})["price_step"] = 0.3
    path = tmp_path / name
    path.write_text(yaml.safe_dump(merged))
    return str(path)


# -- config ------------------------------------------------------------------------


def test_config_defaults_round_trip():
    cfg = AppConfig()
    assert from_dict(to_dict(cfg)) == cfg


def test_config_round_trip_with_overrides(tmp_path):
    doc = {
        "station": {"n_chargers": 6},
        "controller": {"mode": "mpc", "price_step": 0.2},
        "forecaster": {"kind": "linear", "model_workday": "w.json", "model_offday": "o.json"},
        "tariff": {"demand_rate": 15.0},
        "simulation": {"seed": 9, "months": ["2024-01"], "holidays": ["2024-01-01"]},
        "synthetic": {"sessions_per_workday": 3.5},
        "output": {"dir": "results"},
    }
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(doc))
    cfg = load_config(path)
    assert cfg.station.n_chargers == 6
    assert cfg.controller_mode == "mpc"
    assert cfg.forecaster.kind == "linear"
    assert cfg.tariff.demand_rate == 15.0
    assert cfg.months == ("2024-01",)
    assert from_dict(to_dict(cfg)) == cfg


def test_config_errors_carry_key_paths(tmp_path):
    doc = {"controller": {"mode": "psychic"},
           "simulation": {"replications": 0, "months": ["junk"]},
           "mystery": {"a": 1}}
    with pytest.raises(ConfigError) as err:
        from_dict(doc)
    text = str(err.value)
    assert "controller.mode" in text
    assert "simulation.replications" in text
    assert "simulation.months[0]" in text
    assert "mystery" in text


def test_config_unknown_key_rejected():
    with pytest.raises(ConfigError, match="station.voltage"):
        from_dict({"station": {"voltage": 480}})


def test_default_config_file_parses():
    cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / "default.yaml")
    assert cfg == AppConfig()


# -- session CSV ingestion ----------------------------------------------------------


def test_ingest_round_trip(tmp_path):
    from datetime import datetime
    records = [
        SessionRecord("b", datetime(2023, 6, 2, 9), datetime(2023, 6, 2, 17), 12.0, "scheduled"),
        SessionRecord("a", datetime(2023, 6, 1, 8), datetime(2023, 6, 1, 16), 10.0, None),
    ]
    path = tmp_path / "s.csv"
    path.write_text(sessions_csv(records))
    out = ingest_sessions(path)
    assert [r.session_id for r in out] == ["b", "a"] or [r.session_id for r in out] == ["a", "b"]
    assert out == sorted(out, key=lambda r: (r.arrival, r.session_id))  # sorted on load


def test_ingest_empty_file_with_header(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text("session_id,arrival_iso8601,departure_iso8601,energy_kwh,choice_label\n")
    assert ingest_sessions(path) == []


def test_ingest_duplicate_id(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text(
        "session_id,arrival_iso8601,departure_iso8601,energy_kwh,choice_label\n"
        "a,2023-06-01T08:00,2023-06-01T10:00,5.0,regular\n"
        "a,2023-06-02T08:00,2023-06-02T10:00,5.0,regular\n")
    with pytest.raises(DataError, match="row 3.*duplicate"):
        ingest_sessions(path)


def test_ingest_departure_before_arrival_row_number(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text(
        "session_id,arrival_iso8601,departure_iso8601,energy_kwh,choice_label\n"
        "a,2023-06-01T10:00,2023-06-01T08:00,5.0,regular\n")
    with pytest.raises(DataError, match="row 2"):
        ingest_sessions(path)


def test_malformed_sessions_exit_code_2(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text(
        "session_id,arrival_iso8601,departure_iso8601,energy_kwh,choice_label\n"
        "a,2023-06-01T10:00,2023-06-01T08:00,5.0,regular\n")
    cfg = write_cfg(tmp_path, {})
    code = main(["simulate", "--config", cfg, "--out", str(tmp_path / "o"),
                 "--sessions", str(bad)])
    assert code == 2


def test_bad_config_exit_code_2(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("controller: {mode: nonsense}\n")
    assert main(["simulate", "--config", str(path)]) == 2


# -- end-to-end CLI ------------------------------------------------------------------


def test_generate_data_then_replay(tmp_path):
    cfg = write_cfg(tmp_path, {})
    out = tmp_path / "data"
    assert main(["generate-data", "--config", cfg, "--out", str(out)]) == 0
    csv_path = out / "sessions-2023-06.csv"
    assert csv_path.exists()
    records = ingest_sessions(csv_path)
    assert records
    sim_out = tmp_path / "replay"
    assert main(["simulate", "--config", cfg, "--out", str(sim_out),
                 "--sessions", str(csv_path)]) == 0
    assert (sim_out / "runs.csv").exists()


def test_simulate_byte_identical_reruns(tmp_path):
    cfg = write_cfg(tmp_path, {})
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", cfg, "--out", str(a), "--audit", "--trace"]) == 0
    assert main(["simulate", "--config", cfg, "--out", str(b), "--audit", "--trace"]) == 0
    for name in ("runs.csv", "summary.csv", "audit.csv", "trace.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_report_merges_and_has_change_columns(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {})
    out_base = tmp_path / "rb"
    assert main(["simulate", "--config", cfg, "--controller", "baseline",
                 "--out", str(out_base)]) == 0
    out_thr = tmp_path / "rt"
    assert main(["simulate", "--config", cfg, "--controller", "threshold",
                 "--out", str(out_thr)]) == 0
    capsys.readouterr()
    assert main(["report", str(out_base / "report.json"), str(out_thr / "report.json"),
                 "--out", str(tmp_path / "merged")]) == 0
    text = capsys.readouterr().out
    assert "Demand %" in text and "Cost %" in text
    assert "baseline" in text and "threshold" in text
    merged = (tmp_path / "merged" / "comparison.csv").read_text()
    assert "demand_change_pct" in merged


def test_report_rows_satisfy_profit_identity(tmp_path):
    cfg = write_cfg(tmp_path, {})
    out = tmp_path / "o"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    doc = json.loads((out / "report.json").read_text())
    for row in doc["runs"]:
        assert abs(row["revenue"] - row["total_cost"] - row["profit"]) < 0.01
        assert abs(row["energy_cost"] + row["demand_cost"] - row["total_cost"]) < 0.01


def test_train_and_eval_forecaster_cli(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"simulation": {"seed": 5, "replications": 1,
                                              "months": ["2023-06", "2023-07"]},
                               "synthetic": {"sessions_per_workday": 3.0}})
    model_dir = tmp_path / "models"
    assert main(["train-forecaster", "--config", cfg, "--model-dir", str(model_dir)]) == 0
    assert (model_dir / "forecaster-workday.json").exists()
    assert (model_dir / "forecaster-offday.json").exists()
    capsys.readouterr()
    assert main(["eval-forecaster", "--config", cfg, "--months", "2023-06",
                 "--kinds", "naive"]) == 0
    text = capsys.readouterr().out
    assert "Training RMSE" in text and "Simulation RMSE" in text and "Mean Peak" in text
