"""Glue between the simulator, the forecasters, and the CLI: synthetic-month
construction from a config, forecaster training on baseline-controlled logs,
and forecaster evaluation in the layout of the accuracy-vs-peak table."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import AppConfig
from .forecasting import (
    ElasticNetModel,
    ExternalForecaster,
    LinearForecaster,
    NaiveForecaster,
    feature_names,
    is_workday,
    pooled_rmse,
    train_elastic_net,
)
from .simulator import (
    MonthSpec,
    SessionRecord,
    simulate_month,
    monte_carlo,
    replication_rng,
    generate_synthetic_month,
)
from .domain import month_grid

log = logging.getLogger(__name__)


def parse_month(label: str) -> tuple[int, int]:
    year, month = label.split("-")
    return int(year), int(month)


def months_from_config(cfg: AppConfig, records_by_month: dict[str, list[SessionRecord]] | None = None,
                       month_labels: list[str] | None = None) -> list[MonthSpec]:
    """Month specs from replay CSV data when given, else from the synthetic
    generator with the config's workload shape."""
    labels = list(month_labels or cfg.months)
    specs = []
    for label in labels:
        year, month = parse_month(label)
        grid = month_grid(year, month, cfg.station.step_hours)
        if records_by_month is not None:
            records = tuple(records_by_month.get(label, ()))
        else:
            records = tuple(generate_synthetic_month(
                cfg.synth, year, month, cfg.seed, cfg.station, frozenset(cfg.holidays)))
        specs.append(MonthSpec(label=label, grid=grid, records=records))
    return specs


@dataclass
class TrainingResult:
    workday_model: ElasticNetModel
    offday_model: ElasticNetModel
    n_workday: int
    n_offday: int
    training_rmse_linear: float
    training_rmse_naive: float

    def forecaster(self, holidays=frozenset()) -> LinearForecaster:
        return LinearForecaster(self.workday_model, self.offday_model, holidays)


def collect_training_set(cfg: AppConfig, months: list[MonthSpec]):
    """Run the baseline controller over the training months, logging the
    forecaster features and the realized loads they should have predicted."""
    sim = cfg.sim_config()
    Xw, Yw, Xo, Yo = [], [], [], []
    for m_idx, spec in enumerate(months):
        result = simulate_month(
            list(spec.records), spec.grid, sim, cfg.tariff,
            replication_rng(cfg.seed, m_idx, 0),
            controller_mode="baseline", collect_features=True, label=spec.label,
        )
        X, Y, times = result.training_pairs(sim.forecast_steps)
        for i, t in enumerate(times):
            when = spec.grid.time_at(t).date()
            if is_workday(when, frozenset(cfg.holidays)):
                Xw.append(X[i])
                Yw.append(Y[i])
            else:
                Xo.append(X[i])
                Yo.append(Y[i])
    return np.array(Xw), np.array(Yw), np.array(Xo), np.array(Yo)


def train_linear_forecaster(cfg: AppConfig, months: list[MonthSpec]) -> TrainingResult:
    Xw, Yw, Xo, Yo = collect_training_set(cfg, months)
    if Xw.size == 0:
        raise ValueError("no workday training samples collected")
    names = feature_names(cfg.forecaster.history_steps, cfg.forecaster.forecast_steps)
    l1, l2 = cfg.forecaster.lambda1, cfg.forecaster.lambda2
    workday = train_elastic_net(Xw, Yw, l1, l2, feature_names=names, day_kind="workday")
    if Xo.size:
        offday = train_elastic_net(Xo, Yo, l1, l2, feature_names=names, day_kind="offday")
    else:
        log.warning("no off-day samples; reusing the workday model for off days")
        offday = ElasticNetModel(
            feature_names=workday.feature_names, mean=workday.mean, scale=workday.scale,
            weights=workday.weights, intercepts=workday.intercepts,
            lambda1=l1, lambda2=l2, day_kind="offday",
        )
        Xo = np.zeros((0, Xw.shape[1]))
        Yo = np.zeros((0, Yw.shape[1]))

    k = cfg.forecaster.history_steps
    l = cfg.forecaster.forecast_steps
    lin_pairs = [(workday.predict(x), y) for x, y in zip(Xw, Yw)]
    lin_pairs += [(offday.predict(x), y) for x, y in zip(Xo, Yo)]
    naive_pairs = [(x[k:k + l], y) for x, y in zip(Xw, Yw)]
    naive_pairs += [(x[k:k + l], y) for x, y in zip(Xo, Yo)]
    return TrainingResult(
        workday_model=workday,
        offday_model=offday,
        n_workday=len(Xw),
        n_offday=len(Xo),
        training_rmse_linear=pooled_rmse(lin_pairs),
        training_rmse_naive=pooled_rmse(naive_pairs),
    )


def load_linear_forecaster(cfg: AppConfig) -> LinearForecaster:
    fc = cfg.forecaster
    if not (fc.model_workday and fc.model_offday):
        raise ValueError("forecaster.model_workday and model_offday paths are required")
    return LinearForecaster(
        ElasticNetModel.load(fc.model_workday),
        ElasticNetModel.load(fc.model_offday),
        frozenset(cfg.holidays),
    )


def make_forecasters(cfg: AppConfig, include: set[str]) -> dict[str, object]:
    out: dict[str, object] = {}
    if "naive" in include:
        out["naive"] = NaiveForecaster()
    if "linear" in include:
        out["linear"] = load_linear_forecaster(cfg)
    if "external" in include:
        if not cfg.forecaster.external_command:
            raise ValueError("forecaster.external_command is required for the external kind")
        out["external"] = ExternalForecaster(
            cfg.forecaster.external_command, Path(cfg.forecaster.exchange_dir),
            cfg.forecaster.history_steps, cfg.forecaster.forecast_steps,
        )
    return out


def run_simulation(cfg: AppConfig, months: list[MonthSpec], controller_modes: list[str]):
    """Monte Carlo over the configured months for the requested controllers."""
    needed = set()
    for mode_spec in controller_modes:
        if mode_spec.startswith("mpc"):
            needed.add(mode_spec.split(":", 1)[1] if ":" in mode_spec else cfg.forecaster.kind)
    forecasters = make_forecasters(cfg, needed)
    return monte_carlo(months, cfg.sim_config(), cfg.tariff,
                       controller_modes=controller_modes, forecasters=forecasters)
