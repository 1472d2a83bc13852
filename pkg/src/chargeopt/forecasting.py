"""Station-load forecasting for the anticipatory controller.

Pieces: feature construction from the simulation state, a committed-plan
(naive) forecaster, a multi-output elastic-net linear forecaster trained
in-repo by cyclic coordinate descent, a file-based adapter for externally
trained models, and the clipping / affine-update arithmetic that turns one
forecast into per-scenario load expressions for the optimizer.

The forecast is produced once per arrival, outside the solver; the solver
only sees affine corrections of it (committed plans swapped for decision
variables), so any forecaster, convex or not, can plug in.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import shlex
import subprocess
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path

import numpy as np

from .domain import StationParams, StationState, regular_rectangle

log = logging.getLogger(__name__)

MODEL_FORMAT = "chargeopt-linear-forecast-v1"

# Fundamental periods (hours) for the positional encodings.
_PERIODS = (("day", 24.0), ("week", 168.0), ("year", 8766.0))


class ForecastError(ValueError):
    pass


def is_workday(d: date, holidays: frozenset[date] = frozenset()) -> bool:
    return d.weekday() < 5 and d not in holidays


def positional_encoding(when: datetime, n_harmonics: int = 2) -> np.ndarray:
    """Sin/cos pairs at 1..n_harmonics times the daily, weekly, and yearly
    fundamental frequencies. Midnight Monday Jan 1 is phase zero for all."""
    out = []
    hours_of_day = when.hour + when.minute / 60.0 + when.second / 3600.0
    hours_of_week = when.weekday() * 24.0 + hours_of_day
    start_of_year = datetime(when.year, 1, 1)
    hours_of_year = (when - start_of_year).total_seconds() / 3600.0
    for (_, period), t in zip(_PERIODS, (hours_of_day, hours_of_week, hours_of_year)):
        for h in range(1, n_harmonics + 1):
            phase = 2.0 * math.pi * h * t / period
            out.extend((math.sin(phase), math.cos(phase)))
    return np.array(out)


def positional_names(n_harmonics: int = 2) -> list[str]:
    names = []
    for label, _ in _PERIODS:
        for h in range(1, n_harmonics + 1):
            names.extend((f"{label}_sin{h}", f"{label}_cos{h}"))
    return names


@dataclass
class FeatureVector:
    """Inputs to one forecast, assembled at an arrival."""

    recent_loads: np.ndarray      # last k station loads, oldest first
    planned_profile: np.ndarray   # committed station plan, arrival as regular
    n_active: int                 # active sessions including the new arrival
    n_chargers: int
    positional: np.ndarray
    workday_next24: bool
    history_padded: bool = False

    def to_array(self) -> np.ndarray:
        return np.concatenate([
            self.recent_loads,
            self.planned_profile,
            [float(self.n_active), float(self.n_chargers)],
            self.positional,
            [1.0 if self.workday_next24 else 0.0],
        ])


def feature_names(history_steps: int, forecast_steps: int, n_harmonics: int = 2) -> list[str]:
    names = [f"recent_load_{i:03d}" for i in range(history_steps)]
    names += [f"planned_{i:03d}" for i in range(forecast_steps)]
    names += ["n_active", "n_chargers"]
    names += positional_names(n_harmonics)
    names += ["workday_next24"]
    return names


def planned_station_profile(
    state: StationState,
    request,
    params: StationParams,
    forecast_steps: int,
) -> np.ndarray:
    """Committed station plan for the next steps, treating the new arrival as
    a regular (full-power) session and everyone else as previously planned."""
    t0 = state.now
    plan = np.zeros(forecast_steps)
    for prof in state.schedules.values():
        for i in range(forecast_steps):
            plan[i] += prof.value_at(t0 + i)
    reg = regular_rectangle(
        request.session_id, request.t_start, request.departure,
        request.energy_regular, params,
    )
    for i in range(forecast_steps):
        plan[i] += reg.value_at(t0 + i)
    return plan


def build_features(
    state: StationState,
    history: np.ndarray,
    request,
    when: datetime,
    params: StationParams,
    history_steps: int = 96,
    forecast_steps: int = 32,
    holidays: frozenset[date] = frozenset(),
    n_harmonics: int = 2,
) -> FeatureVector:
    """Assemble all feature groups; short histories are zero-padded on the
    left and flagged."""
    hist = np.asarray(history, dtype=float)
    padded = hist.size < history_steps
    if padded:
        hist = np.concatenate([np.zeros(history_steps - hist.size), hist])
    else:
        hist = hist[-history_steps:]
    plan = planned_station_profile(state, request, params, forecast_steps)
    return FeatureVector(
        recent_loads=hist,
        planned_profile=plan,
        n_active=len(state.active) + 1,
        n_chargers=state.n_chargers,
        positional=positional_encoding(when, n_harmonics),
        workday_next24=is_workday((when + timedelta(hours=24)).date(), holidays),
        history_padded=padded,
    )


@dataclass
class ForecastVector:
    """Predicted station load for the next steps, plus clipping state."""

    load_kw: np.ndarray
    provenance: str
    clipped: np.ndarray | None = None

    def __post_init__(self):
        self.load_kw = np.asarray(self.load_kw, dtype=float)
        if self.clipped is None:
            self.clipped = np.zeros(self.load_kw.size, dtype=bool)


def forecast_naive(features: FeatureVector) -> ForecastVector:
    """The committed plan itself, assuming no further arrivals."""
    return ForecastVector(features.planned_profile.copy(), provenance="naive")


def clip_forecast(forecast: ForecastVector, committed_floor: np.ndarray) -> ForecastVector:
    """Raise the forecast onto the committed-plan floor (and zero): a
    prediction below power already scheduled to flow is not realizable."""
    floor = np.maximum(np.asarray(committed_floor, dtype=float), 0.0)
    if floor.size != forecast.load_kw.size:
        raise ForecastError("clip floor length does not match forecast length")
    clipped_flags = forecast.load_kw < floor - 1e-12
    return ForecastVector(
        np.maximum(forecast.load_kw, floor),
        provenance=forecast.provenance,
        clipped=clipped_flags | forecast.clipped,
    )


def update_forecast(
    psi: np.ndarray,
    committed_scheduled_sum: np.ndarray,
    candidate_regular_profile: np.ndarray,
    scenario: str,
) -> np.ndarray:
    """Constant part of the forecast-updated load for one choice scenario.

    The full updated load is this constant plus the sum of the scheduled
    decision variables at each step (including the new user's in the
    scheduled scenario); the controller adds those columns itself.
    """
    psi = np.asarray(psi, dtype=float)
    committed = np.asarray(committed_scheduled_sum, dtype=float)
    cand_reg = np.asarray(candidate_regular_profile, dtype=float)
    if not (psi.size == committed.size == cand_reg.size):
        raise ForecastError("forecast update horizon mismatch")
    if scenario == "regular":
        return psi - committed
    if scenario == "scheduled":
        return psi - committed - cand_reg
    raise ForecastError(f"unknown scenario {scenario!r}")


# -- elastic-net linear forecaster --------------------------------------------


def _soft_threshold(value: float, cut: float) -> float:
    if value > cut:
        return value - cut
    if value < -cut:
        return value + cut
    return 0.0


def _elastic_net_objective(X, y, w, l1, l2) -> float:
    r = y - X @ w
    n = y.size
    return float(r @ r) / (2 * n) + l1 * float(np.abs(w).sum()) + 0.5 * l2 * float(w @ w)


def coordinate_descent(
    X: np.ndarray,
    y: np.ndarray,
    l1: float,
    l2: float,
    tol: float = 1e-8,
    max_sweeps: int = 2000,
) -> tuple[np.ndarray, list[float]]:
    """Cyclic coordinate descent on
    ``mean squared residual / 2 + l1 |w|_1 + l2/2 |w|_2^2``.

    Returns the weights and the per-sweep objective trace (monotone
    nonincreasing). Constant columns keep weight zero.
    """
    n, d = X.shape
    col_sq = (X * X).sum(axis=0) / n
    w = np.zeros(d)
    r = y.copy()
    history = [_elastic_net_objective(X, y, w, l1, l2)]
    for _ in range(max_sweeps):
        max_step = 0.0
        for j in range(d):
            if col_sq[j] < 1e-12:
                continue
            xj = X[:, j]
            rho = (xj @ r) / n + col_sq[j] * w[j]
            new = _soft_threshold(rho, l1) / (col_sq[j] + l2)
            if new != w[j]:
                r += xj * (w[j] - new)
                max_step = max(max_step, abs(new - w[j]))
                w[j] = new
        history.append(_elastic_net_objective(X, y, w, l1, l2))
        if max_step < tol:
            break
    return w, history


@dataclass
class ElasticNetModel:
    """Independent elastic-net regressions per forecast step, sharing one
    feature standardization. Persisted as a flat JSON document."""

    feature_names: list[str]
    mean: np.ndarray
    scale: np.ndarray
    weights: np.ndarray     # (forecast_steps, n_features), standardized space
    intercepts: np.ndarray  # (forecast_steps,)
    lambda1: float
    lambda2: float
    day_kind: str = "workday"
    objective_traces: list[list[float]] = field(default_factory=list, repr=False)

    @property
    def forecast_steps(self) -> int:
        return self.weights.shape[0]

    def predict(self, features: np.ndarray) -> np.ndarray:
        x = (np.asarray(features, dtype=float) - self.mean) / self.scale
        return self.weights @ x + self.intercepts

    def save(self, path: str | Path) -> None:
        doc = {
            "format": MODEL_FORMAT,
            "day_kind": self.day_kind,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "feature_names": self.feature_names,
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "weights": self.weights.tolist(),
            "intercepts": self.intercepts.tolist(),
        }
        Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "ElasticNetModel":
        doc = json.loads(Path(path).read_text())
        if doc.get("format") != MODEL_FORMAT:
            raise ForecastError(f"{path}: not a {MODEL_FORMAT} file")
        return cls(
            feature_names=list(doc["feature_names"]),
            mean=np.array(doc["mean"], dtype=float),
            scale=np.array(doc["scale"], dtype=float),
            weights=np.array(doc["weights"], dtype=float),
            intercepts=np.array(doc["intercepts"], dtype=float),
            lambda1=float(doc["lambda1"]),
            lambda2=float(doc["lambda2"]),
            day_kind=str(doc["day_kind"]),
        )


def train_elastic_net(
    X: np.ndarray,
    Y: np.ndarray,
    lambda1: float = 0.1,
    lambda2: float = 0.1,
    feature_names: list[str] | None = None,
    day_kind: str = "workday",
    tol: float = 1e-8,
    max_sweeps: int = 2000,
) -> ElasticNetModel:
    """Fit one regression per forecast step on standardized features.

    Constant feature columns are effectively dropped (unit scale, zero
    weight) with a logged warning.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] == 0:
        raise ForecastError("empty training set")
    if feature_names is None:
        feature_names = [f"f{{{j}}}" for j in range(X.shape[1])]
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    constant = scale < 1e-12
    if constant.any():
        dropped = [feature_names[j] for j in np.flatnonzero(constant)]
        log.warning("dropping %d constant feature column(s): %s",
                    len(dropped), ", ".join(dropped[:8]))
    scale = np.where(constant, 1.0, scale)
    Xs = (X - mean) / scale

    n_out = Y.shape[1]
    weights = np.zeros((n_out, X.shape[1]))
    intercepts = np.zeros(n_out)
    traces = []
    for t in range(n_out):
        y = Y[:, t]
        yc = y - y.mean()
        w, history = coordinate_descent(Xs, yc, lambda1, lambda2, tol=tol, max_sweeps=max_sweeps)
        weights[t] = w
        intercepts[t] = y.mean()
        traces.append(history)
    return ElasticNetModel(
        feature_names=list(feature_names), mean=mean, scale=scale,
        weights=weights, intercepts=intercepts,
        lambda1=lambda1, lambda2=lambda2, day_kind=day_kind,
        objective_traces=traces,
    )


# -- forecaster front-ends -----------------------------------------------------


class NaiveForecaster:
    name = "naive"

    def forecast(self, features: FeatureVector, when: datetime) -> ForecastVector:
        return forecast_naive(features)


class LinearForecaster:
    """Elastic-net models selected by calendar: one for workdays, one for
    weekends and holidays."""

    name = "linear"

    def __init__(self, workday_model: ElasticNetModel, offday_model: ElasticNetModel,
                 holidays: frozenset[date] = frozenset()):
        self.workday_model = workday_model
        self.offday_model = offday_model
        self.holidays = holidays

    def forecast(self, features: FeatureVector, when: datetime) -> ForecastVector:
        model = (self.workday_model if is_workday(when.date(), self.holidays)
                 else self.offday_model)
        psi = model.predict(features.to_array())
        return ForecastVector(psi, provenance="linear")


class ExternalForecaster:
    """Adapter for models trained elsewhere: features go out as a CSV, the
    configured command is run with (features_csv, predictions_csv) arguments,
    and the predictions CSV comes back as the forecast."""

    name = "external"

    def __init__(self, command: str, exchange_dir: str | Path,
                 history_steps: int = 96, forecast_steps: int = 32):
        self.command = command
        self.exchange_dir = Path(exchange_dir)
        self.history_steps = history_steps
        self.forecast_steps = forecast_steps

    def forecast(self, features: FeatureVector, when: datetime) -> ForecastVector:
        self.exchange_dir.mkdir(parents=True, exist_ok=True)
        feat_path = self.exchange_dir / "features.csv"
        pred_path = self.exchange_dir / "predictions.csv"
        names = feature_names(self.history_steps, self.forecast_steps)
        values = features.to_array()
        with open(feat_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(names)
            writer.writerow([repr(float(v)) for v in values])
        argv = shlex.split(self.command) + [str(feat_path), str(pred_path)]
        proc = subprocess.run(argv, capture_output=True, text=True)
        if proc.returncode != 0:
            raise ForecastError(
                f"external forecaster failed (exit {proc.returncode}): {proc.stderr.strip()}")
        with open(pred_path, newline="") as fh:
            rows = list(csv.reader(fh))
        data = rows[-1]
        psi = np.array([float(v) for v in data], dtype=float)
        if psi.size != self.forecast_steps:
            raise ForecastError(
                f"external forecaster returned {psi.size} values, expected {self.forecast_steps}")
        return ForecastVector(psi, provenance="external")


def pooled_rmse(pairs: list[tuple[np.ndarray, np.ndarray]]) -> float:
    """Horizon-averaged RMSE: squared errors pooled over every (forecast,
    realized) pair and every step before taking the root."""
    total = 0.0
    count = 0
    for pred, actual in pairs:
        pred = np.asarray(pred, dtype=float)
        actual = np.asarray(actual, dtype=float)
        n = min(pred.size, actual.size)
        if n == 0:
            continue
        diff = pred[:n] - actual[:n]
        total += float(diff @ diff)
        count += n
    if count == 0:
        return float("nan")
    return math.sqrt(total / count)
