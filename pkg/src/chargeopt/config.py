"""Application configuration: one human-editable YAML file drives every run.

The file has six sections (all optional, all keys defaulted):

    station:    max_power_kw, efficiency, step_hours, n_chargers
    controller: mode, price_lo, price_hi, price_step, couple_prices,
                cap_increment_kw, softplus_segments, softplus_halfwidth_kw,
                softplus_scale
    forecaster: kind (naive|linear|external), history_steps, forecast_steps,
                lambda1, lambda2, model_workday, model_offday,
                external_command, exchange_dir
    choice:     price_gap, regular_const, leave_const, avg_price
    tariff:     demand_rate, weekday_windows (list of {name, start_hour,
                end_hour, rate}), weekend_windows (optional)
    simulation: seed, replications, months (list of YYYY-MM), holidays,
                scheduled_energy_fraction
    synthetic:  the workload-shape knobs of SynthParams
    output:     dir

Unknown keys and out-of-range values fail loading with the offending
key path in the message. ``to_dict`` inverts ``from_dict`` field by field,
so a config can be archived alongside the outputs it produced.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import yaml

from .choice import ChoiceCoefficients
from .domain import StationParams
from .simulator import SimConfig, SynthParams
from .tariff import TariffSchedule, TouWindow, default_tariff


class ConfigError(ValueError):
    pass


_CONTROLLERS = ("baseline", "threshold", "softplus", "mpc")
_FORECASTERS = ("naive", "linear", "external")


@dataclass(frozen=True)
class ForecasterConfig:
    kind: str = "naive"
    history_steps: int = 96
    forecast_steps: int = 32
    lambda1: float = 0.1
    lambda2: float = 0.1
    model_workday: str | None = None
    model_offday: str | None = None
    external_command: str | None = None
    exchange_dir: str = "forecast-exchange"


@dataclass(frozen=True)
class AppConfig:
    station: StationParams = field(default_factory=StationParams)
    controller_mode: str = "baseline"
    price_lo: float = 0.10
    price_hi: float = 1.00
    price_step: float = 0.05
    couple_prices: bool = True
    cap_increment_kw: float = 1.0
    softplus_segments: int = 16
    softplus_halfwidth_kw: float | None = None
    softplus_scale: float = 1.0
    forecaster: ForecasterConfig = field(default_factory=ForecasterConfig)
    coefficients: ChoiceCoefficients = field(default_factory=ChoiceCoefficients)
    tariff: TariffSchedule = field(default_factory=default_tariff)
    seed: int = 0
    replications: int = 10
    months: tuple[str, ...] = ("2023-06", "2023-07", "2023-08")
    holidays: tuple[date, ...] = ()
    scheduled_energy_fraction: float = 0.57
    synth: SynthParams = field(default_factory=SynthParams)
    out_dir: str = "out"

    def sim_config(self) -> SimConfig:
        return SimConfig(
            params=self.station,
            controller=self.controller_mode,
            forecaster=self.forecaster.kind,
            seed=self.seed,
            replications=self.replications,
            demand_rate=self.tariff.demand_rate,
            cap_increment_kw=self.cap_increment_kw,
            history_steps=self.forecaster.history_steps,
            forecast_steps=self.forecaster.forecast_steps,
            softplus_segments=self.softplus_segments,
            softplus_halfwidth_kw=self.softplus_halfwidth_kw,
            softplus_scale=self.softplus_scale,
            scheduled_energy_fraction=self.scheduled_energy_fraction,
            price_lo=self.price_lo,
            price_hi=self.price_hi,
            price_step=self.price_step,
            couple_prices=self.couple_prices,
            coefficients=self.coefficients,
            holidays=self.holidays,
        )


def _take(section: dict, path: str, key: str, kind, default, errors: list[str]):
    if key not in section:
        return default
    value = section.pop(key)
    if value is None:  # explicit null means "use the default"
        return default
    if kind is float and isinstance(value, int):
        value = float(value)
    if kind is not None and not isinstance(value, kind):
        errors.append(f"{path}.{key}: expected {getattr(kind, '__name__', kind)}, got {value!r}")
        return default
    return value


def _windows_from(items, path: str, errors: list[str]) -> tuple[TouWindow, ...] | None:
    if items is None:
        return None
    out = []
    for i, item in enumerate(items):
        if not isinstance(item, dict):
            errors.append(f"{path}[{i}]: expected a mapping")
            continue
        try:
            out.append(TouWindow(
                name=str(item.get("name", f"window_{i}")),
                start_hour=float(item["start_hour"]),
                end_hour=float(item["end_hour"]),
                rate=float(item["rate"]),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            errors.append(f"{path}[{i}]: {exc}")
    return tuple(out)


def from_dict(doc: dict) -> AppConfig:
    """Build a validated AppConfig, reporting every problem by key path."""
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a mapping")
    doc = {k: (dict(v) if isinstance(v, dict) else v) for k, v in doc.items()}
    errors: list[str] = []
    defaults = AppConfig()

    st = doc.pop("station", {}) or {}
    station = StationParams(
        max_power_kw=_take(st, "station", "max_power_kw", (int, float), 6.6, errors),
        efficiency=_take(st, "station", "efficiency", (int, float), 1.0, errors),
        step_hours=_take(st, "station", "step_hours", (int, float), 0.25, errors),
        n_chargers=_take(st, "station", "n_chargers", int, 8, errors),
    )

    ct = doc.pop("controller", {}) or {}
    mode = _take(ct, "controller", "mode", str, "baseline", errors)
    if mode not in _CONTROLLERS:
        errors.append(f"controller.mode: {mode!r} not one of {_CONTROLLERS}")
    price_lo = _take(ct, "controller", "price_lo", (int, float), 0.10, errors)
    price_hi = _take(ct, "controller", "price_hi", (int, float), 1.00, errors)
    price_step = _take(ct, "controller", "price_step", (int, float), 0.05, errors)
    if not 0 <= price_lo <= price_hi:
        errors.append(f"controller.price_lo/price_hi: bad range [{price_lo}, {price_hi}]")
    if price_step <= 0:
        errors.append(f"controller.price_step: must be positive, got {price_step}")
    couple = _take(ct, "controller", "couple_prices", bool, True, errors)
    cap_inc = _take(ct, "controller", "cap_increment_kw", (int, float), 1.0, errors)
    sp_seg = _take(ct, "controller", "softplus_segments", int, 16, errors)
    sp_half = _take(ct, "controller", "softplus_halfwidth_kw", (int, float), None, errors)
    sp_scale = _take(ct, "controller", "softplus_scale", (int, float), 1.0, errors)

    fc = doc.pop("forecaster", {}) or {}
    fc_kind = _take(fc, "forecaster", "kind", str, "naive", errors)
    if fc_kind not in _FORECASTERS:
        errors.append(f"forecaster.kind: {fc_kind!r} not one of {_FORECASTERS}")
    forecaster = ForecasterConfig(
        kind=fc_kind,
        history_steps=_take(fc, "forecaster", "history_steps", int, 96, errors),
        forecast_steps=_take(fc, "forecaster", "forecast_steps", int, 32, errors),
        lambda1=_take(fc, "forecaster", "lambda1", (int, float), 0.1, errors),
        lambda2=_take(fc, "forecaster", "lambda2", (int, float), 0.1, errors),
        model_workday=_take(fc, "forecaster", "model_workday", str, None, errors),
        model_offday=_take(fc, "forecaster", "model_offday", str, None, errors),
        external_command=_take(fc, "forecaster", "external_command", str, None, errors),
        exchange_dir=_take(fc, "forecaster", "exchange_dir", str, "forecast-exchange", errors),
    )

    ch = doc.pop("choice", {}) or {}
    coefficients = ChoiceCoefficients(
        price_gap=_take(ch, "choice", "price_gap", (int, float), 0.0184, errors),
        regular_const=_take(ch, "choice", "regular_const", (int, float), 0.341, errors),
        leave_const=_take(ch, "choice", "leave_const", (int, float), -1.0, errors),
        avg_price=_take(ch, "choice", "avg_price", (int, float), 0.005, errors),
    )

    tf = doc.pop("tariff", {}) or {}
    demand_rate = _take(tf, "tariff", "demand_rate", (int, float), 20.0, errors)
    weekday = _windows_from(tf.pop("weekday_windows", None), "tariff.weekday_windows", errors)
    weekend = _windows_from(tf.pop("weekend_windows", None), "tariff.weekend_windows", errors)
    try:
        if weekday is None:
            tariff = default_tariff(demand_rate)
            if weekend is not None:
                tariff = TariffSchedule(tariff.windows, demand_rate, weekend)
        else:
            tariff = TariffSchedule(weekday, demand_rate, weekend)
    except ValueError as exc:
        errors.append(f"tariff: {exc}")
        tariff = default_tariff(demand_rate if demand_rate >= 0 else 20.0)

    sim = doc.pop("simulation", {}) or {}
    seed = _take(sim, "simulation", "seed", int, 0, errors)
    reps = _take(sim, "simulation", "replications", int, 10, errors)
    if reps < 1:
        errors.append(f"simulation.replications: must be at least 1, got {reps}")
    months_raw = _take(sim, "simulation", "months", list, list(defaults.months), errors)
    months: list[str] = []
    for i, m in enumerate(months_raw):
        text = str(m)
        parts = text.split("-")
        ok = len(parts) == 2 and parts[0].isdigit() and parts[1].isdigit() and 1 <= int(parts[1]) <= 12
        if not ok:
            errors.append(f"simulation.months[{i}]: {text!r} is not YYYY-MM")
        else:
            months.append(f"{int(parts[0]):04d}-{int(parts[1]):02d}")
    holidays = []
    for i, h in enumerate(_take(sim, "simulation", "holidays", list, [], errors)):
        if isinstance(h, date):
            holidays.append(h)
            continue
        try:
            holidays.append(date.fromisoformat(str(h)))
        except ValueError:
            errors.append(f"simulation.holidays[{i}]: {h!r} is not an ISO date")
    fraction = _take(sim, "simulation", "scheduled_energy_fraction", (int, float), 0.57, errors)
    if not 0 < fraction <= 1:
        errors.append(f"simulation.scheduled_energy_fraction: {fraction} outside (0, 1]")

    sy = doc.pop("synthetic", {}) or {}
    synth_kwargs = {}
    for f in dataclasses.fields(SynthParams):
        default = getattr(defaults.synth, f.name)
        if f.name == "weekday_profile":
            raw = _take(sy, "synthetic", f.name, list, list(default), errors)
            if len(raw) != 5 or not all(isinstance(v, (int, float)) for v in raw):
                errors.append("synthetic.weekday_profile: expected 5 numbers (Mon..Fri)")
                raw = list(default)
            synth_kwargs[f.name] = tuple(float(v) for v in raw)
        else:
            synth_kwargs[f.name] = _take(sy, "synthetic", f.name, (int, float), default, errors)
    synth = SynthParams(**synth_kwargs)

    out = doc.pop("output", {}) or {}
    out_dir = _take(out, "output", "dir", str, "out", errors)

    for section_name, section in (("station", st), ("controller", ct), ("forecaster", fc),
                                  ("choice", ch), ("tariff", tf), ("simulation", sim),
                                  ("synthetic", sy), ("output", out)):
        for key in section:
            errors.append(f"{section_name}.{key}: unknown key")
    for key in doc:
        errors.append(f"{key}: unknown section")

    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(sorted(errors)))

    return AppConfig(
        station=station, controller_mode=mode,
        price_lo=float(price_lo), price_hi=float(price_hi), price_step=float(price_step),
        couple_prices=couple, cap_increment_kw=float(cap_inc),
        softplus_segments=sp_seg,
        softplus_halfwidth_kw=None if sp_half is None else float(sp_half),
        softplus_scale=float(sp_scale),
        forecaster=forecaster, coefficients=coefficients, tariff=tariff,
        seed=seed, replications=reps, months=tuple(months), holidays=tuple(holidays),
        scheduled_energy_fraction=float(fraction), synth=synth, out_dir=out_dir,
    )


def to_dict(cfg: AppConfig) -> dict:
    def windows(ws):
        return [
            {"name": w.name, "start_hour": w.start_hour, "end_hour": w.end_hour, "rate": w.rate}
            for w in ws
        ]

    doc = {
        "station": {
            "max_power_kw": cfg.station.max_power_kw,
            "efficiency": cfg.station.efficiency,
            "step_hours": cfg.station.step_hours,
            "n_chargers": cfg.station.n_chargers,
        },
        "controller": {
            "mode": cfg.controller_mode,
            "price_lo": cfg.price_lo,
            "price_hi": cfg.price_hi,
            "price_step": cfg.price_step,
            "couple_prices": cfg.couple_prices,
            "cap_increment_kw": cfg.cap_increment_kw,
            "softplus_segments": cfg.softplus_segments,
            "softplus_halfwidth_kw": cfg.softplus_halfwidth_kw,
            "softplus_scale": cfg.softplus_scale,
        },
        "forecaster": {
            "kind": cfg.forecaster.kind,
            "history_steps": cfg.forecaster.history_steps,
            "forecast_steps": cfg.forecaster.forecast_steps,
            "lambda1": cfg.forecaster.lambda1,
            "lambda2": cfg.forecaster.lambda2,
            "model_workday": cfg.forecaster.model_workday,
            "model_offday": cfg.forecaster.model_offday,
            "external_command": cfg.forecaster.external_command,
            "exchange_dir": cfg.forecaster.exchange_dir,
        },
        "choice": {
            "price_gap": cfg.coefficients.price_gap,
            "regular_const": cfg.coefficients.regular_const,
            "leave_const": cfg.coefficients.leave_const,
            "avg_price": cfg.coefficients.avg_price,
        },
        "tariff": {
            "demand_rate": cfg.tariff.demand_rate,
            "weekday_windows": windows(cfg.tariff.windows),
            "weekend_windows": None if cfg.tariff.weekend_windows is None
            else windows(cfg.tariff.weekend_windows),
        },
        "simulation": {
            "seed": cfg.seed,
            "replications": cfg.replications,
            "months": list(cfg.months),
            "holidays": [d.isoformat() for d in cfg.holidays],
            "scheduled_energy_fraction": cfg.scheduled_energy_fraction,
        },
        "synthetic": {
            f.name: (list(v) if isinstance(v := getattr(cfg.synth, f.name), tuple) else v)
            for f in dataclasses.fields(SynthParams)
        },
        "output": {"dir": cfg.out_dir},
    }
    return doc


def load_config(path: str | Path | None) -> AppConfig:
    if path is None:
        return AppConfig()
    text = Path(path).read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    try:
        return from_dict(doc)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def dump_config(cfg: AppConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=True)
