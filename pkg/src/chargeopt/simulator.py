"""Event-driven Monte Carlo simulator.

Replays (or synthesizes) a month of charging sessions. Each arrival triggers
the configured controller, the user's service choice is sampled from the
discrete choice model (restricted to regular/scheduled: replayed users
already decided to charge), and the engine then advances quarter-hour steps,
executing committed schedules, metering energy and money into the cycle
ledger, and folding the running peak.

Sessions replayed from a historically regular record but sampled as
scheduled state an energy requirement equal to a configured fraction
(default 57%) of the originally delivered energy; departures are taken as
known; every charger delivers the same maximum power.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from datetime import date, datetime

import numpy as np

from . import controllers
from .choice import ChoiceCoefficients
from .controllers import (
    ArrivalRequest,
    ControllerDecision,
    ControllerSettings,
    PriceGrid,
    decide,
)
from .domain import (
    ChargingSession,
    Choice,
    PowerProfile,
    StationParams,
    StationState,
    TimeGrid,
    advance_energy,
    feasible_energy,
    month_grid,
    step_peak,
)
from .forecasting import (
    FeatureVector,
    build_features,
    clip_forecast,
    pooled_rmse,
)
from .tariff import CycleLedger, CycleReport, TariffSchedule

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SessionRecord:
    """One historical (or synthetic) charging session."""

    session_id: str
    arrival: datetime
    departure: datetime
    energy_kwh: float
    choice_label: str | None = None  # "regular" | "scheduled"

    def __post_init__(self):
        if self.arrival >= self.departure:
            raise ValueError(f"session {self.session_id}: arrival not before departure")
        if self.energy_kwh < 0:
            raise ValueError(f"session {self.session_id}: negative energy")
        if self.choice_label not in (None, "regular", "scheduled"):
            raise ValueError(f"session {self.session_id}: bad label {self.choice_label!r}")


@dataclass(frozen=True)
class SimConfig:
    """Run parameters; the defaults are the published simulation settings."""

    params: StationParams = field(default_factory=StationParams)
    controller: str = controllers.BASELINE
    forecaster: str = "naive"
    seed: int = 0
    replications: int = 1
    demand_rate: float = 20.0
    cap_increment_kw: float = 1.0
    history_steps: int = 96
    forecast_steps: int = 32
    softplus_segments: int = 16
    softplus_halfwidth_kw: float | None = None
    softplus_scale: float = 1.0
    scheduled_energy_fraction: float = 0.57
    price_lo: float = 0.10
    price_hi: float = 1.00
    price_step: float = 0.05
    couple_prices: bool = True
    coefficients: ChoiceCoefficients = field(default_factory=ChoiceCoefficients)
    holidays: tuple[date, ...] = ()

    def controller_settings(self, mode: str | None = None) -> ControllerSettings:
        return ControllerSettings(
            mode=mode or self.controller,
            grid=PriceGrid.from_range(self.price_lo, self.price_hi, self.price_step,
                                      self.couple_prices),
            demand_rate=self.demand_rate,
            cap_increment_kw=self.cap_increment_kw,
            softplus_segments=self.softplus_segments,
            softplus_halfwidth_kw=self.softplus_halfwidth_kw,
            softplus_scale=self.softplus_scale,
            forecast_steps=self.forecast_steps,
            coefficients=self.coefficients,
        )


@dataclass
class AuditRow:
    session_id: str
    t_start: int
    menu_scheduled: float
    menu_regular: float
    expected_cost: float
    p_reg: float
    p_sch: float
    p_leave: float
    realized_choice: str
    locked_price: float
    power_cap: float | None


@dataclass
class MonthResult:
    label: str
    controller: str
    forecaster: str | None
    report: CycleReport
    rejected: int
    load_trace: np.ndarray
    audits: list[AuditRow]
    forecast_rmse: float | None = None
    n_sessions: int = 0
    feature_log: list[tuple[FeatureVector, int]] = field(default_factory=list)
    forecast_samples: list[tuple[int, np.ndarray, np.ndarray]] = field(default_factory=list)

    def training_pairs(self, forecast_steps: int) -> tuple[np.ndarray, np.ndarray, list[datetime]]:
        """(features, realized next-step loads) pairs collected during the run;
        arrivals too close to the cycle end are skipped."""
        xs, ys, times = [], [], []
        for features, t0 in self.feature_log:
            if t0 + forecast_steps > self.load_trace.size:
                continue
            xs.append(features.to_array())
            ys.append(self.load_trace[t0:t0 + forecast_steps])
            times.append(t0)
        if not xs:
            return np.zeros((0, 0)), np.zeros((0, forecast_steps)), []
        return np.array(xs), np.array(ys), times


def sample_stay_choice(dist, rng: np.random.Generator) -> Choice:
    """Draw regular vs scheduled for a user who has already decided to
    charge (leave mass renormalized away)."""
    stay = dist.p_reg + dist.p_sch
    if stay <= 0:
        raise ValueError("degenerate choice distribution: nobody stays")
    if rng.random() < dist.p_reg / stay:
        return Choice.REGULAR
    return Choice.SCHEDULED


def _snap_records(records: list[SessionRecord], grid: TimeGrid,
                  params: StationParams) -> list[tuple[int, int, SessionRecord]]:
    """Snap arrivals down / departures up onto the grid, clamp to the cycle,
    and drop sessions that fall outside it."""
    out = []
    for rec in records:
        arr = grid.snap_arrival(rec.arrival)
        dep = grid.snap_departure(rec.departure)
        if dep <= arr:
            dep = arr + 1
        arr = max(arr, 0)
        dep = min(dep, grid.horizon_len)
        if arr >= grid.horizon_len or dep <= 0 or dep <= arr:
            log.info("session %s outside the billing cycle, skipped", rec.session_id)
            continue
        out.append((arr, dep, rec))
    out.sort(key=lambda t: (t[0], t[2].session_id))
    return out


def simulate_month(
    records: list[SessionRecord],
    grid: TimeGrid,
    config: SimConfig,
    tariff: TariffSchedule,
    rng: np.random.Generator,
    forecaster=None,
    controller_mode: str | None = None,
    collect_features: bool = False,
    label: str = "",
) -> MonthResult:
    """Run one replication of one billing cycle."""
    params = config.params
    mode = controller_mode or config.controller
    settings = config.controller_settings(mode)
    if mode == controllers.MPC and forecaster is None:
        raise ValueError("mpc controller needs a forecaster")
    rates = tariff.rate_profile(grid)
    state = StationState(now=0, n_chargers=params.n_chargers)
    ledger = CycleLedger(grid, tariff, label=label)
    trace = np.zeros(grid.horizon_len)
    audits: list[AuditRow] = []
    feature_log: list[tuple[FeatureVector, int]] = []
    forecast_log: list[tuple[int, np.ndarray, np.ndarray]] = []
    rejected = 0
    accepted = 0
    holidays = frozenset(config.holidays)

    arrivals = _snap_records(records, grid, params)
    next_arrival = 0

    for t in range(grid.horizon_len):
        state.now = t
        while next_arrival < len(arrivals) and arrivals[next_arrival][0] == t:
            arr, dep, rec = arrivals[next_arrival]
            next_arrival += 1
            if len(state.active) >= params.n_chargers:
                rejected += 1
                log.info("no free charger for %s at step %d", rec.session_id, t)
                continue

            cap = feasible_energy(arr, dep, params)
            energy_reg = min(rec.energy_kwh, cap)
            if rec.energy_kwh > cap + 1e-9:
                log.warning("session %s energy %.2f kWh clipped to feasible %.2f kWh",
                            rec.session_id, rec.energy_kwh, cap)
            label_reg = rec.choice_label in (None, "regular")
            energy_sch = config.scheduled_energy_fraction * energy_reg if label_reg else energy_reg
            request = ArrivalRequest(
                session_id=rec.session_id, t_start=t, departure=dep,
                energy_scheduled=min(energy_sch, cap), energy_regular=energy_reg,
            )

            forecast = None
            features = None
            if mode == controllers.MPC or collect_features:
                features = build_features(
                    state, trace[:t], request, grid.time_at(t), params,
                    history_steps=config.history_steps,
                    forecast_steps=config.forecast_steps,
                    holidays=holidays,
                )
            if collect_features:
                feature_log.append((features, t))
            if mode == controllers.MPC:
                forecast = forecaster.forecast(features, grid.time_at(t))
                forecast = clip_forecast(forecast, features.planned_profile)
                forecast_log.append((t, forecast.load_kw.copy(),
                                     features.planned_profile.copy()))

            decision = decide(state, request, params, settings, rates, forecast=forecast)
            choice = sample_stay_choice(decision.probabilities, rng)

            for sid, values in decision.shared_profiles.items():
                state.schedules[sid] = PowerProfile(sid, t, values)
            if choice is Choice.SCHEDULED:
                locked = decision.menu.scheduled
                energy = request.energy_scheduled
                profile = PowerProfile(rec.session_id, t, decision.candidate_profile)
            else:
                locked = decision.menu.regular
                energy = request.energy_regular
                steps = min(dep - t, math.ceil(energy / params.step_energy_kwh - 1e-9)) if energy > 0 else 0
                profile = PowerProfile(rec.session_id, t, [params.max_power_kw] * steps)
            session = ChargingSession(
                id=rec.session_id, arrival=t, departure=dep,
                energy_req=energy, choice=choice, locked_price=locked,
            )
            state.active[rec.session_id] = session
            state.schedules[rec.session_id] = profile
            ledger.register_session(rec.session_id, locked)
            accepted += 1
            audits.append(AuditRow(
                session_id=rec.session_id, t_start=t,
                menu_scheduled=decision.menu.scheduled,
                menu_regular=decision.menu.regular,
                expected_cost=decision.expected_cost,
                p_reg=decision.probabilities.p_reg,
                p_sch=decision.probabilities.p_sch,
                p_leave=decision.probabilities.p_leave,
                realized_choice=choice.value,
                locked_price=locked,
                power_cap=decision.power_cap,
            ))

        # Execute one step of every active session.
        loads: dict[str, float] = {}
        for sid in sorted(state.active):
            sess = state.active[sid]
            if sess.choice is Choice.REGULAR:
                power = min(params.max_power_kw,
                            sess.remaining / (params.step_hours * params.efficiency))
                power = max(0.0, power)
            else:
                # committed plans are feasible to solver tolerance; snap the
                # dust onto the physical box before metering
                power = min(max(state.schedules[sid].value_at(t), 0.0), params.max_power_kw)
            sess.delivered = advance_energy(sess, power, params)
            loads[sid] = power
        trace[t] = sum(loads.values())
        state.running_peak = step_peak(state.running_peak, trace[t])
        ledger.accrue_step(loads, t)

        for sid in [s for s, sess in state.active.items() if sess.departure <= t + 1]:
            del state.active[sid]
            state.schedules.pop(sid, None)

    rmse = None
    if forecast_log:
        pairs = [(psi, trace[t0:t0 + config.forecast_steps]) for t0, psi, _ in forecast_log]
        rmse = pooled_rmse(pairs)

    return MonthResult(
        label=label,
        controller=mode,
        forecaster=getattr(forecaster, "name", None) if mode == controllers.MPC else None,
        report=ledger.close_cycle(),
        rejected=rejected,
        load_trace=trace,
        audits=audits,
        forecast_rmse=rmse,
        n_sessions=accepted,
        feature_log=feature_log,
        forecast_samples=forecast_log,
    )


# -- Monte Carlo across months and replications ---------------------------------


@dataclass(frozen=True)
class MonthSpec:
    label: str
    grid: TimeGrid
    records: tuple[SessionRecord, ...]


@dataclass
class RunRow:
    controller: str
    forecaster: str | None
    month: str
    replication: int
    demand_cost: float
    energy_cost: float
    revenue: float
    total_cost: float
    profit: float
    peak_kw: float
    rejected: int
    forecast_rmse: float | None


@dataclass
class ComparisonRow:
    controller: str
    forecaster: str | None
    demand_cost: float
    energy_cost: float
    revenue: float
    total_cost: float
    profit: float
    peak_kw: float
    forecast_rmse: float | None
    demand_change_pct: float | None = None
    energy_change_pct: float | None = None
    cost_change_pct: float | None = None

    @property
    def name(self) -> str:
        if self.forecaster:
            return f"{self.controller}({self.forecaster})"
        return self.controller


@dataclass
class McResult:
    runs: list[RunRow]
    comparison: list[ComparisonRow]


def replication_rng(master_seed: int, month_index: int, rep: int) -> np.random.Generator:
    """Deterministic independent stream per (month, replication); the same
    stream is shared across controllers so comparisons are paired."""
    return np.random.default_rng(np.random.SeedSequence((master_seed, month_index, rep)))


def monte_carlo(
    months: list[MonthSpec],
    config: SimConfig,
    tariff: TariffSchedule,
    controller_modes: list[str] | None = None,
    forecasters: dict[str, object] | None = None,
) -> McResult:
    """Run every (controller, month, replication) cell and aggregate.

    ``forecasters`` maps forecaster names to instances; the configured
    ``config.forecaster`` is used for mpc runs unless a mode is written as
    ``mpc:<forecaster>``.
    """
    if not months:
        raise ValueError("need at least one month")
    if config.replications < 1:
        raise ValueError("need at least one replication")
    modes = controller_modes or [config.controller]
    forecasters = forecasters or {}
    runs: list[RunRow] = []
    for mode_spec in modes:
        if ":" in mode_spec:
            mode, fc_name = mode_spec.split(":", 1)
        else:
            mode, fc_name = mode_spec, config.forecaster
        forecaster = forecasters.get(fc_name) if mode == controllers.MPC else None
        if mode == controllers.MPC and forecaster is None:
            raise ValueError(f"no forecaster named {fc_name!r} supplied for {mode_spec}")
        for m_idx, spec in enumerate(months):
            for rep in range(config.replications):
                rng = replication_rng(config.seed, m_idx, rep)
                result = simulate_month(
                    list(spec.records), spec.grid, config, tariff, rng,
                    forecaster=forecaster, controller_mode=mode, label=spec.label,
                )
                runs.append(RunRow(
                    controller=mode,
                    forecaster=result.forecaster,
                    month=spec.label,
                    replication=rep,
                    demand_cost=result.report.demand_cost,
                    energy_cost=result.report.energy_cost,
                    revenue=result.report.revenue,
                    total_cost=result.report.total_cost,
                    profit=result.report.profit,
                    peak_kw=result.report.peak_kw,
                    rejected=result.rejected,
                    forecast_rmse=result.forecast_rmse,
                ))
    runs.sort(key=lambda r: (r.controller, r.forecaster or "", r.month, r.replication))
    comparison = summarize_runs(runs)
    return McResult(runs=runs, comparison=comparison)


def summarize_runs(runs: list[RunRow]) -> list[ComparisonRow]:
    groups: dict[tuple[str, str | None], list[RunRow]] = {}
    order: list[tuple[str, str | None]] = []
    for r in runs:
        key = (r.controller, r.forecaster)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(r)

    def mean(vals):
        vals = [v for v in vals if v is not None and not (isinstance(v, float) and math.isnan(v))]
        return sum(vals) / len(vals) if vals else None

    rows = []
    for key in order:
        rs = groups[key]
        rows.append(ComparisonRow(
            controller=key[0],
            forecaster=key[1],
            demand_cost=mean([r.demand_cost for r in rs]),
            energy_cost=mean([r.energy_cost for r in rs]),
            revenue=mean([r.revenue for r in rs]),
            total_cost=mean([r.total_cost for r in rs]),
            profit=mean([r.profit for r in rs]),
            peak_kw=mean([r.peak_kw for r in rs]),
            forecast_rmse=mean([r.forecast_rmse for r in rs]),
        ))
    base = next((r for r in rows if r.controller == controllers.BASELINE), None)
    if base is not None:
        def pct(new, old):
            if old is None or old == 0 or new is None:
                return None
            return 100.0 * (new - old) / old
        for r in rows:
            r.demand_change_pct = pct(r.demand_cost, base.demand_cost)
            r.energy_change_pct = pct(r.energy_cost, base.energy_cost)
            r.cost_change_pct = pct(r.total_cost, base.total_cost)
    return rows


# -- synthetic workload ----------------------------------------------------------


@dataclass(frozen=True)
class SynthParams:
    """Qualitative workplace shape: arrivals bunch in the morning, stays run
    to the late afternoon, weekends are quiet."""

    sessions_per_workday: float = 7.5
    weekend_factor: float = 0.20
    day_volume_sigma: float = 0.10  # lognormal busy/quiet day factor
    weekday_profile: tuple[float, ...] = (1.25, 1.10, 1.00, 0.95, 0.70)  # Mon..Fri
    morning_share: float = 0.75
    morning_peak_hour: float = 8.4
    morning_sd_hours: float = 1.1
    midday_lo_hour: float = 10.0
    midday_hi_hour: float = 14.5
    stay_mean_hours: float = 7.0
    stay_sd_hours: float = 0.7
    stay_min_hours: float = 5.0
    stay_max_hours: float = 8.0
    latest_departure_hour: float = 20.5
    energy_median_kwh: float = 16.0
    energy_sigma: float = 0.35
    energy_min_kwh: float = 7.0
    energy_max_kwh: float = 30.0
    scheduled_label_share: float = 0.40


def generate_synthetic_month(
    synth: SynthParams,
    year: int,
    month: int,
    seed: int,
    params: StationParams | None = None,
    holidays: frozenset[date] = frozenset(),
) -> list[SessionRecord]:
    """Reproducible stand-in for a real month of workplace sessions."""
    params = params or StationParams()
    rng = np.random.default_rng(np.random.SeedSequence((seed, year * 100 + month)))
    grid = month_grid(year, month, params.step_hours)
    days = grid.horizon_len * params.step_hours / 24.0
    records: list[SessionRecord] = []
    for day in range(int(days)):
        day_date = date(year, month, day + 1)
        workday = day_date.weekday() < 5 and day_date not in holidays
        if workday:
            rate = synth.sessions_per_workday * synth.weekday_profile[day_date.weekday()]
        else:
            rate = synth.sessions_per_workday * synth.weekend_factor
        if synth.day_volume_sigma > 0:
            rate *= rng.lognormal(-0.5 * synth.day_volume_sigma ** 2, synth.day_volume_sigma)
        n = rng.poisson(rate)
        for k in range(n):
            if rng.random() < synth.morning_share:
                arr_hour = rng.normal(synth.morning_peak_hour, synth.morning_sd_hours)
            else:
                arr_hour = rng.uniform(synth.midday_lo_hour, synth.midday_hi_hour)
            arr_hour = float(np.clip(arr_hour, 6.0, 15.0))
            stay = rng.normal(synth.stay_mean_hours, synth.stay_sd_hours)
            stay = float(np.clip(stay, synth.stay_min_hours,
                                 min(synth.stay_max_hours, synth.latest_departure_hour - arr_hour)))
            energy = float(rng.lognormal(math.log(synth.energy_median_kwh), synth.energy_sigma))
            cap = 0.95 * params.max_power_kw * params.efficiency * stay
            energy = float(np.clip(energy, min(synth.energy_min_kwh, cap),
                                   min(synth.energy_max_kwh, cap)))
            label = "scheduled" if rng.random() < synth.scheduled_label_share else "regular"
            arrival = datetime(year, month, day + 1) + _hours(arr_hour)
            departure = arrival + _hours(stay)
            records.append(SessionRecord(
                session_id=f"{year}{month:02d}{day + 1:02d}-{k:02d}",
                arrival=arrival,
                departure=departure,
                energy_kwh=round(energy, 3),
                choice_label=label,
            ))
    records.sort(key=lambda r: (r.arrival, r.session_id))
    return records


def _hours(h: float):
    from datetime import timedelta

    return timedelta(seconds=round(h * 3600))


def synthetic_months(
    synth: SynthParams,
    year: int,
    first_month: int,
    n_months: int,
    seed: int,
    params: StationParams | None = None,
) -> list[MonthSpec]:
    params = params or StationParams()
    specs = []
    y, m = year, first_month
    for _ in range(n_months):
        records = generate_synthetic_month(synth, y, m, seed, params)
        specs.append(MonthSpec(
            label=f"{y}-{m:02d}",
            grid=month_grid(y, m, params.step_hours),
            records=tuple(records),
        ))
        m += 1
        if m > 12:
            m, y = 1, y + 1
    return specs
