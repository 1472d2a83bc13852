"""Shared domain types: the discrete time grid, charging sessions, station
state, and the running-peak recursion used by both the controllers and the
billing ledger.

Conventions: power in kW, energy in kWh, prices in $/kWh, time as integer
step indices on a billing-cycle grid. A billing cycle is one calendar month
and the running peak resets to zero at each cycle boundary.
"""

from __future__ import annotations

import calendar
import enum
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta


class DomainError(ValueError):
    """Raised when a physical precondition is violated (negative power, etc.)."""


class Choice(enum.Enum):
    REGULAR = "regular"
    SCHEDULED = "scheduled"
    LEAVE = "leave"


@dataclass(frozen=True)
class StationParams:
    """Physical station constants shared by every module."""

    max_power_kw: float = 6.6
    efficiency: float = 1.0
    step_hours: float = 0.25
    n_chargers: int = 8

    def __post_init__(self):
        if self.max_power_kw <= 0 or self.step_hours <= 0:
            raise DomainError("max_power_kw and step_hours must be positive")
        if not 0 < self.efficiency <= 1:
            raise DomainError("efficiency must be in (0, 1]")
        if self.n_chargers < 1:
            raise DomainError("need at least one charger")

    @property
    def step_energy_kwh(self) -> float:
        """Battery energy delivered by one full-power step."""
        return self.max_power_kw * self.efficiency * self.step_hours


@dataclass(frozen=True)
class TimeGrid:
    """Discrete time axis of one billing cycle.

    ``cycle_start`` is the wall-clock instant of step 0; the cycle spans
    ``horizon_len`` steps of ``step_hours`` each.
    """

    cycle_start: datetime
    horizon_len: int
    step_hours: float = 0.25

    def __post_init__(self):
        if self.step_hours <= 0:
            raise DomainError("step_hours must be positive")
        if self.horizon_len < 1:
            raise DomainError("horizon_len must be at least 1")

    def time_at(self, tau: int) -> datetime:
        return self.cycle_start + timedelta(hours=tau * self.step_hours)

    def index_of(self, when: datetime) -> float:
        """Fractional step index of a timestamp (may lie outside the cycle)."""
        return (when - self.cycle_start).total_seconds() / (3600.0 * self.step_hours)

    def snap_arrival(self, when: datetime) -> int:
        """Round an arrival down onto the grid."""
        return math.floor(self.index_of(when) + 1e-9)

    def snap_departure(self, when: datetime) -> int:
        """Round a departure up onto the grid."""
        return math.ceil(self.index_of(when) - 1e-9)


def month_grid(year: int, month: int, step_hours: float = 0.25) -> TimeGrid:
    """Grid covering one calendar month (the billing cycle)."""
    days = calendar.monthrange(year, month)[1]
    steps = round(days * 24 / step_hours)
    return TimeGrid(datetime(year, month, 1), steps, step_hours)


@dataclass
class ChargingSession:
    """One user's plug-in, from arrival to departure.

    ``energy_req`` is the binding energy target of the realized choice:
    the stated requirement for a SCHEDULED user, the energy a REGULAR
    session will draw before tapering off. ``locked_price`` is the $/kWh
    tariff fixed at arrival and never re-negotiated.
    """

    id: str
    arrival: int
    departure: int
    energy_req: float
    choice: Choice
    locked_price: float
    delivered: float = 0.0

    def __post_init__(self):
        if self.arrival >= self.departure:
            raise DomainError(f"session {self.id}: arrival must precede departure")
        if self.energy_req < 0:
            raise DomainError(f"session {self.id}: negative energy requirement")
        if self.locked_price < 0:
            raise DomainError(f"session {self.id}: negative locked price")

    @property
    def remaining(self) -> float:
        return max(0.0, self.energy_req - self.delivered)

    def full_power_end(self, params: StationParams) -> int:
        """Step at which a REGULAR session's battery is full, capped at departure."""
        if self.energy_req <= 0:
            return self.arrival
        steps = math.ceil(self.energy_req / params.step_energy_kwh - 1e-9)
        return min(self.departure, self.arrival + steps)


@dataclass
class PowerProfile:
    """Committed per-session plan: ``values[k]`` is the kW drawn at step
    ``start + k``; zero outside the stored window."""

    owner: str
    start: int
    values: "list[float] | object"  # list or 1-D numpy array

    def value_at(self, tau: int) -> float:
        k = tau - self.start
        if 0 <= k < len(self.values):
            return float(self.values[k])
        return 0.0

    def validate(self, max_power_kw: float, tol: float = 1e-9) -> None:
        for v in self.values:
            if v < -tol or v > max_power_kw + tol:
                raise DomainError(f"profile for {self.owner}: power {v} out of bounds")


@dataclass
class StationState:
    """Mutable snapshot the simulator hands to the controller at an arrival."""

    now: int
    active: dict[str, ChargingSession] = field(default_factory=dict)
    schedules: dict[str, PowerProfile] = field(default_factory=dict)
    running_peak: float = 0.0
    n_chargers: int = 8

    def scheduled_sessions(self) -> list[ChargingSession]:
        out = [s for s in self.active.values() if s.choice is Choice.SCHEDULED]
        out.sort(key=lambda s: s.id)
        return out

    def regular_sessions(self) -> list[ChargingSession]:
        out = [s for s in self.active.values() if s.choice is Choice.REGULAR]
        out.sort(key=lambda s: s.id)
        return out

    def validate(self) -> None:
        if self.running_peak < 0:
            raise DomainError("running peak cannot be negative")
        if len(self.active) > self.n_chargers:
            raise DomainError("more active sessions than chargers")
        for s in self.active.values():
            if not (s.arrival <= self.now < s.departure):
                raise DomainError(f"session {s.id} active outside its window")


def step_peak(running_peak: float, station_load: float) -> float:
    """Fold one step's station load into the billing-cycle running peak."""
    if running_peak < 0 or station_load < 0:
        raise DomainError("peak recursion takes nonnegative arguments")
    return max(running_peak, station_load)


def station_load(
    state: StationState,
    profiles: dict[str, PowerProfile],
    tau: int,
    params: StationParams,
) -> float:
    """Planning-view station load at step ``tau``: scheduled sessions follow
    their profiles, regular sessions count at full power until their battery
    fills or they depart."""
    total = 0.0
    for sess in state.active.values():
        if tau >= sess.departure:
            continue
        if sess.choice is Choice.SCHEDULED:
            prof = profiles.get(sess.id)
            if prof is None:
                raise DomainError(f"no committed profile for scheduled session {sess.id}")
            total += prof.value_at(tau)
        elif sess.choice is Choice.REGULAR:
            if tau < sess.full_power_end(params):
                total += params.max_power_kw
    return total


def advance_energy(
    session: ChargingSession,
    power_kw: float,
    params: StationParams,
) -> float:
    """Battery energy after one step at ``power_kw``; linear charging model."""
    if power_kw < 0 or power_kw > params.max_power_kw + 1e-9:
        raise DomainError(f"power {power_kw} outside [0, {params.max_power_kw}]")
    return session.delivered + params.step_hours * params.efficiency * power_kw


def feasible_energy(arrival: int, departure: int, params: StationParams) -> float:
    """Most energy deliverable in a window, used to clip infeasible requests."""
    return max(0, departure - arrival) * params.step_energy_kwh


def regular_rectangle(
    session_id: str, arrival: int, departure: int, energy_kwh: float, params: StationParams
) -> PowerProfile:
    """Full-power planning block for a regular session (battery-fill duration,
    capped at departure). The physical step loop tapers the last step; planning
    keeps the flat rectangle."""
    if energy_kwh <= 0:
        return PowerProfile(session_id, arrival, [])
    steps = math.ceil(energy_kwh / params.step_energy_kwh - 1e-9)
    steps = min(steps, departure - arrival)
    return PowerProfile(session_id, arrival, [params.max_power_kw] * steps)
