"""Time-of-use energy pricing, demand-charge accounting, and the per-cycle
cost/revenue ledger.

A tariff is a set of named daily windows (peak / off-peak / super-off-peak)
tiling [0, 24) hours, optionally with a weekend variant, plus a $/kW demand
rate assessed once per billing cycle on the highest step-average load. The
shipped default follows the PG&E commercial EV rate structure (June 2023
vintage): super-off-peak 09:00-14:00, peak 16:00-21:00, off-peak otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from .domain import TimeGrid, step_peak


class TariffError(ValueError):
    pass


class LedgerError(KeyError):
    pass


@dataclass(frozen=True)
class TouWindow:
    name: str
    start_hour: float  # inclusive
    end_hour: float    # exclusive
    rate: float        # $/kWh

    def __post_init__(self):
        if not 0 <= self.start_hour < self.end_hour <= 24:
            raise TariffError(f"window {self.name}: bad hours [{self.start_hour}, {self.end_hour})")
        if self.rate < 0:
            raise TariffError(f"window {self.name}: negative rate")


def _check_tiling(windows: tuple[TouWindow, ...]) -> None:
    spans = sorted(windows, key=lambda w: w.start_hour)
    cursor = 0.0
    for w in spans:
        if abs(w.start_hour - cursor) > 1e-9:
            raise TariffError(f"TOU windows leave a gap or overlap at hour {cursor}")
        cursor = w.end_hour
    if abs(cursor - 24.0) > 1e-9:
        raise TariffError("TOU windows must tile the full day")


@dataclass(frozen=True)
class TariffSchedule:
    windows: tuple[TouWindow, ...]
    demand_rate: float  # $/kW per billing cycle
    weekend_windows: tuple[TouWindow, ...] | None = None

    def __post_init__(self):
        if self.demand_rate < 0:
            raise TariffError("negative demand rate")
        _check_tiling(self.windows)
        if self.weekend_windows is not None:
            _check_tiling(self.weekend_windows)

    def rate_at(self, when: datetime) -> float:
        windows = self.windows
        if self.weekend_windows is not None and when.weekday() >= 5:
            windows = self.weekend_windows
        hour = when.hour + when.minute / 60.0 + when.second / 3600.0
        for w in windows:
            if w.start_hour <= hour < w.end_hour:
                return w.rate
        raise TariffError(f"no TOU window covers hour {hour}")  # unreachable after tiling check

    def energy_rate(self, grid: TimeGrid, tau: int) -> float:
        return self.rate_at(grid.time_at(tau))

    def rate_profile(self, grid: TimeGrid) -> np.ndarray:
        """Vector of $/kWh rates for every step of the cycle."""
        return np.array([self.rate_at(grid.time_at(t)) for t in range(grid.horizon_len)])


def default_tariff(demand_rate: float = 20.0) -> TariffSchedule:
    windows = (
        TouWindow("off_peak_night", 0.0, 9.0, 0.194),
        TouWindow("super_off_peak", 9.0, 14.0, 0.166),
        TouWindow("off_peak_afternoon", 14.0, 16.0, 0.194),
        TouWindow("peak", 16.0, 21.0, 0.385),
        TouWindow("off_peak_evening", 21.0, 24.0, 0.194),
    )
    return TariffSchedule(windows=windows, demand_rate=demand_rate)


@dataclass(frozen=True)
class CycleReport:
    """Frozen end-of-cycle snapshot, one row of the cost comparison table."""

    label: str
    energy_cost: float
    demand_cost: float
    revenue: float
    peak_kw: float

    @property
    def total_cost(self) -> float:
        return self.energy_cost + self.demand_cost

    @property
    def profit(self) -> float:
        return self.revenue - self.total_cost


@dataclass
class CycleLedger:
    """Running cost/revenue totals for one billing cycle.

    Sessions must be registered with their locked price before any load is
    accrued for them; accruing an unknown id raises ``LedgerError``.
    """

    grid: TimeGrid
    tariff: TariffSchedule
    label: str = ""
    energy_cost: float = 0.0
    revenue: float = 0.0
    peak: float = 0.0
    _prices: dict[str, float] = field(default_factory=dict)

    @property
    def demand_cost(self) -> float:
        return self.tariff.demand_rate * self.peak

    @property
    def profit(self) -> float:
        return self.revenue - self.energy_cost - self.demand_cost

    def register_session(self, session_id: str, locked_price: float) -> None:
        self._prices[session_id] = locked_price

    def accrue_step(self, loads: dict[str, float], tau: int) -> "CycleLedger":
        """Fold one step of per-session loads (kW) into the totals."""
        rate = self.tariff.energy_rate(self.grid, tau)
        dt = self.grid.step_hours
        total = 0.0
        for sid, kw in loads.items():
            if sid not in self._prices:
                raise LedgerError(f"unregistered session {sid!r}")
            total += kw
            self.energy_cost += rate * kw * dt
            self.revenue += self._prices[sid] * kw * dt
        self.peak = step_peak(self.peak, total)
        return self

    def close_cycle(self) -> CycleReport:
        """Emit the frozen report and reset for the next cycle."""
        report = CycleReport(
            label=self.label,
            energy_cost=self.energy_cost,
            demand_cost=self.demand_cost,
            revenue=self.revenue,
            peak_kw=self.peak,
        )
        self.energy_cost = 0.0
        self.revenue = 0.0
        self.peak = 0.0
        self._prices.clear()
        return report
