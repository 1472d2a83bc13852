"""Two-step discrete choice model for an arriving user facing a price menu.

The user picks REGULAR, SCHEDULED, or LEAVE. Utilities are linear in the
hourly-equivalent prices (menu $/kWh scaled by the charger's maximum power).
The leave probability comes from a three-way logit; the regular/scheduled
split is a binary logit over the remaining mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class PriceMenu:
    """Per-kWh prices offered to an arriving user."""

    scheduled: float
    regular: float

    def __post_init__(self):
        for name, v in (("scheduled", self.scheduled), ("regular", self.regular)):
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} price must be finite and nonnegative, got {v}")


@dataclass(frozen=True)
class ChoiceCoefficients:
    """Utility coefficients, overridable in config for sensitivity studies.

    ``price_gap`` multiplies half the (regular - scheduled) hourly price gap,
    ``avg_price`` multiplies the mean hourly price in the leave utility.
    """

    price_gap: float = 0.0184
    regular_const: float = 0.341
    leave_const: float = -1.0
    avg_price: float = 0.005


@dataclass(frozen=True)
class ChoiceDistribution:
    p_reg: float
    p_sch: float
    p_leave: float

    def __post_init__(self):
        for p in (self.p_reg, self.p_sch, self.p_leave):
            if not -1e-12 <= p <= 1 + 1e-12:
                raise ValueError(f"probability {p} outside [0, 1]")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.p_reg, self.p_sch, self.p_leave)


def hourly_prices(menu: PriceMenu, max_power_kw: float) -> tuple[float, float]:
    """Convert the $/kWh menu to $/hr at full charging power.

    Returns (regular, scheduled)."""
    if max_power_kw <= 0:
        raise ValueError("max_power_kw must be positive")
    return menu.regular * max_power_kw, menu.scheduled * max_power_kw


def utilities(
    menu: PriceMenu, coeffs: ChoiceCoefficients, max_power_kw: float
) -> tuple[float, float, float]:
    """(U_regular, U_scheduled, U_leave) for the given menu."""
    hr_reg, hr_sch = hourly_prices(menu, max_power_kw)
    half_gap = (hr_reg - hr_sch) / 2.0
    u_reg = coeffs.regular_const - coeffs.price_gap * half_gap
    u_sch = coeffs.price_gap * half_gap
    u_leave = coeffs.leave_const + coeffs.avg_price * (hr_reg + hr_sch) / 2.0
    return u_reg, u_sch, u_leave


def choice_probabilities(
    menu: PriceMenu, coeffs: ChoiceCoefficients, max_power_kw: float
) -> ChoiceDistribution:
    """Two-step choice distribution: three-way logit for leaving, then a
    binary logit over regular/scheduled scaled by the stay probability.

    Utilities are shifted by their maximum before exponentiation so that
    arbitrarily large menus cannot overflow."""
    u_reg, u_sch, u_leave = utilities(menu, coeffs, max_power_kw)
    shift = max(u_reg, u_sch, u_leave)
    e_reg = math.exp(u_reg - shift)
    e_sch = math.exp(u_sch - shift)
    e_leave = math.exp(u_leave - shift)
    p_leave = e_leave / (e_reg + e_sch + e_leave)
    stay = 1.0 - p_leave
    # The regular/scheduled split uses the utility difference directly so it
    # stays defined even when both exponentials underflow against leaving.
    gap = u_reg - u_sch
    if gap >= 0:
        frac_sch = math.exp(-gap) / (1.0 + math.exp(-gap))
    else:
        frac_sch = 1.0 / (1.0 + math.exp(gap))
    p_sch = stay * frac_sch
    p_reg = stay * (1.0 - frac_sch)
    return ChoiceDistribution(p_reg=p_reg, p_sch=p_sch, p_leave=p_leave)
