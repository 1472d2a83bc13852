import numpy as np
import pytest

from chargeopt.choice import PriceMenu
from chargeopt.controllers import ArrivalRequest, ControllerSettings, PriceGrid
from chargeopt.domain import (
    ChargingSession,
    Choice,
    PowerProfile,
    StationParams,
    StationState,
    month_grid,
)
from chargeopt.tariff import default_tariff


@pytest.fixture
def params():
    return StationParams()


@pytest.fixture
def grid():
    return month_grid(2023, 6)


@pytest.fixture
def tariff():
    return default_tariff(20.0)


@pytest.fixture
def rates(grid, tariff):
    return tariff.rate_profile(grid)


def tiny_grid(step=0.30):
    return PriceGrid.from_range(0.10, 1.00, step)


def make_request(session_id="new", t_start=32, departure=64, e_sch=8.0, e_reg=12.0):
    return ArrivalRequest(session_id, t_start, departure, e_sch, e_reg)


def make_state(now=32, running_peak=0.0, sched=(), reg=(), n_chargers=8):
    """sched/reg: lists of (id, departure, energy_req, delivered, locked, profile_values)."""
    state = StationState(now=now, running_peak=running_peak, n_chargers=n_chargers)
    for sid, dep, e_req, delivered, locked, prof in sched:
        state.active[sid] = ChargingSession(sid, 0, dep, e_req, Choice.SCHEDULED, locked,
                                            delivered=delivered)
        state.schedules[sid] = PowerProfile(sid, now, list(prof))
    for sid, dep, e_req, delivered, locked in reg:
        state.active[sid] = ChargingSession(sid, 0, dep, e_req, Choice.REGULAR, locked,
                                            delivered=delivered)
    return state


def random_controller_instance(rng: np.random.Generator, params: StationParams):
    """A small random arrival scenario for the controller correctness suite."""
    t0 = int(rng.integers(0, 2500))
    state = StationState(now=t0, running_peak=float(rng.uniform(0, 25)),
                         n_chargers=params.n_chargers)
    n_sched = int(rng.integers(0, 3))
    n_reg = int(rng.integers(0, 3))
    for i in range(n_sched):
        window = int(rng.integers(2, 14))
        dep = t0 + window
        cap = window * params.step_energy_kwh
        e_rem = float(rng.uniform(0.1, 0.95) * cap)
        sid = f"s{i}"
        state.active[sid] = ChargingSession(sid, max(0, t0 - 4), dep, e_rem,
                                            Choice.SCHEDULED, float(rng.uniform(0.1, 0.9)))
        state.schedules[sid] = PowerProfile(
            sid, t0, list(np.full(window, e_rem / (window * params.step_energy_kwh)
                                  * params.max_power_kw)))
    for j in range(n_reg):
        window = int(rng.integers(2, 14))
        e_req = float(rng.uniform(0.2, 0.9) * window * params.step_energy_kwh)
        sid = f"r{j}"
        state.active[sid] = ChargingSession(sid, max(0, t0 - 2), t0 + window, e_req,
                                            Choice.REGULAR, float(rng.uniform(0.1, 0.9)))
    window_n = int(rng.integers(2, 16))
    cap_n = window_n * params.step_energy_kwh
    request = ArrivalRequest(
        "new", t0, t0 + window_n,
        energy_scheduled=float(rng.uniform(0.05, 0.9) * cap_n),
        energy_regular=float(rng.uniform(0.05, 0.95) * cap_n),
    )
    return state, request
