"""Arrival-triggered joint price and power optimization.

At each arrival the station offers a two-price menu (scheduled / regular)
and commits power plans for every scheduled session. For a fixed menu the
expected operating cost over the arriving user's choice is linear in the
power variables, so each candidate menu costs one LP solve; the menu itself
is chosen by grid search because the choice probabilities make the outer
problem non-convex.

Four demand-charge treatments share one constraint builder:

* ``baseline``  - epigraph of the horizon peak, charged above the running peak;
* ``threshold`` - baseline plus a hard station-load cap, loosened until feasible;
* ``softplus``  - smooth penalty on approaching the running peak, linearized
                  by tangent-line under-approximation;
* ``mpc``       - epigraph of a forecast of station load, affinely corrected
                  for the plans being re-decided.

Existing scheduled sessions get one shared plan across the choice scenarios
(the station must commit before the user answers); the arriving user's
scheduled profile exists only in the scheduled scenario, and in the regular
scenario they draw full power until their battery fills.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .choice import ChoiceCoefficients, ChoiceDistribution, PriceMenu, choice_probabilities
from .domain import ChargingSession, StationParams, StationState
from .lp import INFEASIBLE, OPTIMAL, LinearProgram, SimplexSolver
from .forecasting import ForecastVector, update_forecast

BASELINE = "baseline"
THRESHOLD = "threshold"
SOFTPLUS = "softplus"
MPC = "mpc"
MODES = (BASELINE, THRESHOLD, SOFTPLUS, MPC)


class ControllerError(RuntimeError):
    pass


class CapInfeasible(ControllerError):
    """The hard load cap admits no feasible plan; loosen and retry."""


@dataclass(frozen=True)
class PriceGrid:
    """Candidate menu prices in $/kWh. By default the scheduled price may not
    exceed the regular price (the discount that motivates controllability)."""

    values: tuple[float, ...]
    scheduled_at_most_regular: bool = True

    @staticmethod
    def from_range(lo: float = 0.10, hi: float = 1.00, step: float = 0.05,
                   scheduled_at_most_regular: bool = True) -> "PriceGrid":
        n = int(round((hi - lo) / step)) + 1
        vals = tuple(round(lo + i * step, 10) for i in range(n))
        return PriceGrid(vals, scheduled_at_most_regular)

    def menus(self) -> list[PriceMenu]:
        """All candidate menus, sorted by (regular, scheduled): scanning in
        this order makes 'first strictly better wins' the documented
        tie-break of lowest regular then lowest scheduled price."""
        out = []
        for z_reg in sorted(self.values):
            for z_sch in sorted(self.values):
                if self.scheduled_at_most_regular and z_sch > z_reg + 1e-12:
                    continue
                out.append(PriceMenu(scheduled=z_sch, regular=z_reg))
        return out


@dataclass(frozen=True)
class ControllerSettings:
    mode: str = BASELINE
    grid: PriceGrid = field(default_factory=PriceGrid.from_range)
    demand_rate: float = 20.0
    cap_increment_kw: float = 1.0
    softplus_segments: int = 16
    softplus_halfwidth_kw: float | None = None  # default 3 * p_max * n_chargers
    softplus_scale: float = 1.0
    forecast_steps: int = 32
    coefficients: ChoiceCoefficients = field(default_factory=ChoiceCoefficients)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ControllerError(f"unknown controller mode {self.mode!r}")
        if self.cap_increment_kw <= 0:
            raise ControllerError("cap increment must be positive")


@dataclass(frozen=True)
class ArrivalRequest:
    """What the arriving user states, snapped to the grid: departure step,
    the energy requirement if they pick scheduled service, and the energy a
    regular session would draw."""

    session_id: str
    t_start: int
    departure: int
    energy_scheduled: float
    energy_regular: float

    def regular_end(self, params: StationParams) -> int:
        if self.energy_regular <= 0:
            return self.t_start
        steps = math.ceil(self.energy_regular / params.step_energy_kwh - 1e-9)
        return min(self.departure, self.t_start + steps)


@dataclass
class ControllerDecision:
    menu: PriceMenu
    probabilities: ChoiceDistribution
    expected_cost: float
    shared_profiles: dict[str, np.ndarray]  # existing scheduled users, from t_start
    candidate_profile: np.ndarray           # arriving user if they pick scheduled
    t_start: int
    lp_peaks: dict[str, float]              # optimal epigraph values per scenario
    power_cap: float | None = None          # threshold mode cap that was used


# -- piecewise-linear softplus --------------------------------------------------


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    out = np.empty_like(np.asarray(x, dtype=float))
    x = np.asarray(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class SoftplusTangents:
    """Tangent lines of softplus; their max under-approximates it, so using
    them as epigraph rows keeps the LP a relaxation with a certified gap."""

    knots: np.ndarray
    slopes: np.ndarray
    intercepts: np.ndarray

    def evaluate(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        vals = self.slopes[None, :] * x[:, None] + self.intercepts[None, :]
        return vals.max(axis=1)

    def max_gap(self, n_grid: int = 8001) -> float:
        xs = np.linspace(self.knots[0], self.knots[-1], n_grid)
        return float((_softplus(xs) - self.evaluate(xs)).max())


def softplus_pwl(x_lo: float, x_hi: float, n_segments: int = 16) -> SoftplusTangents:
    """Tangents at ``n_segments`` knots over [x_lo, x_hi]. The range endpoints
    are always knots (they pin the asymptotes); interior knots sit at logit
    quantiles so they cluster where softplus actually curves, which is what
    keeps the worst-case gap small even over wide kW ranges."""
    if not (np.isfinite(x_lo) and np.isfinite(x_hi) and x_lo < x_hi):
        raise ControllerError(f"degenerate softplus range [{x_lo}, {x_hi}]")
    if n_segments < 2:
        raise ControllerError("need at least two tangent segments")
    if n_segments == 2:
        knots = np.array([x_lo, x_hi])
    else:
        n_mid = n_segments - 2
        q = (np.arange(n_mid) + 0.5) / n_mid
        mid = np.log(q / (1.0 - q))
        span = x_hi - x_lo
        mid = np.clip(mid, x_lo + 1e-6 * span, x_hi - 1e-6 * span)
        knots = np.concatenate([[x_lo], mid, [x_hi]])
    knots = np.unique(knots)
    slopes = _sigmoid(knots)
    intercepts = _softplus(knots) - slopes * knots
    return SoftplusTangents(knots=knots, slopes=slopes, intercepts=intercepts)


# -- expected-cost LP ------------------------------------------------------------


@dataclass
class ScenarioLp:
    """The assembled LP for one arrival, menu-independent parts frozen.

    The constraint matrix is shared by every candidate menu; only objective
    coefficients move, so one warm-started solver serves the whole grid.
    """

    solver: SimplexSolver
    n_vars: int
    var_slices: dict[str, slice]
    cand_slice: slice
    d_sch: int
    d_reg: int
    s_sch: int | None
    s_reg: int | None
    t_start: int
    cand_rates: np.ndarray          # c_tau over the candidate's scheduled window
    shared_rate_margins: dict[str, np.ndarray]  # (c_tau - locked) per existing user
    cand_reg_energy_kwh_rate: float  # sums for the regular-scenario constant
    cand_reg_cost_const: float
    existing_reg_margin: float
    demand_rate: float
    prior_peak: float
    delta_t: float
    mode: str

    def objective_for(self, menu: PriceMenu, probs: ChoiceDistribution) -> tuple[np.ndarray, float]:
        """Objective vector and additive constant for one candidate menu."""
        c = np.zeros(self.n_vars)
        p_sch, p_reg = probs.p_sch, probs.p_reg
        stay = p_sch + p_reg
        c[self.cand_slice] = p_sch * (self.cand_rates - menu.scheduled) * self.delta_t
        for sid, margins in self.shared_rate_margins.items():
            c[self.var_slices[sid]] = stay * margins * self.delta_t
        const = p_reg * (self.cand_reg_cost_const - menu.regular * self.cand_reg_energy_kwh_rate)
        const += stay * self.existing_reg_margin
        if self.mode == SOFTPLUS:
            c[self.s_sch] = p_sch * self.demand_rate
            c[self.s_reg] = p_reg * self.demand_rate
        else:
            c[self.d_sch] = p_sch * self.demand_rate
            c[self.d_reg] = p_reg * self.demand_rate
            const -= stay * self.demand_rate * self.prior_peak
        return c, const


def _scheduled_windows(state: StationState) -> list[tuple[ChargingSession, int]]:
    """Active scheduled sessions with their remaining planning windows."""
    return [(s, s.departure) for s in state.scheduled_sessions()]


def mpc_demand_term(
    forecast: ForecastVector,
    state: StationState,
    cand_reg_profile: np.ndarray,
    forecast_steps: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-step constants of the forecast-updated load for both scenarios
    (the scheduled decision columns are added by the LP builder)."""
    psi = forecast.load_kw
    if psi.size < forecast_steps:
        raise ControllerError(
            f"forecast covers {psi.size} steps, controller needs {forecast_steps}")
    psi = psi[:forecast_steps]
    t0 = state.now
    committed = np.zeros(forecast_steps)
    for sess in state.scheduled_sessions():
        prof = state.schedules.get(sess.id)
        if prof is None:
            continue
        for i in range(forecast_steps):
            committed[i] += prof.value_at(t0 + i)
    const_reg = update_forecast(psi, committed, cand_reg_profile, "regular")
    const_sch = update_forecast(psi, committed, cand_reg_profile, "scheduled")
    return const_sch, const_reg


def build_expected_cost_lp(
    state: StationState,
    request: ArrivalRequest,
    params: StationParams,
    settings: ControllerSettings,
    rates: np.ndarray,
    forecast: ForecastVector | None = None,
    power_cap: float | None = None,
) -> ScenarioLp:
    """Assemble the menu-independent LP for one arrival.

    ``rates`` is the $/kWh vector for the whole billing cycle. ``power_cap``
    adds the hard station-load cap of threshold mode. ``forecast`` supplies
    the load prediction that mpc mode requires.
    """
    t0 = request.t_start
    if state.now != t0:
        raise ControllerError("state clock and request start disagree")
    sched = _scheduled_windows(state)
    reg_sessions = state.regular_sessions()
    cand_reg_end = request.regular_end(params)

    # Variable layout: existing scheduled users' profiles, then the arriving
    # user's scheduled-scenario profile, then per-scenario peak epigraphs
    # (plus softplus penalty epigraphs when that mode is on).
    var_slices: dict[str, slice] = {}
    cursor = 0
    for sess, end in sched:
        width = end - t0
        var_slices[sess.id] = slice(cursor, cursor + width)
        cursor += width
    cand_width = request.departure - t0
    cand_slice = slice(cursor, cursor + cand_width)
    cursor += cand_width
    d_sch, d_reg = cursor, cursor + 1
    cursor += 2
    s_sch = s_reg = None
    if settings.mode == SOFTPLUS:
        s_sch, s_reg = cursor, cursor + 1
        cursor += 2
    n_vars = cursor

    lower = np.zeros(n_vars)
    upper = np.full(n_vars, params.max_power_kw)
    for j in (d_sch, d_reg):
        upper[j] = np.inf
        lower[j] = 0.0 if settings.mode == SOFTPLUS else max(0.0, state.running_peak)
    if settings.mode == SOFTPLUS:
        upper[s_sch] = upper[s_reg] = np.inf

    lp = LinearProgram(np.zeros(n_vars), lower=lower, upper=upper)

    # Energy balance: each scheduled profile delivers exactly the remaining
    # requirement by departure (capped upstream to what the window can hold).
    step_kwh = params.step_hours * params.efficiency
    for sess, end in sched:
        sl = var_slices[sess.id]
        lp.add_row({j: step_kwh for j in range(sl.start, sl.stop)}, "=", sess.remaining)
    lp.add_row({j: step_kwh for j in range(cand_slice.start, cand_slice.stop)},
               "=", request.energy_scheduled)

    def reg_const_at(tau: int) -> float:
        load = 0.0
        for sess in reg_sessions:
            if tau < min(sess.departure, sess.full_power_end(params)):
                load += params.max_power_kw
        return load

    def scenario_cols(tau: int, scenario: str) -> dict[int, float]:
        cols: dict[int, float] = {}
        for sess, end in sched:
            if tau < end:
                cols[var_slices[sess.id].start + (tau - t0)] = 1.0
        if scenario == "scheduled" and tau < request.departure:
            cols[cand_slice.start + (tau - t0)] = 1.0
        return cols

    horizon_sch = max([end for _, end in sched] + [request.departure]
                      + [min(s.departure, s.full_power_end(params)) for s in reg_sessions]
                      + [t0])
    horizon_reg = max([end for _, end in sched] + [cand_reg_end]
                      + [min(s.departure, s.full_power_end(params)) for s in reg_sessions]
                      + [t0])

    if settings.mode == MPC:
        if forecast is None:
            raise ControllerError("mpc mode requires a forecast")
        cand_reg_profile = np.zeros(settings.forecast_steps)
        for i in range(settings.forecast_steps):
            if t0 + i < cand_reg_end:
                cand_reg_profile[i] = params.max_power_kw
        const_sch, const_reg = mpc_demand_term(
            forecast, state, cand_reg_profile, settings.forecast_steps)
        for i in range(settings.forecast_steps):
            tau = t0 + i
            cols = scenario_cols(tau, "scheduled")
            cols[d_sch] = -1.0
            lp.add_row(cols, "<=", -const_sch[i])
            cols = scenario_cols(tau, "regular")
            cols[d_reg] = -1.0
            lp.add_row(cols, "<=", -const_reg[i])
    else:
        for tau in range(t0, horizon_sch):
            cols = scenario_cols(tau, "scheduled")
            cols[d_sch] = -1.0
            lp.add_row(cols, "<=", -reg_const_at(tau))
        for tau in range(t0, horizon_reg):
            cols = scenario_cols(tau, "regular")
            cols[d_reg] = -1.0
            extra = params.max_power_kw if tau < cand_reg_end else 0.0
            lp.add_row(cols, "<=", -(reg_const_at(tau) + extra))

    if settings.mode == THRESHOLD:
        if power_cap is None:
            raise ControllerError("threshold mode requires a power cap")
        for tau in range(t0, horizon_sch):
            lp.add_row(scenario_cols(tau, "scheduled"), "<=", power_cap - reg_const_at(tau))
        for tau in range(t0, horizon_reg):
            extra = params.max_power_kw if tau < cand_reg_end else 0.0
            lp.add_row(scenario_cols(tau, "regular"), "<=",
                       power_cap - reg_const_at(tau) - extra)

    if settings.mode == SOFTPLUS:
        half = settings.softplus_halfwidth_kw
        if half is None:
            half = 3.0 * params.max_power_kw * state.n_chargers
        tangents = softplus_pwl(-half, half, settings.softplus_segments)
        scale = settings.softplus_scale
        for slope, intercept in zip(tangents.slopes, tangents.intercepts):
            for d_var, s_var in ((d_sch, s_sch), (d_reg, s_reg)):
                # s >= slope * scale * (d - prior_peak) + intercept
                lp.add_row({d_var: slope * scale, s_var: -1.0}, "<=",
                           slope * scale * state.running_peak - intercept)

    cand_rates = rates[t0:request.departure].astype(float)
    shared_margins = {
        sess.id: rates[t0:end].astype(float) - sess.locked_price for sess, end in sched
    }
    reg_steps = np.arange(t0, cand_reg_end)
    cand_reg_cost_const = float(rates[reg_steps].sum()) * params.max_power_kw * params.step_hours if reg_steps.size else 0.0
    cand_reg_energy = params.max_power_kw * params.step_hours * reg_steps.size
    existing_reg_margin = 0.0
    for sess in reg_sessions:
        end = min(sess.departure, sess.full_power_end(params))
        if end > t0:
            existing_reg_margin += float(
                (rates[t0:end] - sess.locked_price).sum()
            ) * params.max_power_kw * params.step_hours

    return ScenarioLp(
        solver=SimplexSolver(lp),
        n_vars=n_vars,
        var_slices=var_slices,
        cand_slice=cand_slice,
        d_sch=d_sch,
        d_reg=d_reg,
        s_sch=s_sch,
        s_reg=s_reg,
        t_start=t0,
        cand_rates=cand_rates,
        shared_rate_margins=shared_margins,
        cand_reg_energy_kwh_rate=cand_reg_energy,
        cand_reg_cost_const=cand_reg_cost_const,
        existing_reg_margin=existing_reg_margin,
        demand_rate=settings.demand_rate,
        prior_peak=state.running_peak,
        delta_t=params.step_hours,
        mode=settings.mode,
    )


def optimize_menu(
    state: StationState,
    request: ArrivalRequest,
    params: StationParams,
    settings: ControllerSettings,
    rates: np.ndarray,
    forecast: ForecastVector | None = None,
    power_cap: float | None = None,
) -> ControllerDecision:
    """Grid search over candidate menus; one warm-started LP per candidate.

    Ties in expected cost break toward the lowest regular price, then the
    lowest scheduled price (the grid is scanned in that order and only a
    strict improvement displaces the incumbent).
    """
    menus = settings.grid.menus()
    if not menus:
        raise ControllerError("empty price grid")
    slp = build_expected_cost_lp(state, request, params, settings, rates,
                                 forecast=forecast, power_cap=power_cap)
    best = None
    warm = None
    for menu in menus:
        probs = choice_probabilities(menu, settings.coefficients, params.max_power_kw)
        c, const = slp.objective_for(menu, probs)
        sol = slp.solver.solve(objective=c, warm=warm)
        if sol.status == INFEASIBLE:
            # Constraints are menu-independent, so one infeasible solve
            # condemns the whole grid.
            raise CapInfeasible(f"no feasible plan (cap={power_cap})")
        if sol.status != OPTIMAL:
            raise ControllerError(f"solver returned {sol.status}")
        warm = sol.basis
        cost = sol.objective_value + const
        if best is None or cost < best[0]:
            best = (cost, menu, probs, sol.values, sol.basis, c, const)
    cost, menu, probs, values, basis, c_best, const_best = best

    # The optimal schedule is often a whole face (equal-cost placements under
    # the running peak); re-solve with a sub-tolerance preference for earlier
    # delivery so the committed plan is canonical, then restate the cost in
    # the untilted objective.
    tilt = np.zeros(slp.n_vars)
    for sl in [*slp.var_slices.values(), slp.cand_slice]:
        if sl.stop > sl.start:
            tilt[sl] = 1e-7 * (np.arange(sl.stop - sl.start) + 1.0)
    if tilt.any():
        sol2 = slp.solver.solve(objective=c_best + tilt, warm=basis)
        if sol2.status == OPTIMAL:
            values = sol2.values
            cost = float(c_best @ values) + const_best
    shared = {
        sid: values[sl].copy() for sid, sl in slp.var_slices.items()
    }
    return ControllerDecision(
        menu=menu,
        probabilities=probs,
        expected_cost=float(cost),
        shared_profiles=shared,
        candidate_profile=values[slp.cand_slice].copy(),
        t_start=request.t_start,
        lp_peaks={"scheduled": float(values[slp.d_sch]), "regular": float(values[slp.d_reg])},
        power_cap=power_cap,
    )


def threshold_loop(
    state: StationState,
    request: ArrivalRequest,
    params: StationParams,
    settings: ControllerSettings,
    rates: np.ndarray,
    initial_cap: float | None = None,
) -> ControllerDecision:
    """Hard-cap mode: start the cap at the running peak and raise it by the
    configured increment until a feasible plan exists. A cap of one full
    charger above everyone-at-full-power is always feasible, which bounds
    the loop."""
    cap = state.running_peak if initial_cap is None else initial_cap
    always_feasible = (len(state.active) + 1) * params.max_power_kw + params.max_power_kw
    step = settings.cap_increment_kw
    max_rounds = max(0, int(math.ceil((always_feasible - cap) / step))) + 2
    for _ in range(max_rounds):
        try:
            return optimize_menu(state, request, params, settings, rates, power_cap=cap)
        except CapInfeasible:
            cap += step
    raise ControllerError("threshold loop failed to find a feasible cap")


def decide(
    state: StationState,
    request: ArrivalRequest,
    params: StationParams,
    settings: ControllerSettings,
    rates: np.ndarray,
    forecast: ForecastVector | None = None,
) -> ControllerDecision:
    """Dispatch one arrival to the configured demand-charge treatment."""
    if settings.mode == THRESHOLD:
        return threshold_loop(state, request, params, settings, rates)
    if settings.mode == MPC:
        return optimize_menu(state, request, params, settings, rates, forecast=forecast)
    return optimize_menu(state, request, params, settings, rates)
