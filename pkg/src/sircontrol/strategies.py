"""Analytic social-distancing schedules and their evaluation.

Three constructions are provided besides the no-intervention baseline:

* a single constant-R window whose start time simultaneously satisfies the
  terminal condition (susceptibles steered to the herd-immunity threshold)
  and the peak condition (I capped at i_max) -- ``goldilocks``;
* wait until I hits i_max, hold it there with the feedback law R = 1/S,
  then switch to the constant R that lands S on the threshold -- ``wms``;
* the open-loop baseline -- ``open_loop``.

Every synthesizer returns a :class:`StrategyReport` whose metrics come from
an actual simulation of the produced schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .analysis import herd_immunity, peak_prevalence, s_infinity
from .core import (
    FEEDBACK,
    ControlSchedule,
    ModelParams,
    NotReachedError,
    Segment,
    Trajectory,
    find_time,
    i_rises_to,
    i_peak,
    simulate,
    state_at,
)

__all__ = [
    "EpidemiologicalObjective",
    "StrategyReport",
    "InfeasibleError",
    "NoGoldilocksError",
    "RHatResult",
    "sdi",
    "r_star_single",
    "r_hat_single",
    "goldilocks",
    "wms",
    "open_loop",
    "evaluate_schedule",
]

# Feasibility bands for reports: the terminal susceptible level must land
# within 0.01 of the target and the simulated peak within 1e-3 of the cap.
S_INF_TOL = 0.01
IPP_TOL = 1e-3

_TAU_TOL = 1e-4  # bisection tolerance for synthesized switching times, days


class InfeasibleError(RuntimeError):
    """The requested strategy cannot be synthesized for these inputs."""


class NoGoldilocksError(RuntimeError):
    """The two single-interval design curves never intersect."""

    def __init__(self, message: str, peak_constraint_inactive: bool = False):
        super().__init__(message)
        self.peak_constraint_inactive = peak_constraint_inactive


@dataclass(frozen=True)
class EpidemiologicalObjective:
    """Targets: steer S to s_star_target while keeping I <= i_max."""

    i_max: float
    s_star_target: float

    def __post_init__(self):
        if not (0.0 < self.i_max <= 1.0):
            raise ValueError(f"i_max={self.i_max} outside (0, 1]")
        if not (0.0 < self.s_star_target < 1.0):
            raise ValueError(f"s_star_target={self.s_star_target} outside (0, 1)")


@dataclass(frozen=True)
class StrategyReport:
    """Outcome of one synthesized schedule.

    sdi is the cumulative distancing severity, integral of (r_bar - R(t)) dt
    in R * days; efs and ipp are fractions of the population.
    """

    schedule: ControlSchedule
    efs: float
    ipp: float
    sdi: float
    timings: dict[str, float] = field(default_factory=dict)
    feasible: bool = False


class RHatResult(NamedTuple):
    """Largest admissible R meeting the peak cap, plus a slackness flag."""

    value: float
    unconstrained: bool  # True when even the upper bound keeps the peak under cap


def sdi(
    schedule: ControlSchedule,
    params: ModelParams,
    horizon: float | None = None,
    dt: float = 0.01,
    _trajectory: Trajectory | None = None,
) -> float:
    """Distancing severity: integral of (r_bar - R(t)) dt over the schedule.

    Constant segments contribute in closed form; feedback segments are
    integrated by the trapezoid rule on the simulation grid (a trajectory is
    simulated on demand if one is not supplied).
    """
    end = schedule.end_time()
    if horizon is None:
        horizon = end
    if horizon < end - 1e-9:
        raise ValueError(f"horizon {horizon} shorter than schedule end {end}")
    needs_traj = any(seg.law == FEEDBACK for seg in schedule.segments)
    traj = _trajectory
    if needs_traj and traj is None:
        traj = simulate(params, schedule, t_end=max(horizon, end), dt=dt)

    total = 0.0
    for seg in schedule.segments:
        if seg.law == FEEDBACK:
            lo = np.searchsorted(traj.t, seg.t_start - 1e-12, side="left")
            hi = np.searchsorted(traj.t, seg.t_end + 1e-12, side="right")
            s_seg = traj.s[lo:hi]
            t_seg = traj.t[lo:hi]
            r_seg = np.minimum(params.r_bar, np.maximum(params.r_min, 1.0 / s_seg))
            total += float(np.trapezoid(params.r_bar - r_seg, t_seg))
        else:
            total += (params.r_bar - float(seg.law)) * (seg.t_end - seg.t_start)
    return total


def r_star_single(s_star: float, s_s: float, i_s: float) -> float:
    """Constant R whose run from (s_s, i_s) has susceptible limit s_star.

    Closed form (ln s_s - ln s_star) / (s_s + i_s - s_star); requires the
    start to lie strictly above the target level.
    """
    if s_s <= s_star:
        raise ValueError(
            f"start S={s_s} must exceed the target {s_star}: "
            "once S is at or below it, no constant R can hold the limit there"
        )
    if i_s < 0.0:
        raise ValueError(f"i_s={i_s} must be nonnegative")
    return (math.log(s_s) - math.log(s_star)) / (s_s + i_s - s_star)


def r_hat_single(
    i_max: float,
    s_s: float,
    i_s: float,
    r_bounds: tuple[float, float],
    tol: float = 1e-9,
) -> RHatResult:
    """Largest R in r_bounds whose run from (s_s, i_s) peaks at or below i_max.

    The peak is nondecreasing in R, so bisection maintains the invariant
    peak(lo) <= i_max < peak(hi) and converges to the boundary within tol.
    """
    lo, hi = r_bounds
    if lo > hi:
        raise ValueError(f"empty bounds {r_bounds}")
    if peak_prevalence(hi, s_s, i_s) <= i_max:
        return RHatResult(hi, True)
    if peak_prevalence(lo, s_s, i_s) > i_max:
        raise InfeasibleError(
            f"even R={lo} gives a peak above {i_max} from (S, I)=({s_s}, {i_s})"
        )
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if peak_prevalence(mid, s_s, i_s) <= i_max:
            lo = mid
        else:
            hi = mid
    return RHatResult(0.5 * (lo + hi), False)


def evaluate_schedule(
    params: ModelParams,
    schedule: ControlSchedule,
    objective: EpidemiologicalObjective,
    horizon: float = 300.0,
    dt: float = 0.01,
    timings: dict[str, float] | None = None,
) -> StrategyReport:
    """Simulate a schedule and assemble its report.

    The final size uses the closed form at the end-of-horizon state (exact,
    since the dynamics are open-loop past the schedule end), and the peak
    accounts for any residual open-loop peak beyond the horizon the same way.
    """
    if horizon < schedule.end_time() - 1e-9:
        raise ValueError("horizon must cover the whole schedule")
    traj = simulate(params, schedule, t_end=horizon, dt=dt)
    s_end = float(traj.s[-1])
    i_end = float(traj.i[-1])
    fs = s_infinity(params.r_bar, s_end, i_end)
    tail_peak = peak_prevalence(params.r_bar, s_end, i_end)
    ipp = max(float(np.max(traj.i)), tail_peak)
    value = sdi(schedule, params, horizon=horizon, dt=dt, _trajectory=traj)
    feasible = (
        abs(fs.s_inf - objective.s_star_target) <= S_INF_TOL
        and ipp <= objective.i_max + IPP_TOL
    )
    return StrategyReport(
        schedule=schedule,
        efs=fs.efs,
        ipp=ipp,
        sdi=value,
        timings=dict(timings or {}),
        feasible=feasible,
    )


def open_loop(
    params: ModelParams,
    horizon: float = 300.0,
    dt: float = 0.01,
    objective: EpidemiologicalObjective | None = None,
) -> StrategyReport:
    """No-intervention baseline: R = r_bar throughout, zero distancing cost."""
    if horizon <= 0.0:
        raise ValueError(f"horizon={horizon} must be positive")
    if objective is None:
        objective = EpidemiologicalObjective(
            i_max=1.0, s_star_target=herd_immunity(params.r_bar)
        )
    schedule = ControlSchedule.open_loop(params.r_bar)
    timings: dict[str, float] = {}
    traj = simulate(params, schedule, t_end=horizon, dt=dt)
    try:
        timings["t_peak"] = find_time(traj, i_peak())
    except NotReachedError:
        pass
    report = evaluate_schedule(params, schedule, objective, horizon, dt, timings)
    assert report.sdi == 0.0
    return report


def _goldilocks_curves(traj, params, objective, t):
    """(r_star, r_hat) at open-loop time t; None once either is undefined."""
    s, i = state_at(traj, t)
    if s <= objective.s_star_target or i > objective.i_max:
        return None
    r_star = r_star_single(objective.s_star_target, s, i)
    try:
        r_hat = r_hat_single(objective.i_max, s, i, (params.r_min, params.r_bar))
    except InfeasibleError:
        return None
    return r_star, r_hat


def goldilocks(
    params: ModelParams,
    objective: EpidemiologicalObjective,
    *,
    tau_f: float = 270.0,
    horizon: float = 300.0,
    dt: float = 0.01,
) -> StrategyReport:
    """Single-interval schedule at the start time where both design curves meet.

    Scans the open-loop run for a sign change of the difference between the
    terminal-condition R and the peak-condition R, refines the crossing by
    bisection to 1e-4 days, and applies the common value from there to tau_f.
    Raises :class:`NoGoldilocksError` when the curves never cross; the error
    flags the case where the peak constraint was slack everywhere (cap at or
    above the open-loop peak).
    """
    if tau_f > horizon + 1e-9:
        raise ValueError("tau_f must not exceed the simulated horizon")
    traj = simulate(params, ControlSchedule.open_loop(params.r_bar), t_end=horizon, dt=dt)

    scan_step = 0.25
    prev_t = None
    prev_g = None
    all_unconstrained = True
    bracket = None
    t = 0.0
    while t <= horizon:
        curves = _goldilocks_curves(traj, params, objective, t)
        if curves is None:
            break
        r_star, r_hat = curves
        if not r_hat.unconstrained:
            all_unconstrained = False
        g = r_star - r_hat.value
        if prev_g is not None and (g > 0.0) != (prev_g > 0.0):
            bracket = (prev_t, t)
            break
        prev_t, prev_g = t, g
        t += scan_step

    if bracket is None:
        raise NoGoldilocksError(
            "design curves do not intersect on the open-loop horizon"
            + ("; peak constraint inactive" if all_unconstrained else ""),
            peak_constraint_inactive=all_unconstrained,
        )

    lo, hi = bracket
    g_lo = prev_g
    while hi - lo > _TAU_TOL:
        mid = 0.5 * (lo + hi)
        r_star, r_hat = _goldilocks_curves(traj, params, objective, mid)
        g_mid = r_star - r_hat.value
        if (g_mid > 0.0) == (g_lo > 0.0):
            lo = mid
        else:
            hi = mid
    tau_s = 0.5 * (lo + hi)
    r_star, r_hat = _goldilocks_curves(traj, params, objective, tau_s)
    r_g = 0.5 * (r_star + r_hat.value)
    if not (params.r_min - 1e-9 <= r_g <= params.r_bar + 1e-9):
        raise NoGoldilocksError(
            f"intersection value R={r_g:.4f} falls outside the admissible range"
        )

    schedule = ControlSchedule.single_interval(tau_s, tau_f, r_g, params.r_bar)
    return evaluate_schedule(
        params,
        schedule,
        objective,
        horizon,
        dt,
        timings={"tau_s": tau_s, "tau_f": tau_f},
    )


def wms(
    params: ModelParams,
    objective: EpidemiologicalObjective,
    *,
    tau_f: float = 270.0,
    horizon: float = 300.0,
    dt: float = 0.01,
) -> StrategyReport:
    """Wait-maintain-suspend schedule.

    Open loop until I first reaches i_max; then R = 1/S holds I constant
    while S falls linearly at rate gamma * i_max; the hold ends at the time
    where the terminal-condition R equals the feedback value 1/S, and that
    common constant is applied until tau_f.
    """
    if tau_f > horizon + 1e-9:
        raise ValueError("tau_f must not exceed the simulated horizon")
    s_star = objective.s_star_target
    i_max = objective.i_max
    open_traj = simulate(
        params,
        ControlSchedule.open_loop(params.r_bar),
        t_end=horizon,
        dt=dt,
        watch_i_levels=(i_max,),
    )
    try:
        tau_s = find_time(open_traj, i_rises_to(i_max))
    except NotReachedError as exc:
        raise InfeasibleError(
            f"open-loop I never reaches i_max={i_max}; no intervention needed"
        ) from exc

    s_s, i_s = state_at(open_traj, tau_s)
    slope = params.gamma * i_s  # dS/dt during the hold is exactly -gamma * I

    def hold_s(tau_1: float) -> float:
        return s_s - slope * (tau_1 - tau_s)

    def gap(tau_1: float) -> float:
        s1 = hold_s(tau_1)
        return r_star_single(s_star, s1, i_s) - 1.0 / s1

    tau_hi = tau_s + (s_s - s_star * (1.0 + 1e-9)) / slope
    g_lo = gap(tau_s + 1e-9)
    g_hi = gap(tau_hi)
    if not (g_lo > 0.0 > g_hi):
        raise InfeasibleError(
            "infeasible bracket: the terminal-condition R and 1/S curves do "
            "not cross while S stays above the target"
        )
    lo, hi = tau_s + 1e-9, tau_hi
    while hi - lo > _TAU_TOL:
        mid = 0.5 * (lo + hi)
        if gap(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    tau_1 = 0.5 * (lo + hi)
    r_si = r_star_single(s_star, hold_s(tau_1), i_s)
    if not (params.r_min - 1e-9 <= r_si <= params.r_bar + 1e-9):
        raise InfeasibleError(f"suspend-phase R={r_si:.4f} outside the admissible range")
    if tau_1 >= tau_f:
        raise InfeasibleError(f"hold phase extends to {tau_1:.2f} d, beyond tau_f={tau_f}")

    schedule = ControlSchedule(
        (
            Segment(tau_s, tau_1, FEEDBACK),
            Segment(tau_1, tau_f, min(params.r_bar, max(params.r_min, r_si))),
        ),
        params.r_bar,
    )
    return evaluate_schedule(
        params,
        schedule,
        objective,
        horizon,
        dt,
        timings={"tau_s": tau_s, "tau_1": tau_1, "tau_f": tau_f},
    )
