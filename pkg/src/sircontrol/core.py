"""Controlled SIR dynamics: state, parameters, schedules and RK4 simulation.

The model tracks the susceptible fraction S and infectious fraction I of a
population.  Time is measured in days; the dimensionless time tau = gamma * t
is carried along so results can be read in either unit.  The reproduction
number R(t) is the control input: it equals ``r_bar`` outside the intervention
window and is set by a :class:`ControlSchedule` inside it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "EpiState",
    "ModelParams",
    "Segment",
    "ControlSchedule",
    "Event",
    "Trajectory",
    "Condition",
    "FEEDBACK",
    "NotReachedError",
    "derivative",
    "simulate",
    "find_time",
    "state_at",
    "i_rises_to",
    "s_falls_to",
    "i_peak",
]

#: Segment law sentinel: apply R(t) = 1/S(t), clamped into [r_min, r_bar].
FEEDBACK = "feedback"

_EPS = 1e-12  # slack for state-invariant checks, absorbs float rounding
_EVENT_TOL = 1e-6  # event localization tolerance, days
_RATE_TOL = 1e-12  # dI/dt magnitudes below this are treated as zero


class NotReachedError(RuntimeError):
    """A requested threshold crossing never occurs on the horizon."""


@dataclass(frozen=True)
class EpiState:
    """Point (S, I) of the epidemic: susceptible and infectious fractions."""

    s: float
    i: float

    def __post_init__(self):
        if not (-_EPS <= self.s <= 1.0 + _EPS):
            raise ValueError(f"S={self.s} outside [0, 1]")
        if not (-_EPS <= self.i <= 1.0 + _EPS):
            raise ValueError(f"I={self.i} outside [0, 1]")
        if self.s + self.i > 1.0 + _EPS:
            raise ValueError(f"S + I = {self.s + self.i} exceeds 1")


@dataclass(frozen=True)
class ModelParams:
    """Model constants.

    r_bar:   reproduction number with no intervention (upper control bound)
    r_min:   hardest achievable reproduction number (lower control bound)
    gamma:   removal rate, 1/day
    epsilon: initially infected fraction; the outbreak starts from
             (S, I) = (1 - epsilon, epsilon)
    """

    r_bar: float
    r_min: float
    gamma: float
    epsilon: float

    def __post_init__(self):
        if not (0.0 < self.r_min < self.r_bar):
            raise ValueError(
                f"need 0 < r_min < r_bar, got r_min={self.r_min}, r_bar={self.r_bar}"
            )
        if self.gamma <= 0.0:
            raise ValueError(f"gamma={self.gamma} must be positive")
        if not (0.0 < self.epsilon < 1.0):
            raise ValueError(f"epsilon={self.epsilon} outside (0, 1)")

    def initial_state(self) -> EpiState:
        return EpiState(1.0 - self.epsilon, self.epsilon)


@dataclass(frozen=True)
class Segment:
    """One piece of a control schedule: a law active on [t_start, t_end)."""

    t_start: float
    t_end: float
    law: float | str  # a constant R value, or FEEDBACK

    def __post_init__(self):
        if not (math.isfinite(self.t_start) and math.isfinite(self.t_end)):
            raise ValueError("segment times must be finite")
        if self.t_end <= self.t_start:
            raise ValueError(f"segment [{self.t_start}, {self.t_end}] is empty")
        if isinstance(self.law, str):
            if self.law != FEEDBACK:
                raise ValueError(f"unknown law {self.law!r}")
        elif not math.isfinite(self.law):
            raise ValueError("constant law value must be finite")


@dataclass(frozen=True)
class ControlSchedule:
    """Piecewise description of R(t); ``default_value`` applies off-segment.

    Segments must be ordered and non-overlapping.  R is right-continuous:
    each law takes effect exactly at its segment start.
    """

    segments: tuple[Segment, ...] = ()
    default_value: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        prev_end = -math.inf
        for seg in self.segments:
            if seg.t_start < prev_end - 1e-12:
                raise ValueError("segments overlap or are out of order")
            prev_end = seg.t_end
        if not math.isfinite(self.default_value) or self.default_value <= 0:
            raise ValueError("default_value must be finite and positive")

    @classmethod
    def open_loop(cls, r_bar: float) -> "ControlSchedule":
        return cls((), r_bar)

    @classmethod
    def single_interval(
        cls, t_start: float, t_end: float, r_value: float, r_bar: float
    ) -> "ControlSchedule":
        return cls((Segment(t_start, t_end, r_value),), r_bar)

    def end_time(self) -> float:
        """Time after which R stays at ``default_value`` forever."""
        return self.segments[-1].t_end if self.segments else 0.0

    def validate_bounds(self, params: ModelParams) -> None:
        """Check constant laws against [r_min, r_bar] and the default against r_bar."""
        if abs(self.default_value - params.r_bar) > 1e-12:
            raise ValueError(
                f"default R {self.default_value} must equal r_bar={params.r_bar}"
            )
        for seg in self.segments:
            if isinstance(seg.law, float) or isinstance(seg.law, int):
                if not (params.r_min - 1e-12 <= seg.law <= params.r_bar + 1e-12):
                    raise ValueError(
                        f"segment R={seg.law} outside [{params.r_min}, {params.r_bar}]"
                    )

    def _law_on(self, a: float, b: float) -> float | str:
        """Law governing [a, b); callers must not straddle segment bounds."""
        for seg in self.segments:
            if seg.t_start <= a and b <= seg.t_end + 1e-12:
                return seg.law
            if seg.t_start >= b:
                break
        return self.default_value

    def r_at(self, t: float, s: float, params: ModelParams) -> float:
        """R in effect at time t (right-continuous) for susceptible level s."""
        law = self.default_value
        for seg in self.segments:
            if seg.t_start <= t < seg.t_end:
                law = seg.law
                break
            if seg.t_start > t:
                break
        if law == FEEDBACK:
            return _feedback_r(s, params.r_min, params.r_bar)
        return float(law)


@dataclass(frozen=True)
class Event:
    """A detected crossing: time in days, a kind tag, and the level involved."""

    t: float
    kind: str  # "i_up" | "i_down" | "s_down" | "i_peak"
    level: float | None = None


@dataclass
class Trajectory:
    """Simulation output: aligned sample arrays plus detected events.

    ``r`` holds the reproduction number in effect at each sample time
    (right-continuous at schedule boundaries).
    """

    t: np.ndarray
    tau: np.ndarray
    s: np.ndarray
    i: np.ndarray
    r: np.ndarray
    events: list[Event] = field(default_factory=list)

    @property
    def gamma(self) -> float:
        if len(self.t) < 2:
            raise ValueError("trajectory too short to infer gamma")
        return (self.tau[-1] - self.tau[0]) / (self.t[-1] - self.t[0])


def derivative(state: EpiState, r: float, gamma: float) -> tuple[float, float]:
    """Right-hand side (dS/dt, dI/dt) in day time.

    dS/dt = -gamma * r * S * I,  dI/dt = gamma * r * S * I - gamma * I.
    """
    if r < 0:
        raise ValueError(f"r={r} must be nonnegative")
    flow = gamma * r * state.s * state.i
    return -flow, flow - gamma * state.i


def _feedback_r(s: float, r_lo: float, r_hi: float) -> float:
    if s <= 0.0:
        return r_hi
    return min(r_hi, max(r_lo, 1.0 / s))


def _step_const(s: float, i: float, h: float, c: float, g: float) -> tuple[float, float]:
    """One RK4 step with constant c = gamma * r."""
    k1s = -c * s * i
    k1i = -k1s - g * i
    s2 = s + 0.5 * h * k1s
    i2 = i + 0.5 * h * k1i
    k2s = -c * s2 * i2
    k2i = -k2s - g * i2
    s3 = s + 0.5 * h * k2s
    i3 = i + 0.5 * h * k2i
    k3s = -c * s3 * i3
    k3i = -k3s - g * i3
    s4 = s + h * k3s
    i4 = i + h * k3i
    k4s = -c * s4 * i4
    k4i = -k4s - g * i4
    return (
        s + h / 6.0 * (k1s + 2.0 * (k2s + k3s) + k4s),
        i + h / 6.0 * (k1i + 2.0 * (k2i + k3i) + k4i),
    )


def _step_feedback(
    s: float, i: float, h: float, g: float, r_lo: float, r_hi: float
) -> tuple[float, float]:
    """One RK4 step under R = 1/S, re-evaluated and clamped at every stage."""
    c = g * _feedback_r(s, r_lo, r_hi)
    k1s = -c * s * i
    k1i = -k1s - g * i
    s2 = s + 0.5 * h * k1s
    i2 = i + 0.5 * h * k1i
    c = g * _feedback_r(s2, r_lo, r_hi)
    k2s = -c * s2 * i2
    k2i = -k2s - g * i2
    s3 = s + 0.5 * h * k2s
    i3 = i + 0.5 * h * k2i
    c = g * _feedback_r(s3, r_lo, r_hi)
    k3s = -c * s3 * i3
    k3i = -k3s - g * i3
    s4 = s + h * k3s
    i4 = i + h * k3i
    c = g * _feedback_r(s4, r_lo, r_hi)
    k4s = -c * s4 * i4
    k4i = -k4s - g * i4
    return (
        s + h / 6.0 * (k1s + 2.0 * (k2s + k3s) + k4s),
        i + h / 6.0 * (k1i + 2.0 * (k2i + k3i) + k4i),
    )


def _bisect_step(step, s0, i0, h, efun, tol=_EVENT_TOL):
    """Locate a sign change of efun(S, I) within a step of length h.

    ``step(s0, i0, h')`` must integrate from the step start.  The sign of
    efun at h'=0 determines which side is kept; returns the offset in days.
    """
    e0 = efun(s0, i0)
    lo, hi = 0.0, h
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        sm, im = step(s0, i0, mid)
        if (efun(sm, im) > 0.0) == (e0 > 0.0):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def simulate(
    params: ModelParams,
    schedule: ControlSchedule,
    x0: EpiState | None = None,
    t_end: float = 300.0,
    dt: float = 0.01,
    *,
    watch_i_levels: tuple[float, ...] = (),
    watch_s_levels: tuple[float, ...] = (),
) -> Trajectory:
    """Integrate the controlled SIR system over [0, t_end] with fixed-step RK4.

    Steps are split at schedule boundaries so no step straddles a control
    discontinuity.  Level crossings of I (both directions), downward
    crossings of S, and local maxima of I are localized by bisection within
    the bracketing step to ``1e-6`` days and recorded as events.
    """
    if dt <= 0.0:
        raise ValueError(f"dt={dt} must be positive")
    if t_end < 0.0:
        raise ValueError(f"t_end={t_end} must be nonnegative")
    if x0 is None:
        x0 = params.initial_state()
    schedule.validate_bounds(params)

    g = params.gamma
    r_lo, r_hi = params.r_min, params.r_bar

    cuts = {0.0, t_end}
    for seg in schedule.segments:
        for b in (seg.t_start, seg.t_end):
            if 0.0 < b < t_end:
                cuts.add(b)
    cuts = sorted(cuts)

    s, i = x0.s, x0.i
    ts = [0.0]
    ss = [s]
    ii = [i]
    rr = [schedule.r_at(0.0, s, params)]
    events: list[Event] = []

    i_watch = sorted(set(watch_i_levels))
    s_watch = sorted(set(watch_s_levels))

    for a, b in zip(cuts[:-1], cuts[1:]):
        law = schedule._law_on(a, b)
        feedback = law == FEEDBACK
        if feedback:
            step = lambda s0, i0, h: _step_feedback(s0, i0, h, g, r_lo, r_hi)
        else:
            c = g * float(law)
            step = lambda s0, i0, h: _step_const(s0, i0, h, c, g)

        n_full = int(math.floor((b - a) / dt + 1e-9))
        rem = (b - a) - n_full * dt
        if rem < 1e-12:
            rem = 0.0
        n_steps = n_full + (1 if rem > 0.0 else 0)

        for k in range(n_steps):
            h = dt if k < n_full else rem
            t0 = a + k * dt
            t1 = b if k == n_steps - 1 else t0 + dt
            s_new, i_new = step(s, i, h)
            if i_new < 0.0:  # clamp float underflow near extinction
                i_new = 0.0

            for lvl in i_watch:
                if i < lvl <= i_new:
                    off = _bisect_step(step, s, i, h, lambda S, I: I - lvl)
                    events.append(Event(t0 + off, "i_up", lvl))
                elif i > lvl >= i_new:
                    off = _bisect_step(step, s, i, h, lambda S, I: I - lvl)
                    events.append(Event(t0 + off, "i_down", lvl))
            for lvl in s_watch:
                if s > lvl >= s_new:
                    off = _bisect_step(step, s, i, h, lambda S, I: S - lvl)
                    events.append(Event(t0 + off, "s_down", lvl))

            if feedback:
                d0 = g * i * (_feedback_r(s, r_lo, r_hi) * s - 1.0)
                d1 = g * i_new * (_feedback_r(s_new, r_lo, r_hi) * s_new - 1.0)
            else:
                rv = float(law)
                d0 = g * i * (rv * s - 1.0)
                d1 = g * i_new * (rv * s_new - 1.0)
            if d0 > _RATE_TOL and d1 < -_RATE_TOL:
                if feedback:
                    dfun = lambda S, I: g * I * (_feedback_r(S, r_lo, r_hi) * S - 1.0)
                else:
                    dfun = lambda S, I: g * I * (rv * S - 1.0)
                off = _bisect_step(step, s, i, h, dfun)
                events.append(Event(t0 + off, "i_peak"))

            s, i = s_new, i_new
            ts.append(t1)
            ss.append(s)
            ii.append(i)
            rr.append(schedule.r_at(t1, s, params))

    t_arr = np.asarray(ts)
    return Trajectory(
        t=t_arr,
        tau=g * t_arr,
        s=np.asarray(ss),
        i=np.asarray(ii),
        r=np.asarray(rr),
        events=events,
    )


@dataclass(frozen=True)
class Condition:
    kind: str  # "i_rises_to" | "s_falls_to" | "i_peak"
    level: float | None = None


def i_rises_to(level: float) -> Condition:
    """Condition: I crosses ``level`` from below."""
    return Condition("i_rises_to", level)


def s_falls_to(level: float) -> Condition:
    """Condition: S crosses ``level`` from above."""
    return Condition("s_falls_to", level)


def i_peak() -> Condition:
    """Condition: first local maximum of I."""
    return Condition("i_peak")


def _hermite(p0, m0, p1, m1, h, u):
    """Cubic Hermite value at fraction u of a step of length h."""
    u2 = u * u
    u3 = u2 * u
    return (
        (2.0 * u3 - 3.0 * u2 + 1.0) * p0
        + (u3 - 2.0 * u2 + u) * h * m0
        + (-2.0 * u3 + 3.0 * u2) * p1
        + (u3 - u2) * h * m1
    )


def _hermite_slope(p0, m0, p1, m1, h, u):
    u2 = u * u
    return (
        (6.0 * u2 - 6.0 * u) * p0 / h
        + (3.0 * u2 - 4.0 * u + 1.0) * m0
        + (-6.0 * u2 + 6.0 * u) * p1 / h
        + (3.0 * u2 - 2.0 * u) * m1
    )


def _refine_crossing(t0, t1, p0, m0, p1, m1, level):
    """Bisect the Hermite interpolant for p(t) = level; tolerance 1e-6 days."""
    h = t1 - t0
    e0 = p0 - level
    lo, hi = 0.0, 1.0
    tol = _EVENT_TOL / h
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        val = _hermite(p0, m0, p1, m1, h, mid) - level
        if (val > 0.0) == (e0 > 0.0):
            lo = mid
        else:
            hi = mid
    return t0 + 0.5 * (lo + hi) * h


def _slopes(traj: Trajectory, k: int, g: float) -> tuple[float, float, float, float]:
    """dS/dt and dI/dt at both ends of step k.

    The left end uses the R recorded at sample k; the right end uses the R
    at sample k+1, which under the feedback law is the clamped 1/S there.
    """
    r0 = traj.r[k]
    r1 = traj.r[k + 1] if k + 2 < len(traj.r) else traj.r[k]
    s0, i0 = traj.s[k], traj.i[k]
    s1, i1 = traj.s[k + 1], traj.i[k + 1]
    return (
        -g * r0 * s0 * i0,
        g * i0 * (r0 * s0 - 1.0),
        -g * r1 * s1 * i1,
        g * i1 * (r1 * s1 - 1.0),
    )


def state_at(traj: Trajectory, t: float) -> tuple[float, float]:
    """(S, I) at an arbitrary time, cubic-Hermite interpolated between samples."""
    if t < traj.t[0] - 1e-12 or t > traj.t[-1] + 1e-12:
        raise ValueError(f"t={t} outside trajectory range")
    k = int(np.searchsorted(traj.t, t, side="right") - 1)
    k = max(0, min(k, len(traj.t) - 2))
    g = traj.gamma
    h = traj.t[k + 1] - traj.t[k]
    u = (t - traj.t[k]) / h
    ms0, mi0, ms1, mi1 = _slopes(traj, k, g)
    s = _hermite(traj.s[k], ms0, traj.s[k + 1], ms1, h, u)
    i = _hermite(traj.i[k], mi0, traj.i[k + 1], mi1, h, u)
    return float(s), float(i)


def _find_time_in_trajectory(traj: Trajectory, condition: Condition) -> float:
    g = traj.gamma
    n = len(traj.t)
    if condition.kind == "i_rises_to":
        lvl = condition.level
        if traj.i[0] >= lvl:
            return float(traj.t[0])
        for k in range(n - 1):
            if traj.i[k] < lvl <= traj.i[k + 1]:
                _, mi0, _, mi1 = _slopes(traj, k, g)
                return _refine_crossing(
                    traj.t[k], traj.t[k + 1], traj.i[k], mi0, traj.i[k + 1], mi1, lvl
                )
        raise NotReachedError(f"I never rises to {lvl} on the horizon")
    if condition.kind == "s_falls_to":
        lvl = condition.level
        if traj.s[0] <= lvl:
            return float(traj.t[0])
        for k in range(n - 1):
            if traj.s[k] > lvl >= traj.s[k + 1]:
                ms0, _, ms1, _ = _slopes(traj, k, g)
                return _refine_crossing(
                    traj.t[k], traj.t[k + 1], traj.s[k], ms0, traj.s[k + 1], ms1, lvl
                )
        raise NotReachedError(f"S never falls to {lvl} on the horizon")
    if condition.kind == "i_peak":
        for k in range(n - 1):
            _, mi0, _, mi1 = _slopes(traj, k, g)
            if mi0 > 0.0 and mi1 <= 0.0 and max(abs(mi0), abs(mi1)) > _RATE_TOL:
                # root of the Hermite slope, bracketed by construction
                h = traj.t[k + 1] - traj.t[k]
                lo, hi = 0.0, 1.0
                tol = _EVENT_TOL / h
                p0, p1 = traj.i[k], traj.i[k + 1]
                while hi - lo > tol:
                    mid = 0.5 * (lo + hi)
                    if _hermite_slope(p0, mi0, p1, mi1, h, mid) > 0.0:
                        lo = mid
                    else:
                        hi = mid
                return float(traj.t[k] + 0.5 * (lo + hi) * h)
        raise NotReachedError("I has no local maximum on the horizon")
    raise ValueError(f"unknown condition kind {condition.kind!r}")


def find_time(
    source: Trajectory | ModelParams,
    condition: Condition,
    *,
    schedule: ControlSchedule | None = None,
    t_end: float = 300.0,
    dt: float = 0.01,
    x0: EpiState | None = None,
) -> float:
    """First time a condition holds, refined to 1e-6 days.

    ``source`` is either a simulated :class:`Trajectory` or a
    :class:`ModelParams` (then ``schedule`` is required and a simulation over
    [0, t_end] is run internally).  Raises :class:`NotReachedError` when the
    condition never holds on the horizon.
    """
    if isinstance(source, Trajectory):
        return _find_time_in_trajectory(source, condition)
    if schedule is None:
        raise ValueError("schedule is required when passing model parameters")
    watch_i = (condition.level,) if condition.kind == "i_rises_to" else ()
    watch_s = (condition.level,) if condition.kind == "s_falls_to" else ()
    traj = simulate(
        source,
        schedule,
        x0=x0,
        t_end=t_end,
        dt=dt,
        watch_i_levels=watch_i,
        watch_s_levels=watch_s,
    )
    kind_map = {"i_rises_to": "i_up", "s_falls_to": "s_down", "i_peak": "i_peak"}
    want = kind_map[condition.kind]
    for ev in traj.events:
        if ev.kind == want and (ev.level is None or ev.level == condition.level):
            return ev.t
    if condition.kind == "i_rises_to" and traj.i[0] >= condition.level:
        return float(traj.t[0])
    if condition.kind == "s_falls_to" and traj.s[0] <= condition.level:
        return float(traj.t[0])
    raise NotReachedError(f"condition {condition} not reached by t={t_end}")
