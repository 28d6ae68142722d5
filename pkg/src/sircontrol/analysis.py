"""Closed-form epidemic metrics and stability diagnostics.

Final size and peak prevalence admit closed forms for a constant
reproduction number; both remain applicable after an intervention ends by
evaluating them at the state where the open-loop tail begins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import EpiState, Trajectory
from .lambertw import lambert_w0

__all__ = [
    "FinalSizeResult",
    "EquilibriumClass",
    "NotConvergedError",
    "herd_immunity",
    "s_infinity",
    "peak_prevalence",
    "max_s_infinity",
    "lyapunov_value",
    "lyapunov_rate",
    "classify_equilibrium",
    "auc_infected",
]

#: I below this level counts as "epidemic over" (quasi-steady state).
QSS_THRESHOLD = 1e-6


class NotConvergedError(RuntimeError):
    """A trajectory has not settled enough for the requested computation."""


@dataclass(frozen=True)
class FinalSizeResult:
    """Limit of the susceptible fraction and the resulting epidemic size."""

    s_inf: float
    efs: float  # 1 - s_inf: total fraction ever infected


@dataclass(frozen=True)
class EquilibriumClass:
    s_bar: float
    label: str  # "stable" | "unstable"


def herd_immunity(r: float) -> float:
    """Susceptible threshold min{1, 1/r} below which I cannot grow."""
    if r <= 0.0:
        raise ValueError(f"r={r} must be positive")
    return min(1.0, 1.0 / r)


def _check_state(s0: float, i0: float) -> None:
    if not (-1e-12 <= s0 <= 1.0 + 1e-12 and -1e-12 <= i0 <= 1.0 + 1e-12):
        raise ValueError(f"(s0, i0)=({s0}, {i0}) outside the unit box")
    if s0 + i0 > 1.0 + 1e-9:
        raise ValueError(f"s0 + i0 = {s0 + i0} exceeds 1")


def s_infinity(r: float, s0: float, i0: float) -> FinalSizeResult:
    """Susceptible limit of an open-loop run started at (s0, i0).

    s_inf = -W(-r * s0 * exp(-r * (s0 + i0))) / r.  The limit is bounded
    above by the herd-immunity threshold for any admissible start.
    """
    if r <= 0.0:
        raise ValueError(f"r={r} must be positive")
    _check_state(s0, i0)
    z = -r * s0 * math.exp(-r * (s0 + i0))
    s_inf = -lambert_w0(z) / r
    return FinalSizeResult(s_inf=s_inf, efs=1.0 - s_inf)


def peak_prevalence(r: float, s0: float, i0: float) -> float:
    """Maximum of I on an open-loop run started at (s0, i0).

    When s0 * r <= 1 the infection only decays and the peak is i0 itself;
    otherwise the peak is i0 + s0 - (1/r) * (1 + ln(s0 * r)).
    """
    if r <= 0.0:
        raise ValueError(f"r={r} must be positive")
    _check_state(s0, i0)
    if s0 * r <= 1.0:
        return i0
    return i0 + s0 - (1.0 / r) * (1.0 + math.log(s0 * r))


def max_s_infinity(r: float, delta: float) -> tuple[float, EpiState]:
    """Largest reachable susceptible limit over starts with I >= delta.

    The maximum is attained at (S, I) = (herd_immunity(r), delta); for
    delta = 0 its value is the herd-immunity threshold itself.
    """
    if r <= 0.0:
        raise ValueError(f"r={r} must be positive")
    if not (0.0 <= delta <= 1.0):
        raise ValueError(f"delta={delta} outside [0, 1]")
    s_star = herd_immunity(r)
    if s_star + delta > 1.0 + 1e-12:
        raise ValueError(
            f"herd threshold {s_star} plus delta {delta} exceeds 1: "
            "the maximizing start is not an admissible state"
        )
    z = -r * s_star * math.exp(-r * (s_star + delta))
    value = -lambert_w0(z) / r
    return value, EpiState(s_star, delta)


def lyapunov_value(state: EpiState, s_bar: float) -> float:
    """V(S, I) = S - s_bar - s_bar * ln(S / s_bar) + I.

    Nonnegative on S > 0, zero exactly at (s_bar, 0).
    """
    if state.s <= 0.0:
        raise ValueError("S must be positive for the log term")
    if s_bar <= 0.0:
        raise ValueError(f"s_bar={s_bar} must be positive")
    return state.s - s_bar - s_bar * math.log(state.s / s_bar) + state.i


def lyapunov_rate(state: EpiState, r: float, s_bar: float) -> float:
    """dV/dtau along solutions: I * (r * s_bar - 1).

    Negative, zero or positive as s_bar is below, at or above the
    herd-immunity threshold (whenever I > 0).
    """
    if s_bar <= 0.0:
        raise ValueError(f"s_bar={s_bar} must be positive")
    return state.i * (r * s_bar - 1.0)


def classify_equilibrium(s_bar: float, r: float) -> EquilibriumClass:
    """Stability of the disease-free state (s_bar, 0) under constant r."""
    if not (0.0 <= s_bar <= 1.0):
        raise ValueError(f"s_bar={s_bar} outside [0, 1]")
    label = "stable" if s_bar <= herd_immunity(r) else "unstable"
    return EquilibriumClass(s_bar=s_bar, label=label)


def auc_infected(trajectory: Trajectory) -> float:
    """Integral of I over dimensionless time, trapezoidal on the sample grid.

    Requires the run to have settled (final I below 1e-6); for a horizon long
    enough the value matches 1 - S(end).
    """
    if trajectory.i[-1] >= QSS_THRESHOLD:
        raise NotConvergedError(
            f"I(end)={trajectory.i[-1]:.3g} >= {QSS_THRESHOLD}; extend the horizon"
        )
    return float(np.trapezoid(trajectory.i, trajectory.tau))
