"""Distancing-cost minimization under peak and terminal constraints.

Three solvers share one parameterization: R(t) is piecewise constant on a
uniform grid over [0, T].

* ``solve_p_opt``     -- minimize the distancing severity subject to
  I(t) <= i_max on [0, T] and S(T) pinned to the target, via projected
  gradient descent on a penalized objective with an increasing penalty
  loop, warm-started from the wait-maintain-suspend schedule.
* ``solve_weighted``  -- the unconstrained weighted objective
  integral of (alpha_i * I + alpha_r * (r_bar - R)) dt; exists to
  demonstrate that no weighting recovers both epidemiological goals.
* ``solve_quantized`` -- R restricted to a few admissible levels held for a
  minimum dwell time; solved by deterministic beam search over dwell slots
  plus first-improvement single-slot swaps.

Optimizers integrate at a coarser step (default 0.05 d) and the returned
schedule is re-verified and reported at the fine step (default 0.01 d).
All solvers are deterministic: fixed iteration orders, no randomness, beam
ties broken by lexicographic level index (harder distancing first).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .analysis import herd_immunity, peak_prevalence, s_infinity
from .core import ControlSchedule, ModelParams, Segment, FEEDBACK, simulate
from .engine import run_piecewise
from .strategies import (
    EpidemiologicalObjective,
    InfeasibleError,
    StrategyReport,
    evaluate_schedule,
    r_star_single,
    wms,
)

__all__ = [
    "OptConfig",
    "WeightedConfig",
    "QuantizedConfig",
    "solve_p_opt",
    "solve_weighted",
    "solve_quantized",
]


@dataclass(frozen=True)
class OptConfig:
    """Settings for the constrained continuous solve.

    The penalty schedule multiplies the squared peak-violation integral, the
    squared terminal miss and the squared excess of I(T) over
    i_terminal_max; outer stages walk through it (extending by factors of 10
    if max_outer_iters exceeds its length) until the residuals drop below
    terminal_tol.

    The i_terminal_max ceiling makes T genuinely cover the whole epidemic:
    with residual infection left free, the cheapest schedules park several
    1e-3 of I at the horizon and the post-horizon rebound erodes S far below
    the target, defeating the point of pinning S(T) there.
    """

    t_horizon: float = 270.0
    n_intervals: int = 270
    i_max: float = 0.1
    s_star_target: float | None = None  # None: herd_immunity(r_bar)
    terminal_tol: float = 1e-3
    i_terminal_max: float = 7e-4
    penalty_schedule: tuple[float, ...] = (1e4, 3e4, 1e5, 3e5, 1e6, 3e6, 1e7)
    max_outer_iters: int = 7
    max_inner_iters: int = 300
    fd_step: float = 1e-5
    dt_opt: float = 0.05
    dt_verify: float = 0.01
    report_horizon: float = 300.0

    def __post_init__(self):
        if self.t_horizon <= 0:
            raise ValueError("t_horizon must be positive")
        if self.n_intervals < 1:
            raise ValueError("n_intervals must be at least 1")
        if self.terminal_tol <= 0:
            raise ValueError("terminal_tol must be positive")
        if self.i_terminal_max <= 0:
            raise ValueError("i_terminal_max must be positive")


@dataclass(frozen=True)
class WeightedConfig:
    """Settings for the unconstrained weighted objective.

    i_max / s_star_target only grade the report's feasibility flag; they do
    not constrain the solve.
    """

    alpha_i: float
    alpha_r: float
    t_horizon: float = 270.0
    n_intervals: int = 270
    i_max: float | None = None
    s_star_target: float | None = None
    max_inner_iters: int = 150
    fd_step: float = 1e-5
    dt_opt: float = 0.05
    dt_verify: float = 0.01
    report_horizon: float = 300.0

    def __post_init__(self):
        if self.alpha_i < 0 or self.alpha_r < 0:
            raise ValueError("weights must be nonnegative")


@dataclass(frozen=True)
class QuantizedConfig:
    """Settings for the dwell-constrained quantized solve.

    Levels must be admissible R values in ascending order.  The last dwell
    slot may be shorter when t_horizon is not a multiple of dwell_min.
    Terminal acceptance requires S(T) within terminal_s_tol of the target
    and I(T) at most i_terminal_max (small enough that the open-loop tail
    cannot erode S much further).
    """

    levels: tuple[float, ...]
    dwell_min: float = 10.0
    t_horizon: float = 270.0
    beam_width: int = 512
    terminal_s_tol: float = 2e-3
    i_terminal_max: float = 1e-3
    max_swap_passes: int = 60
    dt_opt: float = 0.05
    dt_verify: float = 0.01
    report_horizon: float = 300.0

    def __post_init__(self):
        if not self.levels:
            raise ValueError("levels must be nonempty")
        if list(self.levels) != sorted(self.levels):
            raise ValueError("levels must be ascending")
        if self.dwell_min <= 0:
            raise ValueError("dwell_min must be positive")
        if self.beam_width < 1:
            raise ValueError("beam_width must be at least 1")


def _grid_edges(t_horizon: float, n_intervals: int) -> np.ndarray:
    return np.linspace(0.0, t_horizon, n_intervals + 1)


def _schedule_from_values(
    values: np.ndarray, edges: np.ndarray, r_bar: float
) -> ControlSchedule:
    """Merge equal-valued runs into segments; runs at r_bar fold into the default."""
    segments = []
    k = 0
    n = len(values)
    while k < n:
        j = k
        while j + 1 < n and values[j + 1] == values[k]:
            j += 1
        if abs(values[k] - r_bar) > 1e-12:
            segments.append(Segment(float(edges[k]), float(edges[j + 1]), float(values[k])))
        k = j + 1
    return ControlSchedule(tuple(segments), r_bar)


def _batch_metrics(params, X, edges, dt, i_cap):
    """Batch-simulate control matrices; returns the engine aggregates."""
    m = X.shape[0]
    s0 = np.full(m, 1.0 - params.epsilon)
    i0 = np.full(m, params.epsilon)
    return run_piecewise(params.gamma, s0, i0, X, edges, dt, i_cap=i_cap)


def _projected_descent(obj_batch, x0, lo, hi, max_iters, fd_step):
    """Projected gradient descent with batched central differences.

    obj_batch maps an (m, n) stack of control vectors to (m,) objective
    values.  One batch per iteration supplies the gradient and, from the
    same probes, a per-coordinate curvature estimate used as a diagonal
    preconditioner (penalty stiffness varies by orders of magnitude across
    the horizon, which cripples unscaled steps).  The line search tries a
    geometric ladder of step sizes in a second batch and accepts the
    largest step satisfying an Armijo decrease.
    """
    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    n = x.size
    eye = np.eye(n)
    f = float(obj_batch(x[None, :])[0])
    step = 1.0
    stall = 0
    n_ladder = 12
    for _ in range(max_iters):
        probes = np.vstack(
            [x[None, :] + fd_step * eye, x[None, :] - fd_step * eye, x[None, :]]
        )
        vals = obj_batch(probes)
        f = float(vals[-1])
        grad = (vals[:n] - vals[n : 2 * n]) / (2.0 * fd_step)
        curv = (vals[:n] - 2.0 * f + vals[n : 2 * n]) / fd_step**2
        pos = curv[curv > 0.0]
        cfloor = max(1e-6, 1e-2 * float(np.percentile(pos, 50))) if pos.size else 1.0
        direction = grad / np.maximum(curv, cfloor)

        steps = step * 0.5 ** np.arange(n_ladder)
        cand = np.clip(x[None, :] - steps[:, None] * direction[None, :], lo, hi)
        f_cand = obj_batch(cand)
        accepted = False
        for j in range(n_ladder):
            decrease = 1e-4 * float(np.dot(grad, x - cand[j]))
            if f_cand[j] <= f - decrease:
                x = cand[j]
                f_new = float(f_cand[j])
                step = min(max(steps[j] * 2.0, 1e-6), 4.0)
                accepted = True
                break
        if not accepted:
            step *= 0.5**n_ladder
            if step < 1e-10:
                break
            continue
        if f - f_new <= 1e-10 * (1.0 + abs(f)):
            stall += 1
            if stall >= 5:
                f = f_new
                break
        else:
            stall = 0
        f = f_new
    return x


def _penalty_at(schedule: tuple[float, ...], outer: int) -> float:
    if outer < len(schedule):
        return float(schedule[outer])
    return float(schedule[-1]) * 10.0 ** (outer - len(schedule) + 1)


def _wms_warm_start(params, objective, t_horizon, edges) -> np.ndarray:
    """WMS control projected onto the grid, kept feasible after projection.

    The wait-to-hold switch is rounded down to the grid so the projected
    control never lets I run past the cap longer than the exact schedule,
    and the suspend constant is re-derived from the state the projected
    control actually reaches at the switch (grid quantization would
    otherwise push S(T) a few 1e-3 off the pin).
    """
    report = wms(params, objective, tau_f=t_horizon, horizon=t_horizon)
    hold, suspend = report.schedule.segments
    tau_s, tau_1 = hold.t_start, hold.t_end
    r_si = float(suspend.law)
    slope = params.gamma * objective.i_max
    s_tau1 = 1.0 / r_si  # feedback value at the switch equals the suspend R
    mids = 0.5 * (edges[:-1] + edges[1:])
    width = float(edges[1] - edges[0])
    k_hold = int(tau_s / width)  # first interval overlapping the hold phase
    k_sus = int(math.ceil(tau_1 / width))  # hold through the switch interval
    x = np.full(len(mids), params.r_bar)
    for k, m in enumerate(mids):
        if k_hold <= k < k_sus:
            s_m = s_tau1 + slope * (tau_1 - m)  # S falls linearly during the hold
            x[k] = 1.0 / s_m
    x = np.clip(x, params.r_min, params.r_bar)

    res = run_piecewise(
        params.gamma,
        np.array([1.0 - params.epsilon]),
        np.array([params.epsilon]),
        x[None, :k_sus],
        edges[: k_sus + 1],
        dt=0.01,
    )
    s1, i1 = float(res.s[0]), float(res.i[0])
    if s1 <= objective.s_star_target:
        raise InfeasibleError("projected hold phase burns S below the target")
    r_tail = r_star_single(objective.s_star_target, s1, i1)
    x[k_sus:] = min(params.r_bar, max(params.r_min, r_tail))
    return x


def solve_p_opt(params: ModelParams, cfg: OptConfig) -> StrategyReport:
    """Minimize distancing severity subject to the peak cap and terminal pin.

    Decision variable: one R value per grid interval, each in
    [r_min, r_bar].  Constraints enter as squared penalties (peak violation
    integrated on the dense grid, terminal miss at T); outer stages raise the
    penalty weight until both residuals are below terminal_tol.  The search
    starts from the wait-maintain-suspend schedule projected onto the grid,
    so a feasible incumbent exists from the start and the returned severity
    never exceeds the warm start's.
    """
    s_star = cfg.s_star_target if cfg.s_star_target is not None else herd_immunity(params.r_bar)
    objective = EpidemiologicalObjective(i_max=cfg.i_max, s_star_target=s_star)
    edges = _grid_edges(cfg.t_horizon, cfg.n_intervals)
    widths = np.diff(edges)
    lo, hi = params.r_min, params.r_bar
    i_end_slack = 0.2 * cfg.terminal_tol

    def sdi_of(X):
        return (params.r_bar - X) @ widths

    def feasible_in(res, j):
        return (
            res.max_i[j] <= cfg.i_max + cfg.terminal_tol
            and abs(res.s[j] - s_star) <= cfg.terminal_tol
            and res.i[j] <= cfg.i_terminal_max + i_end_slack
        )

    # Trivial case: no intervention already satisfies every constraint.
    x_open = np.full(cfg.n_intervals, params.r_bar)
    res = _batch_metrics(params, x_open[None, :], edges, cfg.dt_opt, cfg.i_max)
    if feasible_in(res, 0):
        return _finish_opt(params, cfg, objective, x_open, edges, s_star)

    try:
        x = _wms_warm_start(params, objective, cfg.t_horizon, edges)
    except InfeasibleError as exc:
        raise InfeasibleError(f"no feasible point found: {exc}") from exc

    best_x = None
    best_sdi = math.inf
    res = _batch_metrics(params, x[None, :], edges, cfg.dt_opt, cfg.i_max)
    if feasible_in(res, 0):
        best_x, best_sdi = x.copy(), float(sdi_of(x))

    for outer in range(cfg.max_outer_iters):
        mu = _penalty_at(cfg.penalty_schedule, outer)

        def obj_batch(X):
            res = _batch_metrics(params, X, edges, cfg.dt_opt, cfg.i_max)
            # Residual infection trades against severity an order of
            # magnitude more steeply than the terminal pin; the extra weight
            # keeps a single penalty scale workable.
            i_end_exc = np.maximum(res.i - cfg.i_terminal_max, 0.0)
            pen = res.viol_sq + (res.s - s_star) ** 2 + 100.0 * i_end_exc**2
            return sdi_of(X) + mu * pen

        x = _projected_descent(obj_batch, x, lo, hi, cfg.max_inner_iters, cfg.fd_step)
        res = _batch_metrics(params, x[None, :], edges, cfg.dt_opt, cfg.i_max)
        if feasible_in(res, 0) and float(sdi_of(x)) < best_sdi:
            best_x, best_sdi = x.copy(), float(sdi_of(x))

    x_final = best_x if best_x is not None else x
    return _finish_opt(params, cfg, objective, x_final, edges, s_star)


def _finish_opt(params, cfg, objective, x, edges, s_star) -> StrategyReport:
    """Verify a control vector at the fine step and build the report."""
    schedule = _schedule_from_values(np.asarray(x, dtype=float), edges, params.r_bar)
    report = evaluate_schedule(
        params,
        schedule,
        objective,
        horizon=max(cfg.report_horizon, cfg.t_horizon),
        dt=cfg.dt_verify,
        timings=_distancing_timings(x, edges, params.r_bar, cfg.t_horizon),
    )
    traj = simulate(params, schedule, t_end=cfg.t_horizon, dt=cfg.dt_verify)
    peak_ok = float(np.max(traj.i)) <= cfg.i_max + 1e-3
    term_ok = abs(float(traj.s[-1]) - s_star) <= cfg.terminal_tol
    qss_ok = float(traj.i[-1]) <= cfg.i_terminal_max + 0.2 * cfg.terminal_tol
    return replace(report, feasible=bool(peak_ok and term_ok and qss_ok))


def _distancing_timings(x, edges, r_bar, t_horizon) -> dict[str, float]:
    timings = {"t_horizon": float(t_horizon)}
    active = np.nonzero(x < r_bar - 1e-3)[0]
    if len(active):
        timings["t_first_distancing"] = float(edges[active[0]])
        timings["t_last_distancing"] = float(edges[active[-1] + 1])
    return timings


def solve_weighted(params: ModelParams, cfg: WeightedConfig) -> StrategyReport:
    """Minimize the weighted sum of infection burden and distancing severity.

    The objective is the dimensionless-time integral of
    alpha_i * I + alpha_r * (r_bar - R); no constraints, no penalty loop.
    The surface is multimodal (doing nothing is always a local minimum), so
    the descent runs from a small fixed set of qualitatively different
    starts -- no intervention, the wait-maintain-suspend projection, and a
    long hard lockdown -- and keeps the lowest final value, ties resolved
    by start order.  The report's feasibility flag grades the outcome
    against i_max / s_star_target (when given) like any other strategy.
    """
    edges = _grid_edges(cfg.t_horizon, cfg.n_intervals)
    widths = np.diff(edges)
    lo, hi = params.r_min, params.r_bar
    g = params.gamma

    def obj_batch(X):
        res = _batch_metrics(params, X, edges, cfg.dt_opt, None)
        return g * (cfg.alpha_i * res.auc_day + cfg.alpha_r * ((params.r_bar - X) @ widths))

    s_star = cfg.s_star_target if cfg.s_star_target is not None else herd_immunity(params.r_bar)
    objective = EpidemiologicalObjective(
        i_max=cfg.i_max if cfg.i_max is not None else 1.0, s_star_target=s_star
    )

    n = cfg.n_intervals
    starts = [np.full(n, params.r_bar)]
    try:
        starts.append(_wms_warm_start(params, objective, cfg.t_horizon, edges))
    except InfeasibleError:
        pass
    mids = 0.5 * (edges[:-1] + edges[1:])
    window = (mids >= 0.15 * cfg.t_horizon) & (mids < 0.75 * cfg.t_horizon)
    starts.append(np.where(window, params.r_min, params.r_bar))

    best_x = None
    best_val = math.inf
    for x0 in starts:
        x = _projected_descent(obj_batch, x0, lo, hi, cfg.max_inner_iters, cfg.fd_step)
        val = float(obj_batch(x[None, :])[0])
        if val < best_val - 1e-12:
            best_x, best_val = x, val

    schedule = _schedule_from_values(best_x, edges, params.r_bar)
    return evaluate_schedule(
        params,
        schedule,
        objective,
        horizon=max(cfg.report_horizon, cfg.t_horizon),
        dt=cfg.dt_verify,
        timings=_distancing_timings(best_x, edges, params.r_bar, cfg.t_horizon),
    )


def _quantized_feasible(res, idx, s_star, cfg):
    return (
        abs(res.s[idx] - s_star) <= cfg.terminal_s_tol
        and res.i[idx] <= cfg.i_terminal_max
    )


def solve_quantized(
    params: ModelParams, cfg: QuantizedConfig, objective: EpidemiologicalObjective
) -> StrategyReport:
    """Beam search over dwell slots with quantized levels, then local swaps.

    Beam state is (severity so far, level sequence, S, I); candidates whose I
    exceeds i_max during a slot are pruned, near-duplicate states are
    deduplicated on a fine (S, log I) bucket keeping the cheapest, and ties
    break on the lexicographic level sequence (harder distancing first).
    Terminal acceptance requires S(T) in the target band with I(T) small.
    """
    levels = np.asarray(cfg.levels, dtype=float)
    if levels[0] < params.r_min - 1e-9 or levels[-1] > params.r_bar + 1e-9:
        raise ValueError("levels must lie within [r_min, r_bar]")
    n_levels = len(levels)
    s_star = objective.s_star_target
    i_max = objective.i_max

    n_slots = int(math.ceil(cfg.t_horizon / cfg.dwell_min - 1e-9))
    edges = np.minimum(cfg.dwell_min * np.arange(n_slots + 1), cfg.t_horizon)

    # Beam: parallel arrays plus python-level sequences for lexicographic ties.
    beam_s = np.array([1.0 - params.epsilon])
    beam_i = np.array([params.epsilon])
    beam_sdi = np.array([0.0])
    beam_seqs: list[tuple[int, ...]] = [()]

    for k in range(n_slots):
        width = float(edges[k + 1] - edges[k])
        m = len(beam_seqs)
        s_exp = np.repeat(beam_s, n_levels)
        i_exp = np.repeat(beam_i, n_levels)
        r_exp = np.tile(levels, m)
        lvl_idx = np.tile(np.arange(n_levels), m)
        sdi_exp = np.repeat(beam_sdi, n_levels) + (params.r_bar - r_exp) * width

        res = run_piecewise(
            params.gamma, s_exp, i_exp, r_exp[:, None],
            np.array([edges[k], edges[k + 1]]), cfg.dt_opt, i_cap=i_max,
        )
        keep = res.max_i <= i_max + 1e-12

        candidates = []
        for j in np.nonzero(keep)[0]:
            parent = j // n_levels
            seq = beam_seqs[parent] + (int(lvl_idx[j]),)
            candidates.append((float(sdi_exp[j]), seq, float(res.s[j]), float(res.i[j])))
        if not candidates:
            raise InfeasibleError(
                f"beam exhausted at slot {k}: every level drives I above {i_max}"
            )
        candidates.sort(key=lambda c: (c[0], c[1]))

        seen = set()
        pruned = []
        for c in candidates:
            key = (round(c[2] / 2e-4), round(math.log(max(c[3], 1e-15)) / 0.02))
            if key in seen:
                continue
            seen.add(key)
            pruned.append(c)
            if len(pruned) >= cfg.beam_width:
                break

        beam_sdi = np.array([c[0] for c in pruned])
        beam_seqs = [c[1] for c in pruned]
        beam_s = np.array([c[2] for c in pruned])
        beam_i = np.array([c[3] for c in pruned])

    accepted = [
        (beam_sdi[j], beam_seqs[j])
        for j in range(len(beam_seqs))
        if abs(beam_s[j] - s_star) <= cfg.terminal_s_tol
        and beam_i[j] <= cfg.i_terminal_max
    ]
    if not accepted:
        raise InfeasibleError(
            "no quantized schedule meets the terminal acceptance band; "
            "widen the band, the level set, or the horizon"
        )
    best_sdi, best_seq = min(accepted, key=lambda c: (c[0], c[1]))
    best_seq = list(best_seq)

    # First-improvement local search over single-slot level swaps.
    widths = np.diff(edges)
    for _ in range(cfg.max_swap_passes):
        trials = [
            (slot, lvl)
            for slot in range(n_slots)
            for lvl in range(n_levels)
            if lvl != best_seq[slot]
        ]
        X = np.tile(levels[np.asarray(best_seq)], (len(trials), 1))
        for row, (slot, lvl) in enumerate(trials):
            X[row, slot] = levels[lvl]
        res = _batch_metrics(params, X, edges, cfg.dt_opt, i_max)
        sdi_vals = (params.r_bar - X) @ widths
        improved = False
        for row, (slot, lvl) in enumerate(trials):
            if (
                res.max_i[row] <= i_max + 1e-12
                and _quantized_feasible(res, row, s_star, cfg)
                and sdi_vals[row] < best_sdi - 1e-9
            ):
                best_seq[slot] = lvl
                best_sdi = float(sdi_vals[row])
                improved = True
                break
        if not improved:
            break

    values = levels[np.asarray(best_seq)]
    schedule = _schedule_from_values(values, edges, params.r_bar)
    report = evaluate_schedule(
        params,
        schedule,
        objective,
        horizon=max(cfg.report_horizon, cfg.t_horizon),
        dt=cfg.dt_verify,
        timings={"t_horizon": float(cfg.t_horizon)},
    )
    traj = simulate(params, schedule, t_end=cfg.t_horizon, dt=cfg.dt_verify)
    peak_ok = float(np.max(traj.i)) <= i_max + 1e-3
    term_ok = abs(float(traj.s[-1]) - s_star) <= cfg.terminal_s_tol
    qss_ok = float(traj.i[-1]) <= cfg.i_terminal_max * (1.0 + 1e-6)
    return replace(report, feasible=bool(peak_ok and term_ok and qss_ok))
