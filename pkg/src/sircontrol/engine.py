"""Vectorized batch integration of many SIR scenarios at once.

The optimizers evaluate hundreds of perturbed control schedules per
iteration; stepping them together through a jitted RK4 kernel keeps a full
finite-difference gradient in the tens of milliseconds.  Results agree with
:func:`sircontrol.core.simulate` to integration precision (same RK4 scheme,
same step splitting) and a consistency test pins that down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = ["BatchResult", "advance", "run_piecewise"]


@dataclass
class BatchResult:
    """Aggregates accumulated over a batch integration (per scenario).

    auc_day is the trapezoidal integral of I dt (day units); viol_sq is the
    integral of max(0, I - i_cap)^2 dt, used as a smooth peak penalty.
    """

    s: np.ndarray
    i: np.ndarray
    max_i: np.ndarray
    auc_day: np.ndarray
    viol_sq: np.ndarray


@njit(cache=True)
def _advance_core(gamma, s, i, r, t_len, dt, i_cap, max_i, auc, viol):
    """RK4-step all scenarios in place; i_cap < 0 disables violation tracking."""
    m = s.shape[0]
    n_full = int(math.floor(t_len / dt + 1e-9))
    rem = t_len - n_full * dt
    if rem < 1e-12:
        rem = 0.0
    n_steps = n_full + (1 if rem > 0.0 else 0)
    for k in range(n_steps):
        h = dt if k < n_full else rem
        for j in range(m):
            c = gamma * r[j]
            sj = s[j]
            ij = i[j]
            k1s = -c * sj * ij
            k1i = -k1s - gamma * ij
            s2 = sj + 0.5 * h * k1s
            i2 = ij + 0.5 * h * k1i
            k2s = -c * s2 * i2
            k2i = -k2s - gamma * i2
            s3 = sj + 0.5 * h * k2s
            i3 = ij + 0.5 * h * k2i
            k3s = -c * s3 * i3
            k3i = -k3s - gamma * i3
            s4 = sj + h * k3s
            i4 = ij + h * k3i
            k4s = -c * s4 * i4
            k4i = -k4s - gamma * i4
            sn = sj + h / 6.0 * (k1s + 2.0 * (k2s + k3s) + k4s)
            im = ij + h / 6.0 * (k1i + 2.0 * (k2i + k3i) + k4i)
            if im < 0.0:  # clamp float underflow near extinction
                im = 0.0
            auc[j] += 0.5 * h * (ij + im)
            if im > max_i[j]:
                max_i[j] = im
            if i_cap >= 0.0 and im > i_cap:
                exc = im - i_cap
                viol[j] += h * exc * exc
            s[j] = sn
            i[j] = im


def _fresh(s0, i0) -> BatchResult:
    s = np.array(s0, dtype=float, copy=True)
    i = np.array(i0, dtype=float, copy=True)
    return BatchResult(
        s=s, i=i, max_i=i.copy(), auc_day=np.zeros_like(s), viol_sq=np.zeros_like(s)
    )


def advance(
    gamma: float,
    s: np.ndarray,
    i: np.ndarray,
    r: np.ndarray | float,
    t_len: float,
    dt: float,
    i_cap: float | None = None,
    out: BatchResult | None = None,
) -> BatchResult:
    """Advance all scenarios by t_len days under constant per-scenario R.

    Steps of size dt with a shorter final step.  When ``out`` is given its
    s/i fields are the starting states and aggregates accumulate in place.
    """
    if out is None:
        out = _fresh(s, i)
    m = out.s.shape[0]
    r_vec = np.broadcast_to(np.asarray(r, dtype=float), (m,)).copy()
    _advance_core(
        gamma, out.s, out.i, r_vec, t_len, dt,
        -1.0 if i_cap is None else i_cap,
        out.max_i, out.auc_day, out.viol_sq,
    )
    return out


def run_piecewise(
    gamma: float,
    s0: np.ndarray,
    i0: np.ndarray,
    levels: np.ndarray,
    edges: np.ndarray,
    dt: float,
    i_cap: float | None = None,
) -> BatchResult:
    """Integrate scenarios under piecewise-constant R given per-slot levels.

    levels has shape (m, K) and edges shape (K+1,): scenario j applies
    levels[j, k] on [edges[k], edges[k+1]).
    """
    levels = np.ascontiguousarray(levels, dtype=float)
    m, n_slots = levels.shape
    if len(edges) != n_slots + 1:
        raise ValueError("edges must have one more entry than level columns")
    out = _fresh(s0, i0)
    cap = -1.0 if i_cap is None else i_cap
    for k in range(n_slots):
        _advance_core(
            gamma, out.s, out.i, np.ascontiguousarray(levels[:, k]),
            float(edges[k + 1] - edges[k]), dt, cap,
            out.max_i, out.auc_day, out.viol_sq,
        )
    return out
