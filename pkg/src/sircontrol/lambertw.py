"""Principal-branch Lambert W: the inverse of w -> w * exp(w) for w >= -1.

This is the kernel of every closed-form final-size computation, so it is
implemented here rather than pulled from a library: the domain of interest
is the narrow real band [-1/e, 0] plus nonnegative arguments, and the branch
point z = -1/e is hit exactly by the final-size maximizer, which needs a
small absolute slack to absorb rounding in the argument.
"""

from __future__ import annotations

import math

__all__ = ["lambert_w0", "BRANCH_POINT"]

#: -1/e, the left edge of the real domain of the principal branch.
BRANCH_POINT = -math.exp(-1.0)

_BRANCH_SLACK = 1e-12  # absolute slack below -1/e before declaring a domain error
_MAX_ITERS = 50


def lambert_w0(z: float) -> float:
    """Principal branch W0(z) for real z >= -1/e.

    Halley iteration from a branch-point or logarithmic initial guess;
    converges so that |w * exp(w) - z| <= 1e-12 * max(1, |z|).  Arguments
    below -1/e by more than 1e-12 raise ValueError.
    """
    if math.isnan(z):
        raise ValueError("z is NaN")
    if z < BRANCH_POINT:
        if z < BRANCH_POINT - _BRANCH_SLACK:
            raise ValueError(f"z={z} below the branch point -1/e")
        z = BRANCH_POINT
    if z == 0.0:
        return 0.0
    if z == BRANCH_POINT:
        return -1.0

    # Initial guess: series around the branch point where it is accurate,
    # the argument itself for small |z|, log asymptote for large z.
    if z < -0.25:
        p = math.sqrt(2.0 * (1.0 + math.e * z))
        w = -1.0 + p * (1.0 + p * (-1.0 / 3.0 + p * 11.0 / 72.0))
    elif z < math.e:
        w = z if abs(z) < 0.5 else math.log1p(z)
    else:
        lg = math.log(z)
        w = lg - math.log(lg)

    tol = 1e-12 * max(1.0, abs(z))
    for _ in range(_MAX_ITERS):
        ew = math.exp(w)
        f = w * ew - z
        if abs(f) <= tol:
            return w
        wp1 = w + 1.0
        denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1)
        w -= f / denom
        if w < -1.0:  # keep the iterate on the principal branch
            w = -1.0 + 1e-16
    ew = math.exp(w)
    if abs(w * ew - z) <= tol:
        return w
    raise ArithmeticError(f"Halley iteration did not converge for z={z}")
