"""Distribution functions behind the hypothesis tests: Student's t, standard normal and F.

Thin validating wrappers over ``scipy.special``; every function takes and
returns plain floats.
"""

import math
import numbers

from scipy import special

from .errors import ArgumentError


def check_alpha(alpha: float) -> float:
    """Validate a significance level, 0 < alpha < 1."""
    if not (isinstance(alpha, numbers.Real) and not isinstance(alpha, bool) and 0.0 < alpha < 1.0):
        raise ArgumentError(f"significance level must lie in (0, 1), got {alpha!r}")
    return float(alpha)


def _check_dof(dof: float, name: str = "dof") -> float:
    if not (math.isfinite(dof) and dof > 0):
        raise ArgumentError(f"{name} must be positive, got {dof!r}")
    return float(dof)


def _check_int_dof(dof: int, name: str) -> int:
    if int(dof) != dof or dof < 1:
        raise ArgumentError(f"{name} must be a positive integer, got {dof!r}")
    return int(dof)


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and 0 <= x <= 1."""
    if not (a > 0 and b > 0):
        raise ArgumentError(f"incomplete beta needs a, b > 0, got a={a!r}, b={b!r}")
    if not 0.0 <= x <= 1.0:
        raise ArgumentError(f"incomplete beta needs 0 <= x <= 1, got x={x!r}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    return float(special.betainc(a, b, x))


def t_cdf(t: float, dof: float) -> float:
    """P(T <= t) for Student's t with ``dof`` degrees of freedom."""
    dof = _check_dof(dof)
    return float(special.stdtr(dof, t))


def t_critical(alpha: float, dof: float) -> float:
    """Two-sided critical value: P(|T| > q) = alpha."""
    alpha = check_alpha(alpha)
    dof = _check_dof(dof)
    return float(special.stdtrit(dof, 1.0 - alpha / 2.0))


def t_two_sided_p(t: float, dof: float) -> float:
    dof = _check_dof(dof)
    return float(min(1.0, 2.0 * special.stdtr(dof, -abs(t))))


def normal_cdf(z: float) -> float:
    return float(special.ndtr(z))


def normal_quantile(p: float) -> float:
    """Inverse of the standard normal CDF on (0, 1)."""
    if not 0.0 < p < 1.0:
        raise ArgumentError(f"normal quantile needs 0 < p < 1, got {p!r}")
    return float(special.ndtri(p))


def f_cdf(q: float, d1: int, d2: int) -> float:
    """P(F <= q) for the F distribution with (d1, d2) degrees of freedom."""
    d1 = _check_int_dof(d1, "d1")
    d2 = _check_int_dof(d2, "d2")
    if q <= 0:
        return 0.0
    return float(special.fdtr(d1, d2, q))


def f_sf(q: float, d1: int, d2: int) -> float:
    d1 = _check_int_dof(d1, "d1")
    d2 = _check_int_dof(d2, "d2")
    if q <= 0:
        return 1.0
    return float(special.fdtrc(d1, d2, q))


def f_critical(alpha: float, d1: int, d2: int) -> float:
    """Upper critical value q with P(F_{d1,d2} > q) = alpha."""
    alpha = check_alpha(alpha)
    d1 = _check_int_dof(d1, "d1")
    d2 = _check_int_dof(d2, "d2")
    return float(special.fdtri(d1, d2, 1.0 - alpha))
