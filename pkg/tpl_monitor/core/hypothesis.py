"""Pooled two-sample t, one-sample Z and one-sample Hotelling's T^2 tests."""

import logging
from typing import Sequence, Union

import numpy as np

from .distributions import check_alpha, f_critical, f_sf, normal_cdf, normal_quantile, t_critical, t_two_sided_p
from .errors import ArgumentError, DegenerateVarianceError, InsufficientDataError, SingularCovarianceError
from .models import MeanVector2, MembershipDecision, TestOutcome

logger = logging.getLogger(__name__)

DEFAULT_CONDITION_CAP = 1e12

ArrayLike = Union[Sequence[float], np.ndarray]


def _as_vector(samples: ArrayLike, name: str) -> np.ndarray:
    x = np.asarray(samples, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise ArgumentError(f"{name} contains non-finite values")
    return x


def _as_matrix(samples, name: str) -> np.ndarray:
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ArgumentError(f"{name} must be a list of observation vectors")
    if not np.all(np.isfinite(x)):
        raise ArgumentError(f"{name} contains non-finite values")
    return x


def _mu_vector(mu0, p: int) -> np.ndarray:
    mu = mu0.as_array() if isinstance(mu0, MeanVector2) else np.asarray(mu0, dtype=float).ravel()
    if mu.shape != (p,):
        raise ArgumentError(f"mu0 has dimension {mu.size}, samples have dimension {p}")
    return mu


def two_sample_t(group1: ArrayLike, group2: ArrayLike, alpha: float = 0.10) -> TestOutcome:
    """Two-sided t-test with s_p = sqrt((s1^2 + s2^2) / 2) and n1 + n2 - 2 degrees of freedom."""
    alpha = check_alpha(alpha)
    x1 = _as_vector(group1, "group1")
    x2 = _as_vector(group2, "group2")
    n1, n2 = x1.size, x2.size
    if n1 < 2 or n2 < 2:
        raise InsufficientDataError(f"two-sample t-test needs n >= 2 per group, got n1={n1}, n2={n2}")

    s1 = x1.var(ddof=1)
    s2 = x2.var(ddof=1)
    sp = np.sqrt((s1 + s2) / 2.0)
    if sp == 0.0:
        raise DegenerateVarianceError("pooled standard deviation is zero")

    t = (x1.mean() - x2.mean()) / (sp * np.sqrt(1.0 / n1 + 1.0 / n2))
    dof = n1 + n2 - 2
    critical = t_critical(alpha, dof)
    return TestOutcome(
        test="two_sample_t",
        statistic=float(t),
        critical_value=critical,
        p_value=t_two_sided_p(float(t), dof),
        reject_null=bool(abs(t) > critical),
        alpha=alpha,
        dof={"dof": float(dof)},
    )


def one_sample_z(
    samples: ArrayLike,
    mu0: float,
    alpha: float = 0.10,
    standard_error_z: bool = False,
) -> TestOutcome:
    """Z = (mean - mu0) / s, or (mean - mu0) / (s / sqrt(n)) with ``standard_error_z``."""
    alpha = check_alpha(alpha)
    x = _as_vector(samples, "samples")
    n = x.size
    if n < 2:
        raise InsufficientDataError(f"one-sample Z-test needs n >= 2, got {n}")
    s = x.std(ddof=1)
    if s == 0.0:
        raise DegenerateVarianceError("sample standard deviation is zero")

    scale = s / np.sqrt(n) if standard_error_z else s
    z = (x.mean() - float(mu0)) / scale
    critical = normal_quantile(1.0 - alpha / 2.0)
    return TestOutcome(
        test="one_sample_z_se" if standard_error_z else "one_sample_z",
        statistic=float(z),
        critical_value=critical,
        p_value=float(min(1.0, 2.0 * normal_cdf(-abs(z)))),
        reject_null=bool(abs(z) > critical),
        alpha=alpha,
        dof={"n": float(n)},
    )


def _covariance(x: np.ndarray, condition_cap: float) -> np.ndarray:
    cov = np.atleast_2d(np.cov(x, rowvar=False, ddof=1))
    cond = np.linalg.cond(cov)
    if not np.isfinite(cond) or cond > condition_cap:
        raise SingularCovarianceError(f"sample covariance is singular or ill-conditioned (condition number {cond:.3g})")
    return cov


def mahalanobis_sq(diff: np.ndarray, cov: np.ndarray) -> float:
    """diff' cov^-1 diff, solved with partial pivoting."""
    return float(diff @ np.linalg.solve(cov, diff))


def hotelling_t2_one_sample(
    samples,
    mu0,
    alpha: float = 0.10,
    condition_cap: float = DEFAULT_CONDITION_CAP,
) -> TestOutcome:
    """T^2 = n (xbar - mu0)' S^-1 (xbar - mu0) against p(n-1)/(n-p) F_{p, n-p}."""
    alpha = check_alpha(alpha)
    x = _as_matrix(samples, "samples")
    n, p = x.shape
    if n <= p:
        raise InsufficientDataError(f"Hotelling's T^2 needs n > p, got n={n}, p={p}")
    mu = _mu_vector(mu0, p)

    cov = _covariance(x, condition_cap)
    t2 = n * mahalanobis_sq(x.mean(axis=0) - mu, cov)
    scale = p * (n - 1) / (n - p)
    critical = scale * f_critical(alpha, p, n - p)
    return TestOutcome(
        test="hotelling_t2",
        statistic=t2,
        critical_value=critical,
        p_value=f_sf(t2 / scale, p, n - p),
        reject_null=bool(t2 > critical),
        alpha=alpha,
        dof={"p": float(p), "n_minus_p": float(n - p)},
    )


def leave_one_out_t2(reference, condition_cap: float = DEFAULT_CONDITION_CAP) -> np.ndarray:
    """T^2 of each reference point about the mean and covariance of the others."""
    x = _as_matrix(reference, "reference")
    n, p = x.shape
    if n < p + 2:
        raise InsufficientDataError(f"leave-one-out T^2 needs n >= p + 2, got n={n}, p={p}")
    values = np.empty(n)
    for i in range(n):
        rest = np.delete(x, i, axis=0)
        cov = _covariance(rest, condition_cap)
        values[i] = mahalanobis_sq(x[i] - rest.mean(axis=0), cov)
    return values


def empirical_t2_membership(
    reference,
    candidate,
    alpha: float = 0.10,
    condition_cap: float = DEFAULT_CONDITION_CAP,
) -> MembershipDecision:
    """Member iff the candidate's T^2 about the reference cloud is within the (1 - alpha) LOO quantile."""
    alpha = check_alpha(alpha)
    x = _as_matrix(reference, "reference")
    n, p = x.shape
    loo = leave_one_out_t2(x, condition_cap)
    cov = _covariance(x, condition_cap)
    candidate_t2 = mahalanobis_sq(_mu_vector(candidate, p) - x.mean(axis=0), cov)
    threshold = float(np.quantile(loo, 1.0 - alpha))
    logger.debug(f"membership: candidate T2={candidate_t2:.4g}, threshold={threshold:.4g} (n={n})")
    return MembershipDecision(
        candidate_t2=candidate_t2,
        threshold=threshold,
        member=bool(candidate_t2 <= threshold),
        alpha=alpha,
        reference_size=n,
    )
