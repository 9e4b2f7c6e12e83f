import numpy as np
import pytest

from tpl_monitor.core.errors import (
    ArgumentError,
    DegenerateVarianceError,
    InsufficientDataError,
    SingularCovarianceError,
)
from tpl_monitor.core.hypothesis import (
    empirical_t2_membership,
    hotelling_t2_one_sample,
    leave_one_out_t2,
    one_sample_z,
    two_sample_t,
)
from tpl_monitor.core.models import MeanVector2

from conftest import correlated_cloud


def brute_t(x, y):
    n1, n2 = len(x), len(y)
    m1, m2 = sum(x) / n1, sum(y) / n2
    v1 = sum((v - m1) ** 2 for v in x) / (n1 - 1)
    v2 = sum((v - m2) ** 2 for v in y) / (n2 - 1)
    sp = ((v1 + v2) / 2) ** 0.5
    return (m1 - m2) / (sp * (1 / n1 + 1 / n2) ** 0.5)


def brute_t2(rows, mu):
    n = len(rows)
    mean = [sum(r[j] for r in rows) / n for j in range(2)]
    s = [[sum((r[i] - mean[i]) * (r[j] - mean[j]) for r in rows) / (n - 1) for j in range(2)] for i in range(2)]
    det = s[0][0] * s[1][1] - s[0][1] * s[1][0]
    inv = [[s[1][1] / det, -s[0][1] / det], [-s[1][0] / det, s[0][0] / det]]
    d = [mean[0] - mu[0], mean[1] - mu[1]]
    return n * sum(d[i] * inv[i][j] * d[j] for i in range(2) for j in range(2))


def test_statistics_match_definitional_formulas():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        n1, n2 = rng.integers(2, 12, size=2)
        x = rng.normal(0, 1, n1)
        y = rng.normal(0.3, 2, n2)
        assert two_sample_t(x, y).statistic == pytest.approx(brute_t(list(x), list(y)), abs=1e-10)

        mu0 = rng.normal()
        s = np.std(x, ddof=1)
        z = one_sample_z(x, mu0)
        assert z.statistic == pytest.approx((np.mean(x) - mu0) / s, abs=1e-10)
        z_se = one_sample_z(x, mu0, standard_error_z=True)
        assert z_se.statistic == pytest.approx((np.mean(x) - mu0) / (s / np.sqrt(n1)), abs=1e-10)

        rows = rng.normal(size=(int(rng.integers(3, 10)), 2))
        mu = rng.normal(size=2)
        t2 = hotelling_t2_one_sample(rows, mu)
        assert t2.statistic == pytest.approx(brute_t2(rows.tolist(), mu.tolist()), rel=1e-9, abs=1e-10)


def test_two_sample_t_identical_groups_accept():
    outcome = two_sample_t([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], 0.10)
    assert outcome.statistic == 0.0
    assert not outcome.reject_null
    assert outcome.dof == {"dof": 4.0}


def test_two_sample_t_pooled_form_uses_plain_variance_average():
    # unequal n: s_p = sqrt((s1^2 + s2^2) / 2), not the weighted pooled SD
    x = [0.0, 2.0]
    y = [10.0, 11.0, 12.0, 13.0]
    sp = np.sqrt((2.0 + np.var(y, ddof=1)) / 2)
    expected = (1.0 - 11.5) / (sp * np.sqrt(1 / 2 + 1 / 4))
    assert two_sample_t(x, y).statistic == pytest.approx(expected, abs=1e-12)


def test_two_sample_t_detects_large_shift():
    rng = np.random.default_rng(1)
    outcome = two_sample_t(rng.normal(0, 1, 20), rng.normal(3, 1, 20), 0.10)
    assert outcome.reject_null
    assert outcome.p_value < 1e-6


def test_input_errors():
    with pytest.raises(InsufficientDataError):
        two_sample_t([1.0], [1.0, 2.0])
    with pytest.raises(DegenerateVarianceError):
        two_sample_t([1.0, 1.0], [2.0, 2.0])
    with pytest.raises(InsufficientDataError):
        one_sample_z([1.0], 0.0)
    with pytest.raises(DegenerateVarianceError):
        one_sample_z([2.0, 2.0, 2.0], 0.0)
    with pytest.raises(ArgumentError):
        two_sample_t([1.0, np.nan], [1.0, 2.0])
    with pytest.raises(ArgumentError):
        two_sample_t([1.0, 2.0], [1.0, 2.0], alpha=1.5)


def test_hotelling_requires_more_samples_than_dimensions():
    with pytest.raises(InsufficientDataError):
        hotelling_t2_one_sample([[1.0, 2.0], [2.0, 1.0]], [0.0, 0.0])


def test_hotelling_rejects_collinear_samples():
    rows = [[t, 2 * t] for t in (1.0, 2.0, 3.0, 4.0)]
    with pytest.raises(SingularCovarianceError):
        hotelling_t2_one_sample(rows, [0.0, 0.0])


def test_hotelling_mu0_dimension_must_match():
    with pytest.raises(ArgumentError):
        hotelling_t2_one_sample([[1.0, 2.0], [2.0, 1.0], [0.0, 0.5]], [0.0, 0.0, 0.0])


def test_hotelling_accepts_mean_vector_model():
    rows = correlated_cloud([1.0, 1.0], 0.1, 0.9, 20, seed=3)
    outcome = hotelling_t2_one_sample(rows, MeanVector2(radius_mean=1.0, height_mean=1.0), 0.10)
    assert outcome.dof == {"p": 2.0, "n_minus_p": 18.0}
    # critical value = p(n-1)/(n-p) * F_{0.90}(2, 18)
    assert outcome.critical_value == pytest.approx(2 * 19 / 18 * 2.6239, abs=1e-3)


def test_t2_detects_shift_across_correlation_that_marginal_z_misses():
    rows = correlated_cloud([0.0, 0.0], 1.0, 0.95, 20, seed=5) + np.array([0.5, -0.5])
    mu0 = [0.0, 0.0]
    assert not one_sample_z(rows[:, 0], 0.0, 0.10).reject_null
    assert not one_sample_z(rows[:, 1], 0.0, 0.10).reject_null
    assert hotelling_t2_one_sample(rows, mu0, 0.10).reject_null


def test_leave_one_out_t2_shape_and_minimum_size():
    rows = correlated_cloud([0.0, 0.0], 1.0, 0.5, 12, seed=9)
    values = leave_one_out_t2(rows)
    assert values.shape == (12,)
    assert np.all(values >= 0)
    with pytest.raises(InsufficientDataError):
        leave_one_out_t2(rows[:3])


def test_empirical_membership_centre_and_far_point():
    rows = correlated_cloud([1.0, 2.0], 0.05, 0.9, 40, seed=11)
    centre = empirical_t2_membership(rows, rows.mean(axis=0), 0.10)
    assert centre.member
    assert centre.candidate_t2 == pytest.approx(0.0, abs=1e-12)
    far = empirical_t2_membership(rows, [1.2, 1.8], 0.10)
    assert not far.member
    assert far.reference_size == 40


def test_t2_is_invariant_under_affine_maps():
    x = correlated_cloud([1.0, 2.0], 0.1, 0.6, 25, seed=11)
    mu0 = np.array([1.02, 1.97])
    a = np.array([[2.0, 0.5], [-1.0, 3.0]])
    shift = np.array([4.0, -7.0])
    base = hotelling_t2_one_sample(x, mu0)
    mapped = hotelling_t2_one_sample(x @ a.T + shift, a @ mu0 + shift)
    assert mapped.statistic == pytest.approx(base.statistic, rel=1e-9)
    assert mapped.critical_value == pytest.approx(base.critical_value)
    assert mapped.reject_null == base.reject_null


def test_t2_with_one_feature_is_the_squared_standard_error_z():
    rng = np.random.default_rng(12)
    x = rng.normal(5.0, 0.3, size=18)
    mu0 = 4.9
    t2 = hotelling_t2_one_sample(x[:, None], [mu0])
    expected = x.size * (x.mean() - mu0) ** 2 / x.var(ddof=1)
    assert t2.statistic == pytest.approx(expected, rel=1e-9)
    z = one_sample_z(x, mu0, standard_error_z=True)
    assert t2.statistic == pytest.approx(z.statistic ** 2, rel=1e-9)


def test_t_statistic_flips_sign_when_groups_swap():
    rng = np.random.default_rng(13)
    x, y = rng.normal(1.0, 0.2, 9), rng.normal(1.1, 0.3, 12)
    forward, backward = two_sample_t(x, y), two_sample_t(y, x)
    assert forward.statistic == pytest.approx(-backward.statistic)
    assert forward.p_value == pytest.approx(backward.p_value)
    assert forward.reject_null == backward.reject_null


@pytest.mark.parametrize("standard_error_z", [False, True])
def test_z_is_unchanged_when_data_and_mu0_shift_together(standard_error_z):
    rng = np.random.default_rng(14)
    x = rng.normal(0.8, 0.05, 15)
    base = one_sample_z(x, 0.79, standard_error_z=standard_error_z)
    shifted = one_sample_z(x + 3.5, 0.79 + 3.5, standard_error_z=standard_error_z)
    assert shifted.statistic == pytest.approx(base.statistic, rel=1e-7)
    assert shifted.reject_null == base.reject_null
