import numpy as np
import pytest

from tpl_monitor.core.dataset import DatasetGrid
from tpl_monitor.core.dimension_models import (
    FitOptions,
    fit_curve,
    fit_curve_batch,
    fit_grid,
    fit_models,
    fit_param_trend,
    load_model_set,
    predict_for_new_cell,
    predict_height,
    predict_radius,
    save_model_set,
)
from tpl_monitor.core.errors import ArgumentError, ExtrapolationError, InsufficientDataError, ModelDomainError
from tpl_monitor.core.models import (
    DesignSpec,
    HeightModelParams,
    LinearTrend,
    ParamTrend,
    ProcessParams,
    RadiusModelParams,
)
from tpl_monitor.core.synthetic import default_profile, generate_grid

from conftest import exact_records


def test_predictions_follow_closed_forms():
    p = ProcessParams(laser_power=50.0, scan_rate=50.0)
    radius = RadiusModelParams(a_R=0.7, b_R=0.028, c_R=1.15)
    height = HeightModelParams(a_H=1.0, b_H=0.0315, c_H=0.70)
    assert predict_radius(radius, p) == pytest.approx(0.7 * np.sqrt(np.log(0.028 * 50.0)) + 1.15)
    assert predict_height(height, p) == pytest.approx(np.sqrt(np.sqrt(0.0315 * 50.0) - 1.0) + 0.70)


def test_predictions_outside_model_domain_raise():
    p = ProcessParams(laser_power=50.0, scan_rate=50.0)
    with pytest.raises(ModelDomainError):
        predict_radius(RadiusModelParams(a_R=1, b_R=0.02, c_R=0), p)
    with pytest.raises(ModelDomainError):
        predict_height(HeightModelParams(a_H=1, b_H=0.02, c_H=0), p)


def test_zero_noise_fit_recovers_generative_parameters(groups):
    profile = default_profile()
    design = DesignSpec(design_dimension=2.0)
    fit = fit_models(exact_records(profile, design, groups))
    true_radius, true_height = profile.parameters_at(design)
    for fitted, truth in ((fit.radius, true_radius), (fit.height, true_height)):
        np.testing.assert_allclose(fitted.as_tuple(), truth.as_tuple(), rtol=1e-3)
    assert fit.radius_residual_norm < 1e-5
    assert fit.height_residual_norm < 1e-5
    assert fit.n_records == 12
    assert len(fit.training_cells) == 6


def test_fit_is_deterministic(groups):
    grid = generate_grid(default_profile(), [DesignSpec(design_dimension=1.8)], groups, seed=4)
    first = fit_models(list(grid.records))
    second = fit_models(list(grid.records))
    assert first == second


def test_refit_never_worse_than_fewer_starts(groups):
    grid = generate_grid(default_profile(), [DesignSpec(design_dimension=2.2)], groups, seed=8)
    records = list(grid.records)
    many = fit_models(records, FitOptions(n_starts=16))
    one = fit_models(records, FitOptions(n_starts=1))
    assert many.radius_residual_norm <= one.radius_residual_norm + 1e-12
    assert many.height_residual_norm <= one.height_residual_norm + 1e-12


def test_two_groups_is_insufficient(groups):
    records = exact_records(default_profile(), DesignSpec(design_dimension=2.0), groups[:2])
    with pytest.raises(InsufficientDataError):
        fit_models(records)


def test_mixed_designs_are_rejected(groups):
    profile = default_profile()
    records = exact_records(profile, DesignSpec(design_dimension=2.0), groups[:3])
    records += exact_records(profile, DesignSpec(design_dimension=2.2), groups[:3])
    with pytest.raises(ArgumentError):
        fit_models(records)


def test_trend_through_exact_designs_predicts_new_design(designs, groups):
    profile = default_profile()
    records = [r for d in designs for r in exact_records(profile, d, groups)]
    models = fit_grid(DatasetGrid(records))
    assert len(models.fits) == 6
    trend = fit_param_trend(models)
    for name, truth in profile.trends.items():
        assert trend.trends[name].slope == pytest.approx(truth.slope, rel=1e-2, abs=1e-5)

    unseen = DesignSpec(design_dimension=2.1)
    predicted = predict_for_new_cell(trend, unseen, groups[0])
    expected = profile.mean_at(unseen, groups[0])
    assert predicted.radius_mean == pytest.approx(expected.radius_mean, abs=1e-4)
    assert predicted.height_mean == pytest.approx(expected.height_mean, abs=1e-4)


def test_trend_needs_two_designs(groups):
    records = exact_records(default_profile(), DesignSpec(design_dimension=2.0), groups)
    with pytest.raises(InsufficientDataError):
        fit_param_trend(fit_grid(DatasetGrid(records)))


def test_infeasible_extrapolation_raises():
    trends = {name: LinearTrend(slope=0.0, intercept=1.0) for name in ("a_R", "c_R", "a_H", "c_H")}
    trends["b_R"] = LinearTrend(slope=-0.01, intercept=0.05)
    trends["b_H"] = LinearTrend(slope=0.0, intercept=0.05)
    trend = ParamTrend(trends=trends, designs=[1.6, 2.6])
    p = ProcessParams(laser_power=50.0, scan_rate=50.0)
    predict_for_new_cell(trend, DesignSpec(design_dimension=2.0), p)
    with pytest.raises(ExtrapolationError):
        predict_for_new_cell(trend, DesignSpec(design_dimension=10.0), p)


def test_model_set_round_trip_refits_identically(tmp_path, designs, groups):
    grid = generate_grid(default_profile(), designs[:2], groups, seed=2)
    models = fit_grid(grid)
    trend = fit_param_trend(models)
    path = save_model_set(models, tmp_path / "models.json", trend)
    loaded, loaded_trend = load_model_set(path)
    assert loaded == models
    assert loaded_trend == trend
    assert fit_grid(grid) == models


def test_duplicating_every_record_leaves_the_fit_unchanged(groups):
    grid = generate_grid(default_profile(), [DesignSpec(design_dimension=2.0)], groups, seed=31)
    records = list(grid.records)
    once = fit_models(records)
    twice = fit_models(records + records)
    np.testing.assert_allclose(twice.radius.as_tuple(), once.radius.as_tuple(), rtol=1e-5)
    np.testing.assert_allclose(twice.height.as_tuple(), once.height.as_tuple(), rtol=1e-5)
    assert twice.radius_residual_norm == pytest.approx(np.sqrt(2) * once.radius_residual_norm, rel=1e-5)
    assert twice.n_records == 2 * once.n_records
    assert twice.training_cells == once.training_cells


def test_trend_does_not_depend_on_fit_order(designs, groups):
    models = fit_grid(generate_grid(default_profile(), designs, groups, seed=32))
    reordered = models.model_copy(update={"fits": list(reversed(models.fits))})
    forward, backward = fit_param_trend(models), fit_param_trend(reordered)
    assert forward.designs == backward.designs
    for name, line in forward.trends.items():
        assert backward.trends[name].slope == pytest.approx(line.slope, rel=1e-9, abs=1e-12)
        assert backward.trends[name].intercept == pytest.approx(line.intercept, rel=1e-9, abs=1e-12)


def test_batch_fit_recovers_noise_free_curves(groups):
    profile = default_profile()
    design = DesignSpec(design_dimension=2.0)
    records = exact_records(profile, design, groups, copies=1)
    dose = np.array([r.params.dose for r in records])
    true_radius, true_height = profile.parameters_at(design)
    for kind, values, truth in (
        ("radius", [r.radius for r in records], true_radius),
        ("height", [r.height for r in records], true_height),
    ):
        rows = np.tile(values, (4, 1))
        fitted = fit_curve_batch(kind, dose, rows)
        assert fitted.shape == (4, 3)
        for row in fitted:
            np.testing.assert_allclose(row, truth.as_tuple(), rtol=1e-3)


def test_batch_fit_reaches_the_single_fit_residual(groups):
    grid = generate_grid(default_profile(), [DesignSpec(design_dimension=1.8)], groups, seed=33)
    records = list(grid.records)
    dose = np.array([r.params.dose for r in records])
    y = np.array([r.radius for r in records])
    _, single_norm = fit_curve("radius", dose, y)
    a, b, c = fit_curve_batch("radius", dose, y[None, :])[0]
    batch_norm = np.linalg.norm(a * np.sqrt(np.log(b * dose)) + c - y)
    assert batch_norm == pytest.approx(single_norm, rel=1e-4)


def test_batch_fit_flags_unfittable_rows_with_nan(groups):
    dose = np.array([p.dose for p in groups])
    rows = np.vstack([np.linspace(1.0, 1.2, dose.size), np.full(dose.size, np.nan)])
    fitted = fit_curve_batch("radius", dose, rows)
    assert np.all(np.isfinite(fitted[0]))
    assert np.all(np.isnan(fitted[1]))
