import time

import numpy as np
import pytest

from tpl_monitor.core.dimension_models import FitOptions, fit_curve
from tpl_monitor.core.errors import (
    ArgumentError,
    IncompleteThresholdError,
    InsufficientDataError,
    ThresholdFailureError,
)
from tpl_monitor.core.evaluation import evaluate_m3_same_group, evaluate_m3_unknown_group, same_group_trials
from tpl_monitor.core.method3 import (
    BootstrapOptions,
    bootstrap_params,
    combine_intervals,
    curvature_scale,
    evaluation_cells,
    load_model_json,
    load_model_list,
    loo_thresholds,
    monitor_unknown_group_m3,
    required_widening,
    save_model_json,
    test_same_group_m3,
)
from tpl_monitor.core.models import (
    ALL_PARAMS,
    BootstrapDistribution,
    DesignSpec,
    ProcessParams,
    ThresholdInterval,
)
from tpl_monitor.core.synthetic import default_status_pair, generate_grid, standard_designs

from conftest import exact_records

FAST_FIT = FitOptions(n_starts=4)
DESIGN = DesignSpec(design_dimension=2.0)


def cells_of(grid, params):
    return {p: grid.cell(DESIGN, p) for p in params}


def test_bootstrap_is_reproducible_and_seed_dependent(quiet_grids, groups):
    cells = cells_of(quiet_grids["status1"], groups[:3])
    first = bootstrap_params(cells, iterations=8, seed=1, fit_options=FAST_FIT)
    assert first == bootstrap_params(cells, iterations=8, seed=1, fit_options=FAST_FIT, workers=3)
    assert first.vectors != bootstrap_params(cells, iterations=8, seed=2, fit_options=FAST_FIT).vectors
    assert len(first.vectors) == 8
    assert first.design == DESIGN
    assert first.failed_iterations == 0


def test_bootstrap_accepts_record_lists(quiet_grids, groups):
    cells = cells_of(quiet_grids["status1"], groups[:3])
    from_mapping = bootstrap_params(cells, iterations=4, model="height", seed=3, fit_options=FAST_FIT)
    from_lists = bootstrap_params(list(cells.values()), iterations=4, model="height", seed=3, fit_options=FAST_FIT)
    assert from_mapping == from_lists


def test_bootstrap_preconditions(quiet_grids, groups, default_pair):
    grid = quiet_grids["status1"]
    with pytest.raises(InsufficientDataError):
        bootstrap_params(cells_of(grid, groups[:2]), iterations=4)
    with pytest.raises(InsufficientDataError):
        bootstrap_params(cells_of(grid, groups[:3]), samples_per_group=21, iterations=4)
    with pytest.raises(ArgumentError):
        bootstrap_params(cells_of(grid, groups[:3]), iterations=1)
    with pytest.raises(ArgumentError):
        bootstrap_params(cells_of(grid, groups[:3]), iterations=4, model="width")

    other = generate_grid(default_pair[0], [DesignSpec(design_dimension=1.6)], groups[:1], seed=4)
    mixed = cells_of(grid, groups[1:3])
    mixed[groups[0]] = other.records
    with pytest.raises(ArgumentError):
        bootstrap_params(mixed, iterations=4)


def test_same_group_detects_large_status_change(quiet_grids, groups):
    combo = groups[:3]
    reference = bootstrap_params(cells_of(quiet_grids["status1"], combo), iterations=60, seed=10, fit_options=FAST_FIT)
    changed = bootstrap_params(cells_of(quiet_grids["status2"], combo), iterations=30, seed=11, fit_options=FAST_FIT)
    verdict = test_same_group_m3(reference, changed, 0.10)
    assert verdict.method == "m3-same"
    assert verdict.changed
    assert verdict.evidence["model"] == "radius"


def test_same_group_rejects_incompatible_distributions(quiet_grids, groups):
    grid = quiet_grids["status1"]
    radius = bootstrap_params(cells_of(grid, groups[:3]), iterations=4, seed=1, fit_options=FAST_FIT)
    height = bootstrap_params(cells_of(grid, groups[:3]), iterations=4, model="height", seed=1, fit_options=FAST_FIT)
    elsewhere = bootstrap_params(cells_of(grid, groups[1:4]), iterations=4, seed=1, fit_options=FAST_FIT)
    with pytest.raises(ArgumentError):
        test_same_group_m3(radius, height)
    with pytest.raises(ArgumentError):
        test_same_group_m3(radius, elsewhere)


def test_required_widening():
    values = np.array([1.0, 3.0, 0.0, 2.0])
    np.testing.assert_allclose(required_widening(values, 2.0, 1.0, 0.5), [1.0, 2.0, 2.0, 0.0])
    assert np.isinf(required_widening(np.array([5.0]), 2.0, 1.0, 0.0)[0])


def test_combine_intervals():
    intervals = [
        ThresholdInterval(parameter="a_R", lower=0.0, upper=1.0),
        ThresholdInterval(parameter="a_R", lower=-1.0, upper=0.5),
    ]
    envelope = combine_intervals("a_R", intervals, "envelope")
    assert (envelope.lower, envelope.upper) == (-1.0, 1.0)
    mean = combine_intervals("a_R", intervals, "mean")
    assert (mean.lower, mean.upper) == (-0.5, 0.75)
    with pytest.raises(ArgumentError):
        combine_intervals("a_R", intervals, "median")
    with pytest.raises(ArgumentError):
        combine_intervals("a_R", [])


def test_curvature_scale_prefers_spread_doses():
    assert curvature_scale([41.67, 50.0, 62.5]) < curvature_scale([45.45, 50.0, 50.42])
    assert curvature_scale([50.0, 50.0, 62.5]) == float("inf")
    # one divided-difference weight per dose: 1 / (1 * 2), 1 / (1 * 1), 1 / (2 * 1)
    assert curvature_scale([0.0, 1.0, 2.0]) == pytest.approx(np.sqrt(0.25 + 1.0 + 0.25))


def test_evaluation_cells_pick_best_conditioned_companions(quiet_grids, groups):
    cells = cells_of(quiet_grids["status1"], groups)
    target = ProcessParams(laser_power=50.0, scan_rate=50.0)
    chosen = list(evaluation_cells(target, cells))
    # doses 41.7 and 62.5 bracket 50.0 most widely
    assert chosen[0] == target
    assert set(chosen[1:]) == {ProcessParams(laser_power=50.0, scan_rate=60.0), ProcessParams(laser_power=50.0, scan_rate=40.0)}


def test_loo_thresholds_cover_each_held_out_group(quiet_grids, groups):
    known = cells_of(quiet_grids["status1"], groups[:5])
    thresholds = loo_thresholds(
        known,
        coverage=0.9,
        model="height",
        seed=4,
        widening_cap=1e6,
        bootstrap=BootstrapOptions(iterations=20),
        fit_options=FAST_FIT,
    )
    assert set(thresholds.intervals) == {"a_H", "b_H", "c_H"}
    assert len(thresholds.folds) == 5
    for fold in thresholds.folds:
        for name, interval in fold.intervals.items():
            assert fold.achieved_coverage[name] >= 0.9
            combined = thresholds.intervals[name]
            assert combined.lower <= interval.lower and interval.upper <= combined.upper


def test_loo_thresholds_fail_beyond_widening_cap(quiet_grids, groups):
    known = cells_of(quiet_grids["status1"], groups[:4])
    with pytest.raises(ThresholdFailureError):
        loo_thresholds(known, widening_cap=1e-9, bootstrap=BootstrapOptions(iterations=10), fit_options=FAST_FIT)


def test_loo_thresholds_need_four_groups(quiet_grids, groups):
    with pytest.raises(InsufficientDataError):
        loo_thresholds(cells_of(quiet_grids["status1"], groups[:3]))


def manual_distribution(model, vectors):
    cells = [ProcessParams(laser_power=50.0, scan_rate=sr) for sr in (40.0, 50.0, 60.0)]
    return BootstrapDistribution(
        model=model, design=DESIGN, source_cells=cells, vectors=vectors, iterations=len(vectors), samples_per_group=3, seed=0
    )


@pytest.fixture
def query_pair():
    radius = manual_distribution("radius", [(0.70, 0.030, 1.10), (0.72, 0.032, 1.12)])
    height = manual_distribution("height", [(1.00, 0.034, 0.70), (1.02, 0.036, 0.72)])
    return radius, height


def intervals_around(means, excluded=()):
    result = {}
    for name, value in means.items():
        if name in excluded:
            result[name] = ThresholdInterval(parameter=name, lower=value + 1.0, upper=value + 2.0)
        else:
            result[name] = ThresholdInterval(parameter=name, lower=value - 0.1, upper=value + 0.1)
    return result


def query_means(radius, height):
    return dict(zip(ALL_PARAMS, np.concatenate([radius.mean(), height.mean()])))


@pytest.mark.parametrize("rejected,changed", [(0, False), (2, False), (3, True), (6, True)])
def test_majority_vote(query_pair, rejected, changed):
    radius, height = query_pair
    thresholds = intervals_around(query_means(radius, height), ALL_PARAMS[:rejected])
    verdict = monitor_unknown_group_m3(thresholds, radius, height, vote_cap=2)
    assert verdict.evidence["rejections"] == rejected
    assert verdict.changed is changed


def test_missing_interval_is_incomplete(query_pair):
    radius, height = query_pair
    thresholds = intervals_around(query_means(radius, height))
    del thresholds["b_H"]
    with pytest.raises(IncompleteThresholdError, match="b_H"):
        monitor_unknown_group_m3(thresholds, radius, height)


def test_query_distributions_must_be_radius_then_height(query_pair):
    radius, height = query_pair
    thresholds = intervals_around(query_means(radius, height))
    with pytest.raises(ArgumentError):
        monitor_unknown_group_m3(thresholds, height, radius)


def test_distribution_json_reloads(tmp_path, query_pair):
    radius, _ = query_pair
    path = save_model_json(radius, tmp_path / "radius.json")
    assert load_model_json(BootstrapDistribution, path) == radius


def test_same_group_trial_catalogue(small_grids):
    trials = same_group_trials(small_grids["status1"], small_grids["status2"])
    # 9 of the C(6, 3) triples per design resolve curvature within 2.5x of the best
    assert len(trials) == 27
    assert len(same_group_trials(small_grids["status1"], small_grids["status2"], float("inf"))) == 60


def test_envelope_grows_as_folds_are_added():
    rng = np.random.default_rng(7)
    intervals = []
    previous = None
    for _ in range(6):
        centre = rng.normal()
        intervals.append(ThresholdInterval(parameter="c_R", lower=centre - rng.uniform(0.1, 1), upper=centre + rng.uniform(0.1, 1)))
        envelope = combine_intervals("c_R", intervals, "envelope")
        for interval in intervals:
            assert envelope.lower <= interval.lower and interval.upper <= envelope.upper
        if previous is not None:
            assert envelope.lower <= previous.lower and previous.upper <= envelope.upper
        previous = envelope


def test_more_excluded_coefficients_never_lower_the_vote(query_pair):
    radius, height = query_pair
    means = query_means(radius, height)
    counts = []
    for rejected in range(len(ALL_PARAMS) + 1):
        verdict = monitor_unknown_group_m3(intervals_around(means, ALL_PARAMS[:rejected]), radius, height)
        counts.append(verdict.evidence["rejections"])
    assert counts == sorted(counts)
    thresholds = intervals_around(means, ALL_PARAMS[:4])
    decisions = [monitor_unknown_group_m3(thresholds, radius, height, vote_cap=cap).changed for cap in range(7)]
    # a looser cap can only turn "changed" into "unchanged"
    assert decisions == sorted(decisions, reverse=True)


@pytest.mark.parametrize("model", ["radius", "height"])
def test_bootstrap_of_noise_free_cells_returns_the_true_coefficients(quiet_pair, groups, model):
    profile = quiet_pair[0]
    records = exact_records(profile, DESIGN, groups[:3], copies=3)
    dist = bootstrap_params([records], iterations=5, model=model, seed=9)
    truth = profile.parameters_at(DESIGN)[0 if model == "radius" else 1].as_tuple()
    assert dist.failed_iterations == 0
    for vector in dist.vectors:
        np.testing.assert_allclose(vector, truth, rtol=1e-3)


def test_truth_lies_within_three_bootstrap_standard_errors(quiet_pair, quiet_grids, groups):
    profile = quiet_pair[0]
    cells = cells_of(quiet_grids["status1"], groups[:3])
    dist = bootstrap_params(cells, samples_per_group=20, iterations=300, seed=12)
    spread = dist.as_array().std(axis=0, ddof=1)
    records = [r for recs in cells.values() for r in recs]
    refit, _ = fit_curve("radius", np.array([r.params.dose for r in records]), np.array([r.radius for r in records]))
    truth = np.array(profile.parameters_at(DESIGN)[0].as_tuple())
    assert np.all(np.abs(np.array(refit) - truth) <= 3.0 * spread)


def test_distribution_lists_round_trip(tmp_path, query_pair):
    path = save_model_json(list(query_pair), tmp_path / "pair.json")
    assert load_model_list(BootstrapDistribution, path) == list(query_pair)


@pytest.mark.slow
def test_same_group_accuracy_on_default_twin():
    profile1, profile2 = default_status_pair()
    status1 = generate_grid(profile1, standard_designs(), seed=61)
    status2 = generate_grid(profile2, standard_designs(), seed=62)
    tables = evaluate_m3_same_group(status1, status2, alpha=0.05, reference_iterations=1000, trials=240, seed=7)
    for table in tables.values():
        same, other = table.row("Same Status"), table.row("Different Status")
        assert same.rejections + same.acceptances >= 120
        assert same.accuracy >= 90.0
        assert other.accuracy >= 95.0


@pytest.mark.slow
def test_unknown_group_accuracy_on_default_twin():
    profile1, profile2 = default_status_pair()
    status1 = generate_grid(profile1, standard_designs(), seed=71)
    status2 = generate_grid(profile2, standard_designs(), seed=72)
    started = time.perf_counter()
    result = evaluate_m3_unknown_group(status1, status2, trials=240, seed=8)
    elapsed = time.perf_counter() - started
    same, other = result.table.row("Same Status"), result.table.row("Different Status")
    assert same.rejections + same.acceptances >= 200
    assert same.accuracy >= 75.0
    assert other.accuracy >= 75.0
    assert all(0 <= count <= 6 for count in result.rejection_counts["Same Status"])
    assert elapsed < 15 * 60
