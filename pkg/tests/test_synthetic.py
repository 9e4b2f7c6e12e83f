import numpy as np
import pytest

from tpl_monitor.core.errors import ModelDomainError
from tpl_monitor.core.models import DesignSpec, ProcessParams
from tpl_monitor.core.synthetic import (
    OffsetSpec,
    default_profile,
    generate_grid,
    make_status_pair,
)


def test_default_grid_has_720_records_per_status(default_pair):
    profile1, profile2 = default_pair
    for profile in (profile1, profile2):
        grid = generate_grid(profile, seed=0)
        assert len(grid) == 720
        assert len(grid.cells) == 36
        assert set(grid.counts.values()) == {20}
        assert grid.status_labels == [profile.name]


def test_same_seed_same_records(default_pair):
    profile1, _ = default_pair
    assert generate_grid(profile1, seed=5).records == generate_grid(profile1, seed=5).records
    assert generate_grid(profile1, seed=5).records != generate_grid(profile1, seed=6).records


def test_cell_means_and_correlation_follow_profile():
    profile = default_profile()
    design = DesignSpec(design_dimension=2.0)
    params = ProcessParams(laser_power=50.0, scan_rate=50.0)
    grid = generate_grid(profile, [design], [params], n_per_cell=4000, seed=3)
    values = np.array([[r.radius, r.height] for r in grid.records])
    mean = profile.mean_at(design, params)
    sd = [profile.sd_radius, profile.sd_height]
    np.testing.assert_allclose(values.mean(axis=0), mean.as_array(), atol=4 * max(sd) / np.sqrt(4000))
    np.testing.assert_allclose(values.std(axis=0, ddof=1), sd, rtol=0.05)
    assert np.corrcoef(values.T)[0, 1] == pytest.approx(0.94, abs=0.01)


def test_status_shift_is_the_same_in_every_design(default_pair, designs, groups):
    profile1, profile2 = default_pair

    def shifts(design):
        return [
            profile2.mean_at(design, p).as_array() - profile1.mean_at(design, p).as_array() for p in groups
        ]

    first = shifts(designs[0])
    for design in designs[1:]:
        np.testing.assert_allclose(shifts(design), first, atol=1e-12)


def test_status_shift_is_at_least_one_and_a_half_sd_in_every_cell(default_pair, designs, groups):
    profile1, profile2 = default_pair
    sd = np.array([profile1.sd_radius, profile1.sd_height])
    for design in designs:
        for p in groups:
            shift = profile2.mean_at(design, p).as_array() - profile1.mean_at(design, p).as_array()
            assert np.all(np.abs(shift) >= 1.5 * sd), f"{design.label} {p.label}: {shift / sd}"
            assert np.all(np.abs(shift) <= 5.0 * sd)


def test_end_doses_shift_alike(default_pair):
    profile1, profile2 = default_pair
    design = DesignSpec(design_dimension=2.2)
    ends = [ProcessParams(laser_power=50, scan_rate=40), ProcessParams(laser_power=50, scan_rate=60)]
    shifts = [profile2.mean_at(design, p).as_array() - profile1.mean_at(design, p).as_array() for p in ends]
    np.testing.assert_allclose(shifts[0], shifts[1], atol=1e-4)
    assert np.all(shifts[0] < 0)


def test_offsets_override_noise_model(default_pair):
    _, profile2 = default_pair
    assert profile2.name == "status-2"
    assert profile2.rho == 0.95
    assert profile2.sd_radius == default_profile().sd_radius


def test_infeasible_offset_is_rejected():
    offsets = OffsetSpec(intercept_shifts={"b_R": -0.02})
    with pytest.raises(ModelDomainError, match="status-2"):
        make_status_pair(default_profile(), offsets)


def test_unknown_offset_parameter_is_rejected():
    with pytest.raises(ValueError):
        OffsetSpec(intercept_shifts={"d_R": 1.0})
