"""Shared fixtures: synthetic status profiles, small grids and CSV files."""

from pathlib import Path

import numpy as np
import pytest

from tpl_monitor.core.dataset import DatasetGrid, save_dataset
from tpl_monitor.core.models import DesignSpec, LinearTrend, MeasurementRecord, ProcessParams
from tpl_monitor.core.synthetic import (
    OffsetSpec,
    StatusProfile,
    default_profile,
    generate_grid,
    make_status_pair,
    standard_designs,
    default_status_pair,
    standard_parameter_groups,
)

SMALL_DESIGNS = [DesignSpec(design_dimension=d) for d in (1.6, 2.0, 2.4)]


@pytest.fixture
def groups():
    return standard_parameter_groups()


@pytest.fixture
def designs():
    return standard_designs()


@pytest.fixture
def small_designs():
    return list(SMALL_DESIGNS)


@pytest.fixture(scope="session")
def default_pair():
    return default_status_pair()


@pytest.fixture(scope="session")
def full_grids(default_pair):
    """Full 6 x 6 x 20 status pair plus an independent status-1 replicate."""
    profile1, profile2 = default_pair
    return {
        "status1": generate_grid(profile1, seed=101),
        "status2": generate_grid(profile2, seed=202),
        "replicate": generate_grid(profile1, seed=303),
    }


@pytest.fixture(scope="session")
def small_grids(default_pair):
    """3 designs x 6 groups x 20 samples per status."""
    profile1, profile2 = default_pair
    return {
        "status1": generate_grid(profile1, SMALL_DESIGNS, seed=11),
        "status2": generate_grid(profile2, SMALL_DESIGNS, seed=12),
        "replicate": generate_grid(profile1, SMALL_DESIGNS, seed=13),
    }


@pytest.fixture(scope="session")
def quiet_pair():
    """Status shift of about 20 SD in the offsets, for bootstrap-based checks."""
    base = default_profile().model_copy(update={"sd_radius": 0.004, "sd_height": 0.004, "rho": 0.5})
    offsets = OffsetSpec(intercept_shifts={"c_R": 0.08, "a_H": -0.06, "c_H": -0.08})
    return make_status_pair(base, offsets)


@pytest.fixture(scope="session")
def quiet_grids(quiet_pair):
    profile1, profile2 = quiet_pair
    designs = [DesignSpec(design_dimension=2.0)]
    return {
        "status1": generate_grid(profile1, designs, seed=21),
        "status2": generate_grid(profile2, designs, seed=22),
    }


def exact_records(profile: StatusProfile, design: DesignSpec, params, copies: int = 2):
    """Noise-free records sitting on the profile's model curves."""
    records = []
    for p in params:
        mean = profile.mean_at(design, p)
        records.extend(
            MeasurementRecord(design=design, params=p, radius=mean.radius_mean, height=mean.height_mean)
            for _ in range(copies)
        )
    return records


def correlated_cloud(mean, sd, rho, n, seed):
    rng = np.random.default_rng(seed)
    cov = np.array([[sd ** 2, rho * sd ** 2], [rho * sd ** 2, sd ** 2]])
    return rng.multivariate_normal(mean, cov, size=n)


def constant_trend(value: float) -> LinearTrend:
    return LinearTrend(slope=0.0, intercept=value)


@pytest.fixture
def write_grid(tmp_path):
    """Write a grid to a CSV under tmp_path and return the path."""

    def _write(grid: DatasetGrid, name: str) -> Path:
        return save_dataset(grid, tmp_path / name)

    return _write


@pytest.fixture
def one_cell():
    return DesignSpec(design_dimension=2.0), ProcessParams(laser_power=50.0, scan_rate=50.0)
