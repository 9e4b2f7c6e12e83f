"""Synthetic process twin: ground-truth-known measurement grids for two machine statuses.

Each status holds linear trends of the six model coefficients in design
dimension plus a bivariate Gaussian noise model for (R, H). A second status
is the first with its trends offset, which produces the parallel-line
separation seen between healthy and degraded machines.
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator

from .dataset import DEFAULT_KEY_TOLERANCE, DatasetGrid
from .dimension_models import predict_height, predict_radius
from .errors import ArgumentError, ModelDomainError
from .models import (
    ALL_PARAMS,
    HEIGHT_PARAMS,
    RADIUS_PARAMS,
    DesignSpec,
    HeightModelParams,
    LinearTrend,
    MeanVector2,
    MeasurementRecord,
    ProcessParams,
    RadiusModelParams,
)

logger = logging.getLogger(__name__)

STANDARD_DESIGNS: Tuple[float, ...] = (1.6, 1.8, 2.0, 2.2, 2.4, 2.6)
STANDARD_PARAMETER_GROUPS: Tuple[Tuple[float, float], ...] = (
    (50.0, 40.0),
    (50.0, 60.0),
    (55.0, 60.0),
    (50.0, 55.0),
    (50.0, 50.0),
    (50.0, 45.0),
)


def standard_designs() -> List[DesignSpec]:
    return [DesignSpec(design_dimension=d) for d in STANDARD_DESIGNS]


def standard_parameter_groups() -> List[ProcessParams]:
    return [ProcessParams(laser_power=lp, scan_rate=sr) for lp, sr in STANDARD_PARAMETER_GROUPS]


class StatusProfile(BaseModel):
    """Generative truth for one machine status."""

    name: str = "status-1"
    trends: Dict[str, LinearTrend]
    sd_radius: float = Field(ge=0)
    sd_height: float = Field(ge=0)
    rho: float = Field(gt=-1, lt=1)

    @field_validator("trends")
    @classmethod
    def _all_six(cls, trends: Dict[str, LinearTrend]) -> Dict[str, LinearTrend]:
        missing = [name for name in ALL_PARAMS if name not in trends]
        if missing:
            raise ValueError(f"missing generative trends for {', '.join(missing)}")
        return trends

    def parameters_at(self, design: DesignSpec) -> Tuple[RadiusModelParams, HeightModelParams]:
        values = {name: self.trends[name].at(design.design_dimension) for name in ALL_PARAMS}
        try:
            radius = RadiusModelParams(**{k: values[k] for k in RADIUS_PARAMS})
            height = HeightModelParams(**{k: values[k] for k in HEIGHT_PARAMS})
        except ValueError as e:
            raise ModelDomainError(f"{self.name}: infeasible coefficients at {design.label}: {e}") from e
        return radius, height

    def mean_at(self, design: DesignSpec, params: ProcessParams) -> MeanVector2:
        radius, height = self.parameters_at(design)
        try:
            return MeanVector2(
                radius_mean=predict_radius(radius, params),
                height_mean=predict_height(height, params),
            )
        except ModelDomainError as e:
            raise ModelDomainError(f"{self.name}: cell {design.label} {params.label} is infeasible: {e}") from e

    def covariance(self) -> np.ndarray:
        cross = self.rho * self.sd_radius * self.sd_height
        return np.array([[self.sd_radius ** 2, cross], [cross, self.sd_height ** 2]])

    def check_feasible(self, designs: Sequence[DesignSpec], params: Sequence[ProcessParams]) -> None:
        for design in designs:
            for p in params:
                self.mean_at(design, p)


class OffsetSpec(BaseModel):
    """Shift applied to a base profile to obtain a second machine status."""

    intercept_shifts: Dict[str, float] = Field(default_factory=dict)
    slope_shifts: Dict[str, float] = Field(default_factory=dict)
    rho: Optional[float] = Field(default=None, gt=-1, lt=1)
    sd_radius: Optional[float] = Field(default=None, ge=0)
    sd_height: Optional[float] = Field(default=None, ge=0)

    @field_validator("intercept_shifts", "slope_shifts")
    @classmethod
    def _known(cls, shifts: Dict[str, float]) -> Dict[str, float]:
        unknown = [name for name in shifts if name not in ALL_PARAMS]
        if unknown:
            raise ValueError(f"unknown coefficient(s): {', '.join(unknown)}")
        return shifts


def default_profile() -> StatusProfile:
    """Healthy-machine profile calibrated to micron-scale hemispheres on the standard grid.

    Amplitudes and dose scales are flat in design dimension; only the
    offsets c_R and c_H grow with the design.
    """
    return StatusProfile(
        name="status-1",
        trends={
            "a_R": LinearTrend(slope=0.0, intercept=0.70),
            "b_R": LinearTrend(slope=0.0, intercept=0.0280),
            "c_R": LinearTrend(slope=0.60, intercept=-0.05),
            "a_H": LinearTrend(slope=0.0, intercept=1.00),
            "b_H": LinearTrend(slope=0.0, intercept=0.0315),
            "c_H": LinearTrend(slope=0.20, intercept=0.30),
        },
        sd_radius=0.001,
        sd_height=0.001,
        rho=0.94,
    )


# Moves each model along its least-determined coefficient direction. Per-cell
# shifts in SD units, doses ascending: R -1.8, 3.9, 3.9, 3.8, 1.7, -1.8 and
# H -2.0, 3.5, 4.2, 4.1, 2.1, -2.0.
DEFAULT_OFFSETS = OffsetSpec(
    intercept_shifts={
        "a_R": -0.0873,
        "b_R": -0.0018,
        "c_R": 0.0916,
        "a_H": -0.1245,
        "b_H": -0.0038,
        "c_H": 0.1410,
    },
    rho=0.95,
)


def make_status_pair(
    base: StatusProfile,
    offsets: OffsetSpec,
    designs: Optional[Sequence[DesignSpec]] = None,
    params: Optional[Sequence[ProcessParams]] = None,
) -> Tuple[StatusProfile, StatusProfile]:
    """(base, base with trends offset). Both must be feasible on the given grid."""
    designs = list(designs) if designs is not None else standard_designs()
    params = list(params) if params is not None else standard_parameter_groups()

    trends = {
        name: LinearTrend(
            slope=trend.slope + offsets.slope_shifts.get(name, 0.0),
            intercept=trend.intercept + offsets.intercept_shifts.get(name, 0.0),
        )
        for name, trend in base.trends.items()
    }
    shifted = StatusProfile(
        name="status-2" if base.name != "status-2" else "status-2b",
        trends=trends,
        sd_radius=base.sd_radius if offsets.sd_radius is None else offsets.sd_radius,
        sd_height=base.sd_height if offsets.sd_height is None else offsets.sd_height,
        rho=base.rho if offsets.rho is None else offsets.rho,
    )
    base.check_feasible(designs, params)
    shifted.check_feasible(designs, params)
    return base, shifted


def default_status_pair() -> Tuple[StatusProfile, StatusProfile]:
    return make_status_pair(default_profile(), DEFAULT_OFFSETS)


def generate_grid(
    profile: StatusProfile,
    designs: Optional[Sequence[DesignSpec]] = None,
    params: Optional[Sequence[ProcessParams]] = None,
    n_per_cell: int = 20,
    seed: int = 0,
    status_label: Optional[str] = None,
    key_tolerance: float = DEFAULT_KEY_TOLERANCE,
) -> DatasetGrid:
    """Draw n_per_cell records per cell: model mean plus correlated Gaussian noise.

    Cell c uses a Philox stream keyed by (seed, c), so every cell's draws are
    independent of generation order.
    """
    if n_per_cell < 1:
        raise ArgumentError(f"n_per_cell must be >= 1, got {n_per_cell}")
    designs = list(designs) if designs is not None else standard_designs()
    params = list(params) if params is not None else standard_parameter_groups()
    label = status_label if status_label is not None else profile.name

    chol = np.array([
        [profile.sd_radius, 0.0],
        [profile.rho * profile.sd_height, profile.sd_height * np.sqrt(1.0 - profile.rho ** 2)],
    ])

    records: List[MeasurementRecord] = []
    cell_index = 0
    for design in designs:
        for p in params:
            mean = profile.mean_at(design, p).as_array()
            rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, cell_index])))
            draws = mean + rng.standard_normal((n_per_cell, 2)) @ chol.T
            for radius, height in draws:
                records.append(
                    MeasurementRecord(
                        design=design,
                        params=p,
                        radius=float(radius),
                        height=float(height),
                        status_label=label,
                    )
                )
            cell_index += 1

    logger.info(f"Generated {len(records)} records for {profile.name} ({len(designs)}x{len(params)} cells)")
    return DatasetGrid(records, key_tolerance)
