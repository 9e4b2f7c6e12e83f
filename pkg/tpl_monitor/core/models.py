"""Data models for measurement records, fitted models, test outcomes and verdicts."""

import math
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, computed_field, field_validator, model_validator

from .errors import ExtrapolationError

ModelKind = Literal["radius", "height"]
Feature = Literal["radius", "height", "both"]
Decision = Literal["unchanged", "changed"]

RADIUS_PARAMS: Tuple[str, str, str] = ("a_R", "b_R", "c_R")
HEIGHT_PARAMS: Tuple[str, str, str] = ("a_H", "b_H", "c_H")
ALL_PARAMS: Tuple[str, ...] = RADIUS_PARAMS + HEIGHT_PARAMS


def param_names(kind: ModelKind) -> Tuple[str, str, str]:
    """Coefficient names of the radius or height model."""
    return RADIUS_PARAMS if kind == "radius" else HEIGHT_PARAMS


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True)


class ProcessParams(_Frozen):
    """Laser power (% of the 50 mW reference) and scan rate (mm/s)."""

    laser_power: float = Field(gt=0, allow_inf_nan=False)
    scan_rate: float = Field(gt=0, allow_inf_nan=False)

    @model_validator(mode="after")
    def _dose_is_finite(self):
        if not math.isfinite(self.dose) or self.dose <= 0:
            raise ValueError(f"dose proxy LP^2/SR is not finite and positive for {self.label}")
        return self

    @property
    def dose(self) -> float:
        """Dose proxy LP^2 / SR."""
        return self.laser_power ** 2 / self.scan_rate

    @property
    def label(self) -> str:
        return f"LP{self.laser_power:g}/SR{self.scan_rate:g}"


class DesignSpec(_Frozen):
    """Target hemisphere radius in µm."""

    design_dimension: float = Field(gt=0, allow_inf_nan=False)

    @property
    def label(self) -> str:
        return f"D{self.design_dimension:g}"


class CellKey(_Frozen):
    """One (design, process-parameter) combination."""

    design: DesignSpec
    params: ProcessParams

    @property
    def label(self) -> str:
        return f"{self.design.label} {self.params.label}"


class MeasurementRecord(_Frozen):
    """One fabricated hemisphere with its extracted equivalent radius and average height."""

    design: DesignSpec
    params: ProcessParams
    radius: float = Field(gt=0, allow_inf_nan=False)
    height: float = Field(gt=0, allow_inf_nan=False)
    status_label: Optional[str] = None

    @property
    def key(self) -> CellKey:
        return CellKey(design=self.design, params=self.params)


# Hypothesis testing ---------------------------------------------------------

class TestOutcome(BaseModel):
    """Statistic, critical value and decision of one hypothesis test."""

    __test__ = False  # keep pytest from collecting this class

    test: str
    statistic: float
    critical_value: float
    p_value: Optional[float] = None
    reject_null: bool
    alpha: float = Field(gt=0, lt=1)
    dof: Dict[str, float] = Field(default_factory=dict)


class MeanVector2(_Frozen):
    """Mean (R, H) pair, or the predicted baseline mu0."""

    radius_mean: float
    height_mean: float

    @field_validator("radius_mean", "height_mean")
    @classmethod
    def _finite(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("mean vector components must be finite")
        return v

    def as_array(self) -> np.ndarray:
        return np.array([self.radius_mean, self.height_mean])


class MembershipDecision(BaseModel):
    """Whether a candidate point falls inside an empirical leave-one-out T^2 distribution."""

    candidate_t2: float
    threshold: float
    member: bool
    alpha: float
    reference_size: int


# Dimension models -----------------------------------------------------------

class RadiusModelParams(_Frozen):
    """Coefficients of R = a_R * sqrt(ln(b_R * LP^2/SR)) + c_R."""

    a_R: float
    b_R: float = Field(gt=0)
    c_R: float

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.a_R, self.b_R, self.c_R)


class HeightModelParams(_Frozen):
    """Coefficients of H = a_H * sqrt(sqrt(b_H * LP^2/SR) - 1) + c_H."""

    a_H: float
    b_H: float = Field(gt=0)
    c_H: float

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.a_H, self.b_H, self.c_H)


class DesignFit(BaseModel):
    """Radius and height models fitted to every parameter group of one design."""

    design: DesignSpec
    radius: RadiusModelParams
    height: HeightModelParams
    radius_residual_norm: float = Field(ge=0)
    height_residual_norm: float = Field(ge=0)
    training_cells: List[ProcessParams] = Field(min_length=1)
    n_records: int = Field(ge=1)

    def coefficients(self) -> Dict[str, float]:
        return dict(zip(ALL_PARAMS, self.radius.as_tuple() + self.height.as_tuple()))


class FittedModelSet(BaseModel):
    """Per-design fits, ordered by design dimension."""

    fits: List[DesignFit] = Field(min_length=1)

    @field_validator("fits")
    @classmethod
    def _sorted(cls, fits: List[DesignFit]) -> List[DesignFit]:
        return sorted(fits, key=lambda f: f.design.design_dimension)

    @property
    def designs(self) -> List[DesignSpec]:
        return [f.design for f in self.fits]


class LinearTrend(_Frozen):
    """parameter(D) = slope * D + intercept."""

    slope: float
    intercept: float
    residual_norm: float = Field(default=0.0, ge=0)

    def at(self, design_dimension: float) -> float:
        return self.slope * design_dimension + self.intercept


class ParamTrend(BaseModel):
    """Linear trends of all six coefficients against design dimension."""

    trends: Dict[str, LinearTrend]
    designs: List[float] = Field(min_length=2)

    @field_validator("trends")
    @classmethod
    def _all_six(cls, trends: Dict[str, LinearTrend]) -> Dict[str, LinearTrend]:
        missing = [name for name in ALL_PARAMS if name not in trends]
        if missing:
            raise ValueError(f"missing trends for {', '.join(missing)}")
        return trends

    def parameters_at(self, design: DesignSpec) -> Tuple[RadiusModelParams, HeightModelParams]:
        """Evaluate every trend at a design dimension."""
        values = {name: self.trends[name].at(design.design_dimension) for name in ALL_PARAMS}
        try:
            radius = RadiusModelParams(**{k: values[k] for k in RADIUS_PARAMS})
            height = HeightModelParams(**{k: values[k] for k in HEIGHT_PARAMS})
        except ValidationError as e:
            raise ExtrapolationError(
                f"trend parameters at {design.label} are infeasible: {e.errors()[0]['msg']}"
            ) from e
        return radius, height


# Monitoring -----------------------------------------------------------------

class MonitorVerdict(BaseModel):
    """Health decision of one monitoring method with its supporting evidence."""

    method: str
    decision: Decision
    cell: Optional[CellKey] = None
    outcomes: Dict[str, TestOutcome] = Field(default_factory=dict)
    evidence: Dict[str, Any] = Field(default_factory=dict)

    @property
    def changed(self) -> bool:
        return self.decision == "changed"


class BootstrapDistribution(BaseModel):
    """Refitted coefficient vectors, one per bootstrap iteration."""

    model: ModelKind
    design: Optional[DesignSpec] = None
    source_cells: List[ProcessParams] = Field(min_length=1)
    vectors: List[Tuple[float, float, float]] = Field(min_length=1)
    iterations: int = Field(ge=2)
    failed_iterations: int = Field(default=0, ge=0)
    samples_per_group: int = Field(ge=1)
    seed: int

    @model_validator(mode="after")
    def _vectors_feasible(self):
        floor = 1.0 / min(p.dose for p in self.source_cells)
        for vector in self.vectors:
            if not all(math.isfinite(v) for v in vector):
                raise ValueError("bootstrap vectors must be finite")
            if vector[1] <= floor:
                raise ValueError(f"bootstrap vector has infeasible b={vector[1]:.6g}")
        return self

    @property
    def parameter_names(self) -> Tuple[str, str, str]:
        return param_names(self.model)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.vectors, dtype=float)

    def mean(self) -> np.ndarray:
        return self.as_array().mean(axis=0)


class ThresholdInterval(_Frozen):
    """Acceptance interval [lower, upper] for one model coefficient."""

    parameter: str
    lower: float
    upper: float

    @model_validator(mode="after")
    def _ordered(self):
        if self.lower > self.upper:
            raise ValueError(f"{self.parameter}: lower limit {self.lower} exceeds upper limit {self.upper}")
        return self

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


class ThresholdFold(BaseModel):
    """Intervals learned with one known parameter group held out."""

    held_out: ProcessParams
    intervals: Dict[str, ThresholdInterval]
    widening: Dict[str, float]
    achieved_coverage: Dict[str, float]


class ThresholdSet(BaseModel):
    """Combined leave-one-out thresholds for the three coefficients of one model."""

    model: ModelKind
    design: Optional[DesignSpec] = None
    coverage: float
    combine: Literal["envelope", "mean"]
    intervals: Dict[str, ThresholdInterval]
    folds: List[ThresholdFold]


# Reporting ------------------------------------------------------------------

class AccuracyRow(BaseModel):
    """Rejection counts for one scenario; accuracy counts the decisions matching the scenario."""

    scenario: str
    expected_change: Optional[bool] = None
    rejections: int = Field(ge=0)
    acceptances: int = Field(ge=0)

    @computed_field
    @property
    def accuracy(self) -> Optional[float]:
        total = self.rejections + self.acceptances
        if total == 0 or self.expected_change is None:
            return None
        correct = self.rejections if self.expected_change else self.acceptances
        return 100.0 * correct / total


class AccuracyTable(BaseModel):
    title: str
    rows: List[AccuracyRow] = Field(default_factory=list)

    def row(self, scenario: str) -> AccuracyRow:
        for r in self.rows:
            if r.scenario == scenario:
                return r
        raise KeyError(scenario)


class CellSummary(BaseModel):
    """Sample count and per-feature mean/SD of one grid cell."""

    design_dimension: float
    laser_power: float
    scan_rate: float
    count: int
    radius_mean: float
    radius_sd: Optional[float] = None
    height_mean: float
    height_sd: Optional[float] = None


class ErrorSurface(BaseModel):
    """Type I / Type II error rates over (n_designs, n_params) training-subset sizes."""

    design_counts: List[int]
    param_counts: List[int]
    type1: List[List[float]]
    type2: List[List[float]]
    type1_se: List[List[float]]
    type2_se: List[List[float]]
    repetitions: int
    skipped: List[List[int]] = Field(default_factory=list)


class GridReport(BaseModel):
    """Per-cell verdicts of one method over a grid, with per-feature accuracy rows."""

    method: str
    verdicts: List[MonitorVerdict] = Field(default_factory=list)
    table: AccuracyTable
    skipped: Dict[str, str] = Field(default_factory=dict)


class StatusClassification(BaseModel):
    """Membership of a predicted mean vector in each status's sample cloud."""

    cell: CellKey
    predicted: MeanVector2
    memberships: Dict[str, MembershipDecision]

    @property
    def members(self) -> List[str]:
        return [status for status, m in self.memberships.items() if m.member]

    @property
    def ambiguous(self) -> bool:
        return len(self.members) != 1
