"""Run configuration: one YAML document holding every knob of a run.

Precedence is CLI flags > file > defaults. The effective configuration is
written next to each command's outputs so a run can be repeated exactly.
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from ..core.dataset import DEFAULT_KEY_TOLERANCE, ColumnSchema
from ..core.dimension_models import FitOptions
from ..core.errors import ArgumentError, DataError
from ..core.hypothesis import DEFAULT_CONDITION_CAP
from ..core.method3 import BootstrapOptions
from ..core.synthetic import STANDARD_DESIGNS, STANDARD_PARAMETER_GROUPS, OffsetSpec

logger = logging.getLogger(__name__)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class FitSection(_Section, FitOptions):
    pass


class TestsSection(_Section):
    __test__ = False  # keep pytest from collecting this class

    alpha: float = Field(default=0.10, gt=0, lt=1)
    standard_error_z: bool = False
    condition_cap: float = Field(default=DEFAULT_CONDITION_CAP, gt=1)


class BootstrapSection(_Section, BootstrapOptions):
    reference_iterations: int = Field(default=1000, ge=2)
    max_conditioning: float = Field(default=2.5, ge=1)

    def options(self) -> BootstrapOptions:
        return BootstrapOptions(**self.model_dump(exclude={"reference_iterations", "max_conditioning"}))


class ThresholdsSection(_Section):
    coverage: float = Field(default=0.95, ge=0, lt=1)
    combine: Literal["envelope", "mean"] = "envelope"
    widening_cap: float = Field(default=10.0, gt=0)
    vote_cap: int = Field(default=2, ge=0, le=6)


class MonteCarloSection(_Section):
    repetitions: int = Field(default=200, ge=1)
    null_trials: int = Field(default=10_000, ge=1)
    sample_sizes: List[int] = Field(default_factory=lambda: [3, 5, 10, 15, 20])
    design_counts: List[int] = Field(default_factory=lambda: [2, 3, 4, 5, 6])
    param_counts: List[int] = Field(default_factory=lambda: [3, 4, 5, 6])
    same_group_trials: int = Field(default=240, ge=1)
    unknown_group_trials: int = Field(default=240, ge=1)


class SimulationSection(_Section):
    preset: Literal["default", "custom"] = "default"
    designs: List[float] = Field(default_factory=lambda: list(STANDARD_DESIGNS))
    parameter_groups: List[Tuple[float, float]] = Field(default_factory=lambda: [tuple(p) for p in STANDARD_PARAMETER_GROUPS])
    n_per_cell: int = Field(default=20, ge=1)
    sd_radius: Optional[float] = Field(default=None, ge=0)
    sd_height: Optional[float] = Field(default=None, ge=0)
    rho: Optional[float] = Field(default=None, gt=-1, lt=1)
    offsets: Optional[OffsetSpec] = None

    @field_validator("designs", "parameter_groups")
    @classmethod
    def _non_empty(cls, v):
        if not v:
            raise ValueError("must not be empty")
        return v


class DataSection(_Section):
    columns: ColumnSchema = Field(default_factory=ColumnSchema)
    key_tolerance: float = Field(default=DEFAULT_KEY_TOLERANCE, ge=0)


class PathsSection(_Section):
    reference: Optional[str] = None
    query: Optional[str] = None
    out: Optional[str] = None


class RunConfig(_Section):
    """Every setting a command reads."""

    seed: int = Field(default=0, ge=0)
    workers: int = Field(default=1, ge=1)
    fit: FitSection = Field(default_factory=FitSection)
    tests: TestsSection = Field(default_factory=TestsSection)
    bootstrap: BootstrapSection = Field(default_factory=BootstrapSection)
    thresholds: ThresholdsSection = Field(default_factory=ThresholdsSection)
    monte_carlo: MonteCarloSection = Field(default_factory=MonteCarloSection)
    simulation: SimulationSection = Field(default_factory=SimulationSection)
    data: DataSection = Field(default_factory=DataSection)
    paths: PathsSection = Field(default_factory=PathsSection)

    def fit_options(self) -> FitOptions:
        return FitOptions(**self.fit.model_dump())


def _describe(error: ValidationError) -> str:
    first = error.errors()[0]
    where = ".".join(str(p) for p in first["loc"]) or "config"
    return f"{where}: {first['msg']}"


def _merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


class ConfigManager:
    """Manages YAML configuration loading and validation."""

    def __init__(self, config_path: Optional[Union[str, Path]] = None):
        self.config_path = Path(config_path) if config_path else None
        self.raw = self._load_config()

    def _load_config(self) -> Dict[str, Any]:
        """Load the YAML document; a missing default file means defaults."""
        if self.config_path is None:
            return {}
        if not self.config_path.exists():
            raise DataError(f"Configuration file not found: {self.config_path}")

        try:
            with open(self.config_path, "r", encoding="utf-8") as f:
                config = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise DataError(f"Invalid YAML format in {self.config_path}: {e}") from e

        if config is None:
            return {}
        if not isinstance(config, dict):
            raise DataError(f"{self.config_path}: top level must be a mapping")
        return config

    def build(self, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
        """File values over defaults, then ``overrides`` (dotted keys allowed) over both."""
        nested: Dict[str, Any] = {}
        for key, value in (overrides or {}).items():
            if value is None:
                continue
            target = nested
            *parents, leaf = key.split(".")
            for part in parents:
                target = target.setdefault(part, {})
            target[leaf] = value

        try:
            config = RunConfig.model_validate(_merge(self.raw, nested))
        except ValidationError as e:
            source = f" in {self.config_path}" if self.config_path else ""
            raise ArgumentError(f"invalid configuration{source}: {_describe(e)}") from e
        logger.debug(f"Effective configuration: {config.model_dump()}")
        return config


def save_config(config: RunConfig, path: Union[str, Path]) -> Path:
    """Write the effective configuration as YAML."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(config.model_dump(mode="json"), f, sort_keys=False, allow_unicode=True)
    return path
