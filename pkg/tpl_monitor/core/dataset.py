"""Measurement dataset ingestion, grouping into (design, params) cells, and CSV emission."""

import logging
from pathlib import Path
from types import MappingProxyType
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from .errors import DataError, EmptyDatasetError, RowError, SchemaError
from .models import CellKey, CellSummary, DesignSpec, MeasurementRecord, ProcessParams

logger = logging.getLogger(__name__)

DEFAULT_KEY_TOLERANCE = 1e-9


class ColumnSchema(BaseModel):
    """CSV column names for each record field."""

    design: str = "design"
    laser_power: str = "laser_power"
    scan_rate: str = "scan_rate"
    radius: str = "radius"
    height: str = "height"
    status: Optional[str] = "status"

    def required(self) -> List[str]:
        return [self.design, self.laser_power, self.scan_rate, self.radius, self.height]


def _keys_close(a: CellKey, b: CellKey, tol: float) -> bool:
    return (
        abs(a.design.design_dimension - b.design.design_dimension) <= tol
        and abs(a.params.laser_power - b.params.laser_power) <= tol
        and abs(a.params.scan_rate - b.params.scan_rate) <= tol
    )


def _sort_key(key: CellKey) -> Tuple[float, float, float]:
    return (key.design.design_dimension, key.params.laser_power, key.params.scan_rate)


class DatasetGrid:
    """Records grouped by (design, params) cell. Immutable after construction."""

    def __init__(self, records: Iterable[MeasurementRecord], key_tolerance: float = DEFAULT_KEY_TOLERANCE):
        self.key_tolerance = key_tolerance
        canonical: List[CellKey] = []
        grouped: Dict[CellKey, List[MeasurementRecord]] = {}
        kept: List[MeasurementRecord] = []

        for record in records:
            key = record.key
            match = grouped.get(key)
            if match is None:
                for existing in canonical:
                    if _keys_close(existing, key, key_tolerance):
                        key = existing
                        record = record.model_copy(update={"design": key.design, "params": key.params})
                        break
                else:
                    canonical.append(key)
                    grouped[key] = []
            grouped[key].append(record)
            kept.append(record)

        self._records: Tuple[MeasurementRecord, ...] = tuple(kept)
        self._cells: Mapping[CellKey, Tuple[MeasurementRecord, ...]] = MappingProxyType(
            {key: tuple(grouped[key]) for key in sorted(grouped, key=_sort_key)}
        )

    def __len__(self) -> int:
        return len(self._records)

    def __repr__(self) -> str:
        return f"DatasetGrid({len(self._records)} records, {len(self._cells)} cells)"

    @property
    def records(self) -> Tuple[MeasurementRecord, ...]:
        return self._records

    @property
    def cells(self) -> Mapping[CellKey, Tuple[MeasurementRecord, ...]]:
        return self._cells

    @property
    def keys(self) -> List[CellKey]:
        return list(self._cells)

    @property
    def counts(self) -> Dict[CellKey, int]:
        return {key: len(recs) for key, recs in self._cells.items()}

    @property
    def designs(self) -> List[DesignSpec]:
        seen: Dict[DesignSpec, None] = {}
        for key in self._cells:
            seen.setdefault(key.design, None)
        return list(seen)

    @property
    def param_groups(self) -> List[ProcessParams]:
        groups = {key.params for key in self._cells}
        return sorted(groups, key=lambda p: (p.laser_power, p.scan_rate))

    @property
    def status_labels(self) -> List[str]:
        return sorted({r.status_label for r in self._records if r.status_label})

    def find_key(self, key: CellKey) -> Optional[CellKey]:
        """The stored key equal to ``key`` within the grid's tolerance, if any."""
        if key in self._cells:
            return key
        for existing in self._cells:
            if _keys_close(existing, key, self.key_tolerance):
                return existing
        return None

    def cell(self, design: DesignSpec, params: ProcessParams) -> List[MeasurementRecord]:
        found = self.find_key(CellKey(design=design, params=params))
        return list(self._cells[found]) if found is not None else []

    def groups_for(self, design: DesignSpec) -> List[ProcessParams]:
        return [key.params for key in self._cells if key.design == design]

    def without(self, key: CellKey) -> "DatasetGrid":
        """A grid with every record of one cell removed."""
        found = self.find_key(key)
        if found is None:
            return self
        return DatasetGrid((r for r in self._records if r.key != found), self.key_tolerance)

    def subset(
        self,
        designs: Optional[Sequence[DesignSpec]] = None,
        params: Optional[Sequence[ProcessParams]] = None,
    ) -> "DatasetGrid":
        design_set = set(designs) if designs is not None else None
        param_set = set(params) if params is not None else None
        return DatasetGrid(
            (
                r
                for r in self._records
                if (design_set is None or r.design in design_set) and (param_set is None or r.params in param_set)
            ),
            self.key_tolerance,
        )


def cell(grid: DatasetGrid, design: DesignSpec, params: ProcessParams) -> List[MeasurementRecord]:
    """All records of one (design, params) cell; empty for an unseen key."""
    return grid.cell(design, params)


def load_dataset(
    path: Union[str, Path],
    schema: Optional[ColumnSchema] = None,
    key_tolerance: float = DEFAULT_KEY_TOLERANCE,
) -> DatasetGrid:
    """Read a measurement CSV (header row required) into a validated grid."""
    schema = schema or ColumnSchema()
    path = Path(path)
    if not path.is_file():
        raise DataError(f"dataset file not found: {path}")

    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError as e:
        raise EmptyDatasetError(f"dataset file is empty: {path}") from e

    missing = [col for col in schema.required() if col not in frame.columns]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
    if frame.empty:
        raise EmptyDatasetError(f"dataset file has a header but no records: {path}")

    has_status = bool(schema.status) and schema.status in frame.columns
    columns = {name: frame[col].tolist() for name, col in (
        ("design", schema.design),
        ("laser_power", schema.laser_power),
        ("scan_rate", schema.scan_rate),
        ("radius", schema.radius),
        ("height", schema.height),
    )}
    statuses = frame[schema.status].tolist() if has_status else [""] * len(frame)

    records: List[MeasurementRecord] = []
    problems: List[Tuple[int, str]] = []
    for i in range(len(frame)):
        line = i + 2
        try:
            values = {name: float(columns[name][i]) for name in columns}
        except ValueError:
            bad = [name for name in columns if not _parses(columns[name][i])]
            problems.append((line, f"unparseable number in {', '.join(bad)}"))
            continue
        try:
            records.append(
                MeasurementRecord(
                    design=DesignSpec(design_dimension=values["design"]),
                    params=ProcessParams(laser_power=values["laser_power"], scan_rate=values["scan_rate"]),
                    radius=values["radius"],
                    height=values["height"],
                    status_label=statuses[i].strip() or None,
                )
            )
        except ValidationError as e:
            fields = ", ".join(".".join(str(p) for p in err["loc"]) or "record" for err in e.errors())
            problems.append((line, f"invalid value in {fields}: {e.errors()[0]['msg']}"))

    if problems:
        raise RowError(problems)

    grid = DatasetGrid(records, key_tolerance)
    logger.info(f"Loaded {len(grid)} records in {len(grid.cells)} cells from {path}")
    return grid


def _parses(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def save_dataset(
    records: Union[DatasetGrid, Iterable[MeasurementRecord]],
    path: Union[str, Path],
    schema: Optional[ColumnSchema] = None,
) -> Path:
    """Write records as CSV with shortest round-trip float text."""
    schema = schema or ColumnSchema()
    rows = list(records.records if isinstance(records, DatasetGrid) else records)
    data = {
        schema.design: [repr(r.design.design_dimension) for r in rows],
        schema.laser_power: [repr(r.params.laser_power) for r in rows],
        schema.scan_rate: [repr(r.params.scan_rate) for r in rows],
        schema.radius: [repr(r.radius) for r in rows],
        schema.height: [repr(r.height) for r in rows],
    }
    if schema.status:
        data[schema.status] = [r.status_label or "" for r in rows]

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(data).to_csv(path, index=False, lineterminator="\n")
    logger.info(f"Saved {len(rows)} records to {path}")
    return path


def summarize_grid(grid: DatasetGrid) -> List[CellSummary]:
    """Per-cell counts and mean/SD of R and H, ordered by cell key."""
    summaries = []
    for key, recs in grid.cells.items():
        radius = np.array([r.radius for r in recs])
        height = np.array([r.height for r in recs])
        n = len(recs)
        summaries.append(
            CellSummary(
                design_dimension=key.design.design_dimension,
                laser_power=key.params.laser_power,
                scan_rate=key.params.scan_rate,
                count=n,
                radius_mean=float(radius.mean()),
                radius_sd=float(radius.std(ddof=1)) if n > 1 else None,
                height_mean=float(height.mean()),
                height_sd=float(height.std(ddof=1)) if n > 1 else None,
            )
        )
    return summaries
