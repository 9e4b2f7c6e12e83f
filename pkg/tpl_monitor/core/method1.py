"""Dimension monitoring: two-sample t-tests on same-cell samples from two machine statuses."""

import logging
from typing import List, Optional, Sequence

from .dataset import DatasetGrid
from .errors import ArgumentError, DegenerateVarianceError, MonitorError, NoOverlapError
from .hypothesis import two_sample_t
from .models import (
    AccuracyRow,
    AccuracyTable,
    CellKey,
    Feature,
    GridReport,
    MeasurementRecord,
    MonitorVerdict,
)
from ..utils.helpers import parallel_map

logger = logging.getLogger(__name__)

METHOD = "m1"
FEATURE_TITLES = {"radius": "Equivalent Radius", "height": "Average Height"}


def _features(feature: Feature) -> List[str]:
    if feature not in ("radius", "height", "both"):
        raise ArgumentError(f"feature must be radius, height or both, got {feature!r}")
    return ["radius", "height"] if feature == "both" else [feature]


def _values(records: Sequence[MeasurementRecord], feature: str) -> List[float]:
    return [r.radius if feature == "radius" else r.height for r in records]


def _common_key(reference: Sequence[MeasurementRecord], query: Sequence[MeasurementRecord]) -> Optional[CellKey]:
    keys = {r.key for r in reference} | {r.key for r in query}
    if len(keys) > 1:
        labels = ", ".join(sorted(k.label for k in keys))
        raise ArgumentError(f"reference and query must come from one cell, got {labels}")
    return next(iter(keys), None)


def monitor_cell_m1(
    reference: Sequence[MeasurementRecord],
    query: Sequence[MeasurementRecord],
    feature: Feature = "both",
    alpha: float = 0.10,
    cell: Optional[CellKey] = None,
) -> MonitorVerdict:
    """Changed iff the t-test rejects on any testable feature.

    A feature with zero pooled variance is listed under ``evidence["degenerate"]``
    and left out of the decision; only when every feature is degenerate does the
    cell fail.
    """
    if cell is None:
        cell = _common_key(reference, query)

    outcomes = {}
    degenerate = {}
    for f in _features(feature):
        try:
            outcomes[f] = two_sample_t(_values(reference, f), _values(query, f), alpha)
        except DegenerateVarianceError as e:
            degenerate[f] = str(e)
    if not outcomes:
        raise DegenerateVarianceError("no testable feature: " + ", ".join(degenerate) + " degenerate")
    changed = any(o.reject_null for o in outcomes.values())
    evidence = {"n_reference": len(reference), "n_query": len(query)}
    if degenerate:
        label = cell.label if cell else "cell"
        logger.warning(f"{label}: degenerate {sorted(degenerate)} left untested")
        evidence["degenerate"] = degenerate
    return MonitorVerdict(
        method=METHOD,
        decision="changed" if changed else "unchanged",
        cell=cell,
        outcomes=outcomes,
        evidence=evidence,
    )


def grid_report_m1(
    grid1: DatasetGrid,
    grid2: DatasetGrid,
    alpha: float = 0.10,
    expected_change: Optional[bool] = None,
    workers: int = 1,
) -> GridReport:
    """Both features tested on every cell the two grids share.

    The accuracy table counts rejections per feature; accuracy is filled in
    when the caller states whether the statuses differ.
    """
    shared = [(key, found) for key in grid1.keys if (found := grid2.find_key(key)) is not None]
    if not shared:
        raise NoOverlapError("the two grids share no (design, params) cell; use prediction-based monitoring")
    logger.info(f"Method 1: testing {len(shared)} shared cell(s) at alpha={alpha}")

    def run(pair):
        key, other = pair
        try:
            return monitor_cell_m1(grid1.cells[key], grid2.cells[other], "both", alpha, cell=key), None
        except MonitorError as e:
            return None, f"{type(e).__name__}: {e}"

    verdicts: List[MonitorVerdict] = []
    skipped = {}
    for (key, _), (verdict, problem) in zip(shared, parallel_map(run, shared, workers)):
        if verdict is None:
            logger.warning(f"Skipping {key.label}: {problem}")
            skipped[key.label] = problem
        else:
            verdicts.append(verdict)

    rows = []
    for feature, title in FEATURE_TITLES.items():
        tested = [v.outcomes[feature] for v in verdicts if feature in v.outcomes]
        rejections = sum(o.reject_null for o in tested)
        rows.append(
            AccuracyRow(
                scenario=title,
                expected_change=expected_change,
                rejections=rejections,
                acceptances=len(tested) - rejections,
            )
        )
    return GridReport(
        method=METHOD,
        verdicts=verdicts,
        table=AccuracyTable(title="Two-sample t-test accuracy", rows=rows),
        skipped=skipped,
    )
