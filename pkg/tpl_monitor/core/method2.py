"""Prediction-based monitoring for cells absent from the reference grid.

The reference status is modelled per design, the six coefficients are
regressed on design dimension, and the resulting baseline (R, H) for the
query cell is tested with a one-sample Z-test per feature or a one-sample
Hotelling's T^2 on the (R, H) pairs.
"""

import logging
import threading
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .dataset import DatasetGrid
from .dimension_models import FitOptions, fit_models, fit_param_trend, load_model_set, predict_for_new_cell
from .errors import ArgumentError, CoverageError, ModelDomainError, NumericError
from .hypothesis import DEFAULT_CONDITION_CAP, empirical_t2_membership, hotelling_t2_one_sample, one_sample_z
from .models import (
    CellKey,
    DesignFit,
    DesignSpec,
    ErrorSurface,
    Feature,
    FittedModelSet,
    MeanVector2,
    MeasurementRecord,
    MonitorVerdict,
    ParamTrend,
    ProcessParams,
    StatusClassification,
)
from ..utils.helpers import parallel_map
from ..utils.validators import validate_count, validate_counts

logger = logging.getLogger(__name__)

KEY_TOLERANCE = 1e-9


def _same_key(a: CellKey, b: CellKey) -> bool:
    return (
        abs(a.design.design_dimension - b.design.design_dimension) <= KEY_TOLERANCE
        and abs(a.params.laser_power - b.params.laser_power) <= KEY_TOLERANCE
        and abs(a.params.scan_rate - b.params.scan_rate) <= KEY_TOLERANCE
    )


def _check_query(query: Sequence[MeasurementRecord], cell_key: CellKey) -> None:
    stray = sorted({r.key.label for r in query if not _same_key(r.key, cell_key)})
    if stray:
        raise ArgumentError(f"query records for {cell_key.label} include other cells: {', '.join(stray)}")


class PredictionMonitor:
    """Reference-status models with leave-one-cell-out prediction.

    Per-design fits are cached by (design, excluded cell), so predicting every
    cell of a 6x6 grid costs 6 full fits plus one refit per cell. A monitor
    built from a saved model set predicts from its stored trend instead and
    never refits.
    """

    def __init__(
        self,
        reference_grid: Optional[DatasetGrid],
        alpha: float = 0.10,
        standard_error_z: bool = False,
        condition_cap: float = DEFAULT_CONDITION_CAP,
        fit_options: Optional[FitOptions] = None,
        trend: Optional[ParamTrend] = None,
    ):
        if reference_grid is None and trend is None:
            raise ArgumentError("prediction needs a reference grid or a fitted trend")
        self.reference_grid = reference_grid
        self.fixed_trend = trend
        self.alpha = alpha
        self.standard_error_z = standard_error_z
        self.condition_cap = condition_cap
        self.fit_options = fit_options or FitOptions()
        self._fits: Dict[Tuple[DesignSpec, Optional[CellKey]], DesignFit] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_saved_models(
        cls,
        path: Union[str, Path],
        alpha: float = 0.10,
        standard_error_z: bool = False,
        condition_cap: float = DEFAULT_CONDITION_CAP,
    ) -> "PredictionMonitor":
        """Monitor whose baseline comes from a model set written by ``fit``."""
        models, trend = load_model_set(path)
        if trend is None:
            trend = fit_param_trend(models)
        logger.info(f"Loaded {len(models.fits)} design fit(s) from {path}")
        return cls(None, alpha, standard_error_z, condition_cap, trend=trend)

    def _training_groups(self, cell_key: Optional[CellKey]) -> Dict[DesignSpec, List[ProcessParams]]:
        excluded = self.reference_grid.find_key(cell_key) if cell_key is not None else None
        groups: Dict[DesignSpec, List[ProcessParams]] = {}
        for key in self.reference_grid.keys:
            if key != excluded:
                groups.setdefault(key.design, []).append(key.params)
        return groups

    def check_coverage(self, cell_key: Optional[CellKey] = None) -> List[DesignSpec]:
        """Designs usable for training once ``cell_key`` is excluded.

        Raises:
            CoverageError: if fewer than two designs keep three parameter groups
        """
        if self.fixed_trend is not None:
            return [DesignSpec(design_dimension=d) for d in self.fixed_trend.designs]
        groups = self._training_groups(cell_key)
        usable = [d for d, params in groups.items() if len(params) >= 3]
        if len(usable) < 2:
            missing = [f"{d.label} has {len(params)} parameter group(s)" for d, params in groups.items() if len(params) < 3]
            if len(groups) < 2:
                missing.append(f"only {len(groups)} design(s) in the reference grid")
            target = f" for {cell_key.label}" if cell_key is not None else ""
            raise CoverageError(
                f"reference grid cannot support prediction{target}: need 2 designs with 3 parameter groups each",
                missing,
            )
        return usable

    def _fit(self, design: DesignSpec, cell_key: Optional[CellKey]) -> DesignFit:
        excluded = None
        if cell_key is not None:
            found = self.reference_grid.find_key(cell_key)
            if found is not None and found.design == design:
                excluded = found
        cache_key = (design, excluded)
        with self._lock:
            cached = self._fits.get(cache_key)
        if cached is not None:
            return cached

        records = [
            r
            for key, recs in self.reference_grid.cells.items()
            if key.design == design and key != excluded
            for r in recs
        ]
        fit = fit_models(records, self.fit_options)
        with self._lock:
            self._fits.setdefault(cache_key, fit)
        return fit

    def models_for(self, cell_key: Optional[CellKey] = None) -> FittedModelSet:
        if self.reference_grid is None:
            raise ArgumentError("a monitor built from saved models holds no reference grid to refit")
        return FittedModelSet(fits=[self._fit(d, cell_key) for d in self.check_coverage(cell_key)])

    def trend_for(self, cell_key: Optional[CellKey] = None) -> ParamTrend:
        if self.fixed_trend is not None:
            return self.fixed_trend
        return fit_param_trend(self.models_for(cell_key))

    def predict(self, cell_key: CellKey) -> MeanVector2:
        """Baseline (R, H) for a cell, never using that cell's own records."""
        return predict_for_new_cell(self.trend_for(cell_key), cell_key.design, cell_key.params)

    def monitor_z(
        self,
        query: Sequence[MeasurementRecord],
        cell_key: CellKey,
        feature: Feature = "radius",
        mu0: Optional[MeanVector2] = None,
    ) -> MonitorVerdict:
        _check_query(query, cell_key)
        if feature not in ("radius", "height", "both"):
            raise ArgumentError(f"feature must be radius, height or both, got {feature!r}")
        mu0 = mu0 or self.predict(cell_key)
        features = ["radius", "height"] if feature == "both" else [feature]
        outcomes = {}
        for f in features:
            values = [r.radius if f == "radius" else r.height for r in query]
            target = mu0.radius_mean if f == "radius" else mu0.height_mean
            outcomes[f] = one_sample_z(values, target, self.alpha, self.standard_error_z)
        changed = any(o.reject_null for o in outcomes.values())
        return MonitorVerdict(
            method="m2-z",
            decision="changed" if changed else "unchanged",
            cell=cell_key,
            outcomes=outcomes,
            evidence={"mu0": mu0.model_dump(), "n_query": len(query)},
        )

    def monitor_t2(
        self,
        query: Sequence[MeasurementRecord],
        cell_key: CellKey,
        mu0: Optional[MeanVector2] = None,
    ) -> MonitorVerdict:
        _check_query(query, cell_key)
        mu0 = mu0 or self.predict(cell_key)
        samples = [(r.radius, r.height) for r in query]
        outcome = hotelling_t2_one_sample(samples, mu0, self.alpha, self.condition_cap)
        return MonitorVerdict(
            method="m2-t2",
            decision="changed" if outcome.reject_null else "unchanged",
            cell=cell_key,
            outcomes={"t2": outcome},
            evidence={"mu0": mu0.model_dump(), "n_query": len(query)},
        )

    def classify(
        self,
        cell_key: CellKey,
        query_samples_by_status: Mapping[str, Sequence[MeasurementRecord]],
        mu0: Optional[MeanVector2] = None,
    ) -> StatusClassification:
        """Place the predicted baseline within each status's empirical T^2 distribution."""
        if not query_samples_by_status:
            raise ArgumentError("no status samples to classify against")
        predicted = mu0 or self.predict(cell_key)
        memberships = {}
        for status, records in query_samples_by_status.items():
            _check_query(records, cell_key)
            cloud = [(r.radius, r.height) for r in records]
            memberships[status] = empirical_t2_membership(cloud, predicted, self.alpha, self.condition_cap)
            logger.debug(f"{cell_key.label}: {status} member={memberships[status].member}")
        return StatusClassification(cell=cell_key, predicted=predicted, memberships=memberships)


def monitor_cell_m2_z(
    reference_grid: DatasetGrid,
    query: Sequence[MeasurementRecord],
    cell_key: CellKey,
    feature: Feature = "radius",
    alpha: float = 0.10,
    standard_error_z: bool = False,
    fit_options: Optional[FitOptions] = None,
) -> MonitorVerdict:
    """One-sample Z-test of the query feature against its predicted baseline."""
    monitor = PredictionMonitor(reference_grid, alpha, standard_error_z, fit_options=fit_options)
    return monitor.monitor_z(query, cell_key, feature)


def monitor_cell_m2_t2(
    reference_grid: DatasetGrid,
    query: Sequence[MeasurementRecord],
    cell_key: CellKey,
    alpha: float = 0.10,
    condition_cap: float = DEFAULT_CONDITION_CAP,
    fit_options: Optional[FitOptions] = None,
) -> MonitorVerdict:
    """One-sample Hotelling's T^2 of the query (R, H) pairs against the predicted baseline."""
    monitor = PredictionMonitor(reference_grid, alpha, condition_cap=condition_cap, fit_options=fit_options)
    return monitor.monitor_t2(query, cell_key)


def classify_status_m2(
    reference_grid_status1: DatasetGrid,
    query_samples_by_status: Mapping[str, Sequence[MeasurementRecord]],
    cell_key: CellKey,
    alpha: float = 0.10,
    condition_cap: float = DEFAULT_CONDITION_CAP,
    fit_options: Optional[FitOptions] = None,
) -> StatusClassification:
    monitor = PredictionMonitor(reference_grid_status1, alpha, condition_cap=condition_cap, fit_options=fit_options)
    return monitor.classify(cell_key, query_samples_by_status)


# Data-efficiency sweep ------------------------------------------------------

def _sweep_trial(
    status1: DatasetGrid,
    status2: DatasetGrid,
    n_designs: int,
    n_params: int,
    rng: np.random.Generator,
    alpha: float,
    condition_cap: float,
    fit_options: FitOptions,
) -> Optional[Tuple[bool, bool]]:
    """(false alarm, missed detection) for one random training subset, or None if prediction failed."""
    designs = status1.designs
    groups = status1.param_groups
    train_designs = [designs[i] for i in sorted(rng.choice(len(designs), n_designs, replace=False))]
    train_groups = [groups[i] for i in sorted(rng.choice(len(groups), n_params, replace=False))]

    inside = {(d, p) for d in train_designs for p in train_groups}
    outside = [k for k in status1.keys if (k.design, k.params) not in inside and status2.find_key(k) is not None]
    training = status1.subset(train_designs, train_groups)
    if outside:
        target = outside[int(rng.integers(len(outside)))]
    else:
        candidates = [k for k in training.keys if status2.find_key(k) is not None]
        target = candidates[int(rng.integers(len(candidates)))]
        training = training.without(target)

    monitor = PredictionMonitor(training, alpha, condition_cap=condition_cap, fit_options=fit_options)
    try:
        mu0 = monitor.predict(target)
        in_control = monitor.monitor_t2(status1.cells[target], target, mu0)
        out_of_control = monitor.monitor_t2(status2.cell(target.design, target.params), target, mu0)
    except (ModelDomainError, NumericError, CoverageError) as e:
        logger.debug(f"sweep trial at {target.label} skipped: {e}")
        return None
    return in_control.changed, not out_of_control.changed


def data_efficiency_sweep_m2(
    status1: DatasetGrid,
    status2: DatasetGrid,
    design_counts: Sequence[int],
    param_counts: Sequence[int],
    alpha: float = 0.10,
    repetitions: int = 200,
    seed: int = 0,
    workers: int = 1,
    condition_cap: float = DEFAULT_CONDITION_CAP,
    fit_options: Optional[FitOptions] = None,
) -> ErrorSurface:
    """Type I / Type II rates of T^2 monitoring against the size of the training subset.

    Each repetition trains on a random n_designs x n_params rectangle of the
    reference grid and tests a cell outside it; when the rectangle is the whole
    grid the target cell is left out instead. Point i, repetition r draws from
    the stream seeded by (seed, i, r).
    """
    repetitions = validate_count(repetitions, "repetitions")
    design_counts = validate_counts(design_counts, "design counts", 2, len(status1.designs))
    param_counts = validate_counts(param_counts, "parameter-group counts", 3, len(status1.param_groups))
    fit_options = fit_options or FitOptions()
    points = [(nd, npar) for nd in design_counts for npar in param_counts]
    logger.info(f"Data-efficiency sweep: {len(points)} point(s) x {repetitions} repetition(s)")

    def run_point(indexed):
        index, (nd, npar) = indexed
        false_alarms = misses = valid = 0
        for rep in range(repetitions):
            rng = np.random.default_rng([seed, index, rep])
            result = _sweep_trial(status1, status2, nd, npar, rng, alpha, condition_cap, fit_options)
            if result is None:
                continue
            valid += 1
            false_alarms += result[0]
            misses += result[1]
        return valid, false_alarms, misses

    results = parallel_map(run_point, list(enumerate(points)), workers)

    shape = (len(design_counts), len(param_counts))
    type1, type2 = np.full(shape, np.nan), np.full(shape, np.nan)
    skipped = np.zeros(shape, dtype=int)
    for (nd, npar), (valid, false_alarms, misses) in zip(points, results):
        i, j = design_counts.index(nd), param_counts.index(npar)
        skipped[i, j] = repetitions - valid
        if valid:
            type1[i, j] = false_alarms / valid
            type2[i, j] = misses / valid
        if repetitions - valid:
            logger.warning(f"Sweep point ({nd} designs, {npar} groups): {repetitions - valid} trial(s) skipped")

    valid_counts = np.maximum(repetitions - skipped, 1)
    return ErrorSurface(
        design_counts=design_counts,
        param_counts=param_counts,
        type1=type1.tolist(),
        type2=type2.tolist(),
        type1_se=np.sqrt(type1 * (1 - type1) / valid_counts).tolist(),
        type2_se=np.sqrt(type2 * (1 - type2) / valid_counts).tolist(),
        repetitions=repetitions,
        skipped=skipped.tolist(),
    )


def save_error_surface(surface: ErrorSurface, directory: Union[str, Path], prefix: str = "m2_sweep") -> List[Path]:
    """Write Type I and Type II matrices as CSV (rows n_designs, columns n_params)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in ("type1", "type2", "type1_se", "type2_se"):
        frame = pd.DataFrame(
            getattr(surface, name),
            index=pd.Index(surface.design_counts, name="n_designs"),
            columns=[f"n_params={c}" for c in surface.param_counts],
        )
        path = directory / f"{prefix}_{name}.csv"
        frame.to_csv(path, lineterminator="\n", float_format="%.6f")
        paths.append(path)
    logger.info(f"Saved sweep surface to {directory}")
    return paths
