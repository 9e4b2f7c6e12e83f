"""Parameter monitoring through bootstrap distributions of the fitted model coefficients.

Known parameter groups are compared with a one-sample Hotelling's T^2 on
bootstrap coefficient vectors. Unknown groups are judged against
leave-one-out threshold intervals, one per coefficient, with a majority
vote over the six coefficients of both models.
"""

import itertools
import json
import logging
import math
from pathlib import Path
from typing import Dict, List, Literal, Mapping, Optional, Sequence, Tuple, Type, TypeVar, Union

import numpy as np
from pydantic import BaseModel, Field

from .dimension_models import FitOptions, fit_curve_batch
from .errors import (
    ArgumentError,
    BootstrapFailureError,
    DataError,
    IncompleteThresholdError,
    InsufficientDataError,
    ThresholdFailureError,
)
from .hypothesis import DEFAULT_CONDITION_CAP, hotelling_t2_one_sample
from .models import (
    ALL_PARAMS,
    BootstrapDistribution,
    MeasurementRecord,
    ModelKind,
    MonitorVerdict,
    ProcessParams,
    ThresholdFold,
    ThresholdInterval,
    ThresholdSet,
    param_names,
)
from ..utils.helpers import parallel_map, sub_seed
from ..utils.validators import validate_count, validate_probability

logger = logging.getLogger(__name__)

Cells = Mapping[ProcessParams, Sequence[MeasurementRecord]]
M = TypeVar("M", bound=BaseModel)


class BootstrapOptions(BaseModel):
    """Resampling settings shared by every bootstrap in this module."""

    iterations: int = Field(default=40, ge=2)
    samples_per_group: int = Field(default=3, ge=1)
    retry_cap: int = Field(default=5, ge=0)
    max_failure_fraction: float = Field(default=0.2, ge=0, le=1)


def _as_cells(cells: Union[Cells, Sequence[Sequence[MeasurementRecord]]]) -> Dict[ProcessParams, List[MeasurementRecord]]:
    if isinstance(cells, Mapping):
        return {p: list(recs) for p, recs in cells.items()}
    grouped: Dict[ProcessParams, List[MeasurementRecord]] = {}
    for recs in cells:
        for r in recs:
            grouped.setdefault(r.params, []).append(r)
    return grouped


# Bootstrap ------------------------------------------------------------------

def bootstrap_params(
    cells: Union[Cells, Sequence[Sequence[MeasurementRecord]]],
    samples_per_group: int = 3,
    iterations: int = 40,
    model: ModelKind = "radius",
    seed: int = 0,
    retry_cap: int = 5,
    max_failure_fraction: float = 0.2,
    fit_options: Optional[FitOptions] = None,
    workers: int = 1,
) -> BootstrapDistribution:
    """Refit one model on ``samples_per_group`` records drawn with replacement from each cell.

    Iteration i, attempt a draws from the stream seeded by (seed, i, a); an
    iteration whose fit fails is retried up to ``retry_cap`` times. All
    iterations share one dose vector, so they are fitted together and split
    into ``workers`` chunks.
    """
    iterations = validate_count(iterations, "iterations", 2)
    samples_per_group = validate_count(samples_per_group, "samples_per_group")
    if model not in ("radius", "height"):
        raise ArgumentError(f"model must be radius or height, got {model!r}")

    grouped = _as_cells(cells)
    if len(grouped) < 3:
        raise InsufficientDataError(f"bootstrapping three coefficients needs 3 parameter groups, got {len(grouped)}")
    short = [p.label for p, recs in grouped.items() if len(recs) < samples_per_group]
    if short:
        raise InsufficientDataError(f"cells with fewer than {samples_per_group} records: {', '.join(short)}")
    designs = {r.design for recs in grouped.values() for r in recs}
    if len(designs) > 1:
        raise ArgumentError("bootstrap cells must come from a single design")

    sources = sorted(grouped, key=lambda p: (p.laser_power, p.scan_rate))
    values = [np.array([r.radius if model == "radius" else r.height for r in grouped[p]]) for p in sources]
    dose = np.repeat([p.dose for p in sources], samples_per_group)

    def draw(index: int, attempt: int) -> np.ndarray:
        rng = np.random.default_rng([seed, index, attempt])
        return np.concatenate([v[rng.integers(0, v.size, samples_per_group)] for v in values])

    def fit_chunk(chunk: Sequence[int]) -> np.ndarray:
        fitted = np.full((len(chunk), 3), np.nan)
        pending = np.arange(len(chunk))
        for attempt in range(retry_cap + 1):
            if not pending.size:
                break
            batch = fit_curve_batch(model, dose, np.stack([draw(chunk[k], attempt) for k in pending]), fit_options)
            ok = np.all(np.isfinite(batch), axis=1)
            fitted[pending[ok]] = batch[ok]
            pending = pending[~ok]
            if pending.size:
                logger.debug(f"{pending.size} bootstrap iteration(s) failed at attempt {attempt}")
        return fitted

    chunks = [c.tolist() for c in np.array_split(np.arange(iterations), max(1, min(workers, iterations)))]
    results = np.vstack(parallel_map(fit_chunk, chunks, workers))
    succeeded = np.all(np.isfinite(results), axis=1)
    vectors = [tuple(row) for row in results[succeeded].tolist()]
    failed = iterations - len(vectors)
    if failed:
        logger.warning(f"{failed} of {iterations} {model} bootstrap iteration(s) failed after {retry_cap} retries")
    if failed > max_failure_fraction * iterations or len(vectors) < 2:
        raise BootstrapFailureError(
            f"{failed} of {iterations} {model} bootstrap iterations failed (limit {max_failure_fraction:.0%})"
        )

    return BootstrapDistribution(
        model=model,
        design=next(iter(designs)),
        source_cells=sources,
        vectors=vectors,
        iterations=iterations,
        failed_iterations=failed,
        samples_per_group=samples_per_group,
        seed=seed,
    )


def test_same_group_m3(
    reference_dist: BootstrapDistribution,
    query_dist: BootstrapDistribution,
    alpha: float = 0.10,
    condition_cap: float = DEFAULT_CONDITION_CAP,
) -> MonitorVerdict:
    """One-sample T^2 of the query coefficient vectors against the reference mean."""
    if reference_dist.model != query_dist.model:
        raise ArgumentError(f"cannot compare {reference_dist.model} and {query_dist.model} distributions")
    if reference_dist.design is not None and query_dist.design is not None and reference_dist.design != query_dist.design:
        raise ArgumentError(f"distributions come from {reference_dist.design.label} and {query_dist.design.label}")
    if set(reference_dist.source_cells) != set(query_dist.source_cells):
        raise ArgumentError("distributions were bootstrapped from different parameter groups")

    outcome = hotelling_t2_one_sample(query_dist.as_array(), reference_dist.mean(), alpha, condition_cap)
    return MonitorVerdict(
        method="m3-same",
        decision="changed" if outcome.reject_null else "unchanged",
        outcomes={query_dist.model: outcome},
        evidence={
            "model": query_dist.model,
            "design": query_dist.design.design_dimension if query_dist.design else None,
            "groups": [p.label for p in query_dist.source_cells],
            "reference_mean": reference_dist.mean().tolist(),
            "query_mean": query_dist.mean().tolist(),
        },
    )


test_same_group_m3.__test__ = False  # not a pytest test


# Leave-one-out thresholds ---------------------------------------------------

def required_widening(values: np.ndarray, median: float, lower_half: float, upper_half: float) -> np.ndarray:
    """Smallest k >= 0 per value with median - k*lower_half <= value <= median + k*upper_half."""
    below = values < median
    above = values > median
    k = np.zeros_like(values, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        k[below] = np.where(lower_half > 0, (median - values[below]) / lower_half, np.inf)
        k[above] = np.where(upper_half > 0, (values[above] - median) / upper_half, np.inf)
    return k


def _fold_interval(
    parameter: str,
    reference: np.ndarray,
    held_out: np.ndarray,
    alpha: float,
    coverage: float,
    widening_cap: float,
) -> Tuple[ThresholdInterval, float, float]:
    median = float(np.median(reference))
    lower_q, upper_q = np.quantile(reference, [alpha / 2.0, 1.0 - alpha / 2.0])
    lower_half, upper_half = median - float(lower_q), float(upper_q) - median

    needed = required_widening(held_out, median, lower_half, upper_half)
    rank = math.ceil(coverage * needed.size - 1e-9)
    widening = float(np.sort(needed)[rank - 1]) if rank > 0 else 0.0
    if not widening <= widening_cap:
        raise ThresholdFailureError(
            f"{parameter}: covering {coverage:.0%} of the held-out group needs widening {widening:.3g} "
            f"(cap {widening_cap:g})"
        )

    # covered values stay inside despite rounding in median +- k * half
    covered = held_out[needed <= widening]
    interval = ThresholdInterval(
        parameter=parameter,
        lower=min([median - widening * lower_half, *covered]),
        upper=max([median + widening * upper_half, *covered]),
    )
    achieved = float(np.mean([interval.contains(v) for v in held_out]))
    return interval, widening, achieved


def combine_intervals(
    parameter: str, intervals: Sequence[ThresholdInterval], rule: Literal["envelope", "mean"] = "envelope"
) -> ThresholdInterval:
    """Envelope (min lower, max upper) or mean of fold intervals."""
    if not intervals:
        raise ArgumentError(f"{parameter}: no fold intervals to combine")
    lowers = [i.lower for i in intervals]
    uppers = [i.upper for i in intervals]
    if rule == "envelope":
        return ThresholdInterval(parameter=parameter, lower=min(lowers), upper=max(uppers))
    if rule == "mean":
        return ThresholdInterval(parameter=parameter, lower=float(np.mean(lowers)), upper=float(np.mean(uppers)))
    raise ArgumentError(f"combine rule must be envelope or mean, got {rule!r}")


def curvature_scale(doses: Sequence[float]) -> float:
    """Noise multiplier of the highest divided difference through ``doses``.

    The curvature of both models is resolved only as well as this quantity
    allows; repeated doses give infinity.
    """
    d = np.asarray(doses, dtype=float)
    total = 0.0
    for k in range(d.size):
        product = float(np.prod(np.delete(d, k) - d[k]))
        if product == 0.0:
            return math.inf
        total += 1.0 / product ** 2
    return math.sqrt(total)


def evaluation_cells(target: ProcessParams, cells: Cells, companions: int = 2) -> Dict[ProcessParams, Sequence[MeasurementRecord]]:
    """``target`` plus the ``companions`` groups that best resolve curvature with it.

    Ties go to the group order by (LP, SR).
    """
    others = sorted((p for p in cells if p != target), key=lambda p: (p.laser_power, p.scan_rate))
    if len(others) < companions:
        raise InsufficientDataError(f"{target.label} needs {companions} companion group(s), got {len(others)}")
    best = min(
        itertools.combinations(others, companions),
        key=lambda pair: curvature_scale([target.dose, *(p.dose for p in pair)]),
    )
    return {p: cells[p] for p in (target, *best)}


def loo_thresholds(
    known_groups: Union[Cells, Sequence[Sequence[MeasurementRecord]]],
    coverage: float = 0.95,
    model: ModelKind = "radius",
    seed: int = 0,
    alpha: float = 0.10,
    widening_cap: float = 10.0,
    combine: Literal["envelope", "mean"] = "envelope",
    bootstrap: Optional[BootstrapOptions] = None,
    fit_options: Optional[FitOptions] = None,
    workers: int = 1,
) -> ThresholdSet:
    """Threshold intervals for a parameter group outside ``known_groups``.

    Fold i holds out group i: the remaining groups give the reference
    distribution D_i; group i with the two remaining groups that best resolve
    curvature with it gives the evaluation distribution. D_i's central
    (1 - alpha) quantile interval is scaled about its median by the smallest
    factor that contains ``coverage`` of the evaluation vectors. Folds are
    combined per coefficient.
    """
    coverage = validate_probability(coverage, "coverage", allow_zero=True)
    alpha = validate_probability(alpha, "alpha")
    if combine not in ("envelope", "mean"):
        raise ArgumentError(f"combine rule must be envelope or mean, got {combine!r}")
    bootstrap = bootstrap or BootstrapOptions()
    cells = _as_cells(known_groups)
    if len(cells) < 4:
        raise InsufficientDataError(f"leave-one-out thresholds need at least 4 known groups, got {len(cells)}")

    groups = sorted(cells, key=lambda p: (p.laser_power, p.scan_rate))
    names = param_names(model)

    def boot(subset: Cells, *path: int) -> BootstrapDistribution:
        return bootstrap_params(
            subset,
            samples_per_group=bootstrap.samples_per_group,
            iterations=bootstrap.iterations,
            model=model,
            seed=sub_seed(seed, *path),
            retry_cap=bootstrap.retry_cap,
            max_failure_fraction=bootstrap.max_failure_fraction,
            fit_options=fit_options,
            workers=workers,
        )

    folds: List[ThresholdFold] = []
    for i, held_out in enumerate(groups):
        remaining = {p: cells[p] for p in groups if p != held_out}
        reference = boot(remaining, i, 0).as_array()
        evaluation = boot(evaluation_cells(held_out, cells), i, 1).as_array()

        intervals, widening, achieved = {}, {}, {}
        for j, name in enumerate(names):
            intervals[name], widening[name], achieved[name] = _fold_interval(
                name, reference[:, j], evaluation[:, j], alpha, coverage, widening_cap
            )
        folds.append(ThresholdFold(held_out=held_out, intervals=intervals, widening=widening, achieved_coverage=achieved))
        logger.debug(f"{model} fold {held_out.label}: widening {widening}")

    combined = {name: combine_intervals(name, [f.intervals[name] for f in folds], combine) for name in names}
    designs = {r.design for recs in cells.values() for r in recs}
    return ThresholdSet(
        model=model,
        design=next(iter(designs)) if len(designs) == 1 else None,
        coverage=coverage,
        combine=combine,
        intervals=combined,
        folds=folds,
    )


def monitor_unknown_group_m3(
    thresholds: Union[Mapping[str, ThresholdInterval], Sequence[ThresholdSet]],
    query_dist_R: BootstrapDistribution,
    query_dist_H: BootstrapDistribution,
    vote_cap: int = 2,
) -> MonitorVerdict:
    """Reject each coefficient whose query mean leaves its interval; changed iff rejections exceed ``vote_cap``."""
    if not isinstance(thresholds, Mapping):
        merged: Dict[str, ThresholdInterval] = {}
        for ts in thresholds:
            merged.update(ts.intervals)
        thresholds = merged
    missing = [name for name in ALL_PARAMS if name not in thresholds]
    if missing:
        raise IncompleteThresholdError(f"no threshold interval for {', '.join(missing)}")
    if query_dist_R.model != "radius" or query_dist_H.model != "height":
        raise ArgumentError("query distributions must be (radius, height) in that order")

    means = dict(zip(ALL_PARAMS, np.concatenate([query_dist_R.mean(), query_dist_H.mean()]).tolist()))
    tests = {}
    for name in ALL_PARAMS:
        interval = thresholds[name]
        tests[name] = {
            "mean": means[name],
            "lower": interval.lower,
            "upper": interval.upper,
            "reject": not interval.contains(means[name]),
        }
    rejections = sum(t["reject"] for t in tests.values())
    return MonitorVerdict(
        method="m3-unknown",
        decision="changed" if rejections > vote_cap else "unchanged",
        evidence={"rejections": rejections, "vote_cap": vote_cap, "parameters": tests},
    )


# Serialization --------------------------------------------------------------

def save_model_json(model: Union[BaseModel, Sequence[BaseModel]], path: Union[str, Path]) -> Path:
    """Write a distribution or threshold set, or a list of them, as JSON for audit and re-testing."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(model, BaseModel):
        document = model.model_dump(mode="json")
    else:
        document = [m.model_dump(mode="json") for m in model]
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2, ensure_ascii=False)
    return path


def load_model_json(cls: Type[M], path: Union[str, Path]) -> M:
    with open(path, "r", encoding="utf-8") as f:
        return cls.model_validate(json.load(f))


def load_model_list(cls: Type[M], path: Union[str, Path]) -> List[M]:
    with open(path, "r", encoding="utf-8") as f:
        document = json.load(f)
    if not isinstance(document, list):
        raise DataError(f"{path}: expected a JSON list of {cls.__name__} documents")
    return [cls.model_validate(item) for item in document]
