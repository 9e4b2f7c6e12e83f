"""Physics-informed radius and height models, their least-squares fitting, and design-dimension trends.

    R = a_R * sqrt(ln(b_R * LP^2/SR)) + c_R
    H = a_H * sqrt(sqrt(b_H * LP^2/SR) - 1) + c_H

Both models are defined only where b * LP^2/SR > 1. Fitting optimises over
(a, u, c) with b = (1 / min training dose) * (1 + e^u), which keeps every
iterate feasible at all training cells.
"""

import json
import logging
from collections import OrderedDict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field
from scipy.optimize import least_squares

from .errors import (
    ArgumentError,
    ExtrapolationError,
    FitFailureError,
    InsufficientDataError,
    ModelDomainError,
)
from .models import (
    ALL_PARAMS,
    DesignFit,
    DesignSpec,
    FittedModelSet,
    HeightModelParams,
    LinearTrend,
    MeanVector2,
    MeasurementRecord,
    ModelKind,
    ParamTrend,
    ProcessParams,
    RadiusModelParams,
)

logger = logging.getLogger(__name__)

U_BOUND = 20.0


class FitOptions(BaseModel):
    """Profile scan and polishing settings for the nonlinear fit."""

    n_starts: int = Field(default=3, ge=1)
    profile_points: int = Field(default=161, ge=3)
    max_iterations: int = Field(default=200, ge=1)
    tolerance: float = Field(default=1e-10, gt=0)


# Model evaluation -----------------------------------------------------------

def _shape(kind: ModelKind, b: float, dose: np.ndarray) -> np.ndarray:
    z = b * dose
    if kind == "radius":
        return np.sqrt(np.log(z))
    return np.sqrt(np.sqrt(z) - 1.0)


def _shape_derivative(kind: ModelKind, b: float, dose: np.ndarray, g: np.ndarray) -> np.ndarray:
    """d shape / d b."""
    if kind == "radius":
        return 1.0 / (2.0 * g * b)
    s = np.sqrt(b * dose)
    return s / (4.0 * g * b)


def predict_radius(params: RadiusModelParams, p: ProcessParams) -> float:
    """Equivalent radius in µm at one process setting."""
    arg = params.b_R * p.dose
    if not arg > 1.0:
        raise ModelDomainError(f"radius model undefined at {p.label}: b_R*LP^2/SR = {arg:.6g} <= 1")
    return float(params.a_R * np.sqrt(np.log(arg)) + params.c_R)


def predict_height(params: HeightModelParams, p: ProcessParams) -> float:
    """Average height in µm at one process setting."""
    root = float(np.sqrt(params.b_H * p.dose))
    if not root > 1.0:
        raise ModelDomainError(f"height model undefined at {p.label}: sqrt(b_H*LP^2/SR) = {root:.6g} <= 1")
    return float(params.a_H * np.sqrt(root - 1.0) + params.c_H)


# Fitting --------------------------------------------------------------------
#
# For fixed u the model is linear in (a, c), so both have closed forms and the
# least-squares problem reduces to a one-dimensional profile over u.

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def _b_of_u(u: np.ndarray, floor: float) -> np.ndarray:
    return floor * (1.0 + np.exp(u))


def _profile_grid(
    kind: ModelKind, u: np.ndarray, dose: np.ndarray, centred: np.ndarray, floor: float
) -> np.ndarray:
    """Profile cost for every row of ``centred`` (K, n) at every u (U,), shape (K, U)."""
    g = _shape(kind, _b_of_u(u, floor)[:, None], dose[None, :])
    gc = g - g.mean(axis=1, keepdims=True)
    spread = np.sum(gc ** 2, axis=1)
    cross = centred @ gc.T
    cost = np.sum(centred ** 2, axis=1, keepdims=True) - cross ** 2 / spread
    return np.where(spread > 0, cost, np.inf)


def _profile_at(
    kind: ModelKind, u: np.ndarray, dose: np.ndarray, centred: np.ndarray, floor: float
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(cost, a, shape values) with one u per row of ``centred``."""
    g = _shape(kind, _b_of_u(u, floor)[:, None], dose[None, :])
    gc = g - g.mean(axis=1, keepdims=True)
    spread = np.sum(gc ** 2, axis=1)
    a = np.sum(gc * centred, axis=1) / spread
    cost = np.sum((centred - a[:, None] * gc) ** 2, axis=1)
    return np.where(spread > 0, cost, np.inf), a, g


def _golden_section(cost, lo: np.ndarray, hi: np.ndarray, tolerance: float) -> np.ndarray:
    """Row-wise minimiser of ``cost`` over [lo, hi], to ``tolerance`` in u."""
    width = float(np.max(hi - lo)) if lo.size else 0.0
    steps = int(np.ceil(np.log(tolerance / width) / np.log(_GOLDEN))) if width > tolerance else 0
    x1, x2 = hi - _GOLDEN * (hi - lo), lo + _GOLDEN * (hi - lo)
    f1, f2 = cost(x1), cost(x2)
    for _ in range(steps):
        left = f1 <= f2
        lo, hi = np.where(left, lo, x1), np.where(left, x2, hi)
        kept_x, kept_f = np.where(left, x1, x2), np.where(left, f1, f2)
        new_x = np.where(left, hi - _GOLDEN * (hi - lo), lo + _GOLDEN * (hi - lo))
        new_f = cost(new_x)
        x1, f1 = np.where(left, new_x, kept_x), np.where(left, new_f, kept_f)
        x2, f2 = np.where(left, kept_x, new_x), np.where(left, kept_f, new_f)
    return np.where(f1 <= f2, x1, x2)


def _check_curve_data(dose: np.ndarray, y: np.ndarray) -> None:
    if y.shape[-1] != dose.size:
        raise ArgumentError(f"{dose.size} doses but {y.shape[-1]} observations per fit")
    if np.unique(dose).size < 3:
        raise InsufficientDataError(f"three coefficients need 3 distinct doses, got {np.unique(dose).size}")
    if not dose.min() > 0:
        raise ArgumentError("doses must be positive")


def fit_curve_batch(
    kind: ModelKind,
    dose: np.ndarray,
    observed: np.ndarray,
    options: Optional[FitOptions] = None,
) -> np.ndarray:
    """Least-squares (a, b, c) for every row of ``observed``, all sharing one dose vector.

    Each row is located on the profile grid and refined by golden-section
    search. Rows that cannot be fitted come back as NaN.
    """
    options = options or FitOptions()
    dose = np.asarray(dose, dtype=float)
    y = np.atleast_2d(np.asarray(observed, dtype=float))
    _check_curve_data(dose, y)
    floor = 1.0 / dose.min()
    y_mean = y.mean(axis=1)
    centred = y - y_mean[:, None]
    grid = np.linspace(-U_BOUND, U_BOUND, options.profile_points)

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        scan = _profile_grid(kind, grid, dose, centred, floor)
        best = np.argmin(np.where(np.isnan(scan), np.inf, scan), axis=1)
        lo = grid[np.maximum(best - 1, 0)]
        hi = grid[np.minimum(best + 1, grid.size - 1)]
        u = _golden_section(lambda v: _profile_at(kind, v, dose, centred, floor)[0], lo, hi, options.tolerance)
        cost, a, g = _profile_at(kind, u, dose, centred, floor)
        c = y_mean - a * g.mean(axis=1)

    fitted = np.column_stack([a, _b_of_u(u, floor), c])
    fitted[~(np.all(np.isfinite(fitted), axis=1) & np.isfinite(cost))] = np.nan
    return fitted


def fit_curve(
    kind: ModelKind,
    dose: np.ndarray,
    observed: np.ndarray,
    options: Optional[FitOptions] = None,
) -> Tuple[Tuple[float, float, float], float]:
    """Least-squares (a, b, c) for one model over individual observations.

    The lowest ``n_starts`` local minima of the profile grid seed a bounded
    trust-region polish. Returns the coefficients and the residual norm; the
    result is never worse than any of those starting points.
    """
    options = options or FitOptions()
    dose = np.asarray(dose, dtype=float)
    y = np.asarray(observed, dtype=float)
    _check_curve_data(dose, y)
    floor = 1.0 / dose.min()
    centred = y - y.mean()

    def unpack(x: np.ndarray) -> Tuple[float, float, float]:
        return x[0], floor * (1.0 + np.exp(x[1])), x[2]

    def residuals(x: np.ndarray) -> np.ndarray:
        a, b, c = unpack(x)
        return a * _shape(kind, b, dose) + c - y

    def jacobian(x: np.ndarray) -> np.ndarray:
        a, b, _ = unpack(x)
        g = _shape(kind, b, dose)
        db_du = floor * np.exp(x[1])
        return np.column_stack([g, a * _shape_derivative(kind, b, dose, g) * db_du, np.ones_like(g)])

    grid = np.linspace(-U_BOUND, U_BOUND, options.profile_points)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        scan = _profile_grid(kind, grid, dose, centred[None, :], floor)[0]
    scan = np.where(np.isfinite(scan), scan, np.inf)
    local = (scan <= np.r_[np.inf, scan[:-1]]) & (scan <= np.r_[scan[1:], np.inf]) & np.isfinite(scan)
    candidates = np.flatnonzero(local)
    starts = candidates[np.argsort(scan[candidates], kind="stable")][: options.n_starts]

    best_x: Optional[np.ndarray] = None
    best_cost = np.inf
    best_start = -1
    for index in starts:
        u0 = grid[index : index + 1]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            _, a0, g0 = _profile_at(kind, u0, dose, centred[None, :], floor)
        x0 = np.array([a0[0], u0[0], y.mean() - a0[0] * g0[0].mean()])
        initial_cost = 0.5 * float(np.sum(residuals(x0) ** 2))

        try:
            result = least_squares(
                residuals,
                x0,
                jac=jacobian,
                bounds=([-np.inf, -U_BOUND, -np.inf], [np.inf, U_BOUND, np.inf]),
                method="trf",
                x_scale="jac",
                ftol=options.tolerance,
                xtol=options.tolerance,
                gtol=options.tolerance,
                max_nfev=options.max_iterations,
            )
            x, cost = result.x, float(result.cost)
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as e:
            logger.debug(f"{kind} start {index} failed: {e}")
            x, cost = x0, initial_cost

        if not (np.all(np.isfinite(x)) and np.isfinite(cost)):
            continue
        if initial_cost < cost:
            x, cost = x0, initial_cost
        if cost < best_cost:
            best_x, best_cost, best_start = x, cost, int(index)

    if best_x is None:
        raise FitFailureError(f"no feasible {kind} fit from {len(starts)} profile start(s)")

    logger.debug(f"{kind} fit: best start u={grid[best_start]:.3g}, residual norm {np.sqrt(2 * best_cost):.3g}")
    a, b, c = unpack(best_x)
    return (float(a), float(b), float(c)), float(np.sqrt(2.0 * best_cost))




def _group_by_params(records: Sequence[MeasurementRecord]) -> "OrderedDict[ProcessParams, List[MeasurementRecord]]":
    groups: "OrderedDict[ProcessParams, List[MeasurementRecord]]" = OrderedDict()
    for r in records:
        groups.setdefault(r.params, []).append(r)
    return groups


def _check_training(records: Sequence[MeasurementRecord]) -> "OrderedDict[ProcessParams, List[MeasurementRecord]]":
    if not records:
        raise InsufficientDataError("no training records")
    designs = {r.design for r in records}
    if len(designs) > 1:
        labels = ", ".join(sorted(d.label for d in designs))
        raise ArgumentError(f"training records span several designs ({labels}); fit one design at a time")
    groups = _group_by_params(records)
    if len(groups) < 3:
        raise InsufficientDataError(
            f"fitting three coefficients needs at least 3 distinct parameter groups, got {len(groups)}"
        )
    return groups


def fit_models(records: Sequence[MeasurementRecord], options: Optional[FitOptions] = None) -> DesignFit:
    """Fit both models to every parameter group of one design."""
    groups = _check_training(records)
    dose = np.array([r.params.dose for r in records])
    radius, radius_norm = fit_curve("radius", dose, np.array([r.radius for r in records]), options)
    height, height_norm = fit_curve("height", dose, np.array([r.height for r in records]), options)
    return DesignFit(
        design=records[0].design,
        radius=RadiusModelParams(a_R=radius[0], b_R=radius[1], c_R=radius[2]),
        height=HeightModelParams(a_H=height[0], b_H=height[1], c_H=height[2]),
        radius_residual_norm=radius_norm,
        height_residual_norm=height_norm,
        training_cells=sorted(groups, key=lambda p: (p.laser_power, p.scan_rate)),
        n_records=len(records),
    )


def fit_grid(grid, options: Optional[FitOptions] = None) -> FittedModelSet:
    """Fit every design of a grid that has at least three parameter groups."""
    fits = []
    for design in grid.designs:
        records = [r for key, recs in grid.cells.items() if key.design == design for r in recs]
        groups = {r.params for r in records}
        if len(groups) < 3:
            logger.warning(f"Skipping {design.label}: only {len(groups)} parameter group(s)")
            continue
        fits.append(fit_models(records, options))
    if not fits:
        raise InsufficientDataError("no design has the 3 parameter groups needed for fitting")
    logger.info(f"Fitted models for {len(fits)} design(s)")
    return FittedModelSet(fits=fits)


# Trends ---------------------------------------------------------------------

def fit_param_trend(models: FittedModelSet) -> ParamTrend:
    """Ordinary least-squares line of each coefficient against design dimension."""
    dims = np.array([f.design.design_dimension for f in models.fits])
    if np.unique(dims).size < 2:
        raise InsufficientDataError("trend regression needs fits for at least 2 distinct designs")

    trends: Dict[str, LinearTrend] = {}
    for name in ALL_PARAMS:
        values = np.array([f.coefficients()[name] for f in models.fits])
        slope, intercept = np.polyfit(dims, values, 1)
        residual = float(np.linalg.norm(values - (slope * dims + intercept)))
        trends[name] = LinearTrend(slope=float(slope), intercept=float(intercept), residual_norm=residual)
    return ParamTrend(trends=trends, designs=sorted(dims.tolist()))


def predict_for_new_cell(trend: ParamTrend, design: DesignSpec, p: ProcessParams) -> MeanVector2:
    """Predicted mean (R, H) for a cell from trend-evaluated coefficients."""
    radius, height = trend.parameters_at(design)
    try:
        return MeanVector2(radius_mean=predict_radius(radius, p), height_mean=predict_height(height, p))
    except ModelDomainError as e:
        raise ExtrapolationError(f"extrapolation to {design.label} {p.label} failed: {e}") from e


# Serialization --------------------------------------------------------------

def save_model_set(models: FittedModelSet, path: Union[str, Path], trend: Optional[ParamTrend] = None) -> Path:
    """Write fits (and optionally the trend) as JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {"fits": models.model_dump(mode="json")["fits"]}
    if trend is not None:
        document["trend"] = trend.model_dump(mode="json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2, ensure_ascii=False)
    return path


def load_model_set(path: Union[str, Path]) -> Tuple[FittedModelSet, Optional[ParamTrend]]:
    with open(path, "r", encoding="utf-8") as f:
        document = json.load(f)
    models = FittedModelSet(fits=document["fits"])
    trend = ParamTrend(**document["trend"]) if "trend" in document else None
    return models, trend
