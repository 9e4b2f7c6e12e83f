"""Helper utility functions."""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

import numpy as np

from ..core.models import DesignSpec, ProcessParams
from ..core.synthetic import STANDARD_DESIGNS, STANDARD_PARAMETER_GROUPS

T = TypeVar("T")
R = TypeVar("R")

_LABEL_TOLERANCE = 1e-9


def parallel_map(func: Callable[[T], R], items: Iterable[T], workers: int = 1) -> List[R]:
    """
    Apply ``func`` to every item, optionally on a thread pool.

    Results come back in input order regardless of completion order, so
    callers aggregate deterministically.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def sub_seed(seed: int, *path: int) -> int:
    """Independent integer seed for the stream at ``path`` under ``seed``."""
    return int(np.random.SeedSequence([seed, *path]).generate_state(1)[0])


def design_label(design: DesignSpec) -> str:
    """D1..D6 for the standard designs, otherwise the dimension itself (e.g. D3.1)."""
    for index, value in enumerate(STANDARD_DESIGNS, start=1):
        if abs(design.design_dimension - value) <= _LABEL_TOLERANCE:
            return f"D{index}"
    return design.label


def group_label(params: ProcessParams) -> str:
    """P1..P6 for the standard parameter groups, otherwise LP/SR."""
    for index, (lp, sr) in enumerate(STANDARD_PARAMETER_GROUPS, start=1):
        if abs(params.laser_power - lp) <= _LABEL_TOLERANCE and abs(params.scan_rate - sr) <= _LABEL_TOLERANCE:
            return f"P{index}"
    return params.label


def format_duration(seconds: Optional[float]) -> str:
    """Format elapsed seconds as human readable text."""
    if seconds is None:
        return "Unknown"

    if seconds < 60:
        return f"{seconds:.1f}s"
    minutes, remaining = divmod(int(seconds), 60)
    if minutes < 60:
        return f"{minutes}m {remaining}s"
    hours, minutes = divmod(minutes, 60)
    return f"{hours}h {minutes}m {remaining}s"


def format_rate(value: Optional[float], digits: int = 2) -> str:
    """Percentage with fixed decimals, N/A when undefined."""
    if value is None:
        return "N/A"
    return f"{value:.{digits}f}"


def format_float(value: Optional[float], digits: int = 4) -> str:
    if value is None:
        return "N/A"
    return f"{value:.{digits}g}"

