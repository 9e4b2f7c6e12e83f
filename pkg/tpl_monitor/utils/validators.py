"""Input validation utilities."""

from typing import Iterable, List, Sequence

from ..core.errors import ArgumentError


def validate_probability(value: float, name: str, allow_zero: bool = False) -> float:
    """
    Check that ``value`` is a probability in (0, 1), or [0, 1) with ``allow_zero``.

    Raises:
        ArgumentError: if the value lies outside the interval
    """
    numeric = isinstance(value, (int, float)) and not isinstance(value, bool)
    low_ok = numeric and (value >= 0.0 if allow_zero else value > 0.0)
    if not (low_ok and value < 1.0):
        interval = "[0, 1)" if allow_zero else "(0, 1)"
        raise ArgumentError(f"{name} must lie in {interval}, got {value!r}")
    return float(value)


def validate_count(value: int, name: str, minimum: int = 1) -> int:
    """Check that ``value`` is an integer no smaller than ``minimum``."""
    if isinstance(value, bool) or int(value) != value or value < minimum:
        raise ArgumentError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def validate_counts(counts: Iterable[int], name: str, minimum: int, available: int) -> List[int]:
    """Sorted unique counts, each within [minimum, available]."""
    result = sorted({validate_count(c, name, minimum) for c in counts})
    if not result:
        raise ArgumentError(f"{name} must not be empty")
    too_large = [c for c in result if c > available]
    if too_large:
        raise ArgumentError(f"{name} {too_large} exceed the {available} available")
    return result


def validate_sample_sizes(sizes: Sequence[int], smallest_cell: int) -> List[int]:
    """Per-group subsample sizes: at least 2, at most the smallest cell."""
    return validate_counts(sizes, "sample sizes", 2, smallest_cell)
