"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numbers

import numpy as np

from .exceptions import CohortError


def check_day_array(values, name="times", *, min_day=1, allow_empty=False):
    """Return ``values`` as an int64 array of day indices.

    Non-integer entries are rejected rather than rounded.
    """
    arr = np.asarray(values)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if arr.size == 0:
        if allow_empty:
            return arr.astype(np.int64)
        raise ValueError("empty sample")
    if arr.dtype == bool or not np.issubdtype(arr.dtype, np.number):
        raise CohortError(f"{name} must be numeric day indices")
    if not np.all(np.isfinite(arr)):
        raise CohortError(f"{name} contains non-finite values")
    as_int = arr.astype(np.int64)
    if np.any(as_int != arr):
        raise CohortError(f"{name} must be integer days; continuous times are not accepted")
    if np.any(as_int < min_day):
        raise CohortError(f"{name} must be >= {min_day}")
    return as_int


def check_event_array(events, n, name="events"):
    arr = np.asarray(events)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if arr.size != n:
        raise CohortError(f"{name} has length {arr.size}, expected {n}")
    if arr.dtype == bool:
        return arr
    if not np.all(np.isin(arr, (0, 1))):
        raise CohortError(f"{name} must be boolean or 0/1")
    return arr.astype(bool)


def check_sample_weight(sample_weight, n):
    """Frequency weights; ``None`` means one copy of every row."""
    if sample_weight is None:
        return np.ones(n)
    w = np.asarray(sample_weight, dtype=float).reshape(-1)
    if w.size != n:
        raise ValueError(f"sample_weight has length {w.size}, expected {n}")
    if np.any(~np.isfinite(w)) or np.any(w < 0):
        raise ValueError("sample_weight must be finite and non-negative")
    return w


def check_t0_grid(t0_grid, tau, max_day=None):
    grid = np.atleast_1d(np.asarray(t0_grid))
    grid = check_day_array(grid, "t0_grid", min_day=0)
    if np.any(np.diff(grid) <= 0):
        raise ValueError("t0_grid must be strictly increasing")
    if grid.min() <= tau:
        raise ValueError("t0 must exceed tau")
    if max_day is not None and grid.max() > max_day:
        raise ValueError(f"t0 must not exceed the maximum follow-up day {max_day}")
    return grid


def check_non_negative_int(value, name):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 0:
        raise ValueError(f"{name} must be a non-negative integer, got {value!r}")
    return int(value)
