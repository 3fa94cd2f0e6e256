"""Input checks shared by the estimator wrapper, the config reader and the CLI."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array

from .grid import Grid


def check_scalar(value, name: str, *, low=None, high=None, include_low=True, integer=False):
    """Return ``value`` as float (or int) after type and range checks."""
    kind = numbers.Integral if integer else numbers.Real
    if isinstance(value, bool) or not isinstance(value, kind):
        raise TypeError(f"{name} must be {'an integer' if integer else 'a real number'}, got {value!r}")
    value = int(value) if integer else float(value)
    if not integer and not np.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")
    if low is not None and (value < low or (value == low and not include_low)):
        raise ValueError(f"{name} must be {'>=' if include_low else '>'} {low}, got {value}")
    if high is not None and value > high:
        raise ValueError(f"{name} must be <= {high}, got {value}")
    return value


def check_bulk_field(y, grid: Grid, name: str = "field") -> np.ndarray:
    arr = check_array(np.atleast_1d(y), ensure_2d=False, dtype=float, input_name=name)
    if arr.shape != (grid.bulk_count,):
        raise ValueError(f"{name} has shape {arr.shape}, expected ({grid.bulk_count},)")
    return arr


def check_space_time(a, n_steps: int, width: int, name: str = "array") -> np.ndarray:
    """Broadcast a scalar, per-node vector or full array to ``(n_steps + 1, width)``."""
    arr = np.asarray(a, dtype=float)
    shape = (n_steps + 1, width)
    try:
        out = np.array(np.broadcast_to(arr, shape))
    except ValueError as exc:
        raise ValueError(f"{name} of shape {arr.shape} does not conform to {shape}") from exc
    return check_array(out, dtype=float, input_name=name)


def check_in_domain(y, r_minus: float, r_plus: float, name: str = "field") -> None:
    y = np.asarray(y, dtype=float)
    if not np.all((y > r_minus) & (y < r_plus)):
        raise ValueError(f"{name} leaves the potential domain ({r_minus}, {r_plus})")
