"""Small input checks shared by the estimators and the harness."""
from __future__ import annotations

import numbers

import numpy as np

from .topology import FarmLayout


def check_positive(name, value, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite number, got {value!r}")
    if (strict and value <= 0) or (not strict and value < 0):
        raise ValueError(f"{name} must be {'positive' if strict else 'non-negative'}, "
                         f"got {value!r}")
    return float(value)


def check_integer(name, value, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value!r}")
    return int(value)


def check_ct_bounds(ct_min, ct_max):
    ct_min = check_positive("ct_min", ct_min, strict=False)
    ct_max = check_positive("ct_max", ct_max)
    if not ct_min < ct_max:
        raise ValueError(f"need ct_min < ct_max, got [{ct_min}, {ct_max}]")
    return ct_min, ct_max


def check_layout(layout):
    if not isinstance(layout, FarmLayout):
        raise TypeError(f"expected a FarmLayout, got {type(layout).__name__}")
    return layout


def check_vector(name, value, length):
    arr = np.asarray(value, dtype=float)
    if arr.shape != (length,):
        raise ValueError(f"{name} must have shape ({length},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_reference_window(y_ref, horizon):
    arr = np.asarray(y_ref, dtype=float).ravel()
    if arr.size < horizon:
        raise ValueError(f"reference window has {arr.size} samples; the horizon needs {horizon}")
    if not np.all(np.isfinite(arr[:horizon])):
        raise ValueError("reference window contains non-finite values")
    return arr[:horizon]
