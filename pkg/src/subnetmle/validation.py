"""Input validation helpers shared by the public API surfaces."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError


def as_vector(x, name: str = "x", length: int | None = None) -> np.ndarray:
    """Coerce to a 1-D float array, optionally enforcing its length."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise DimensionError(f"{name} must have length {length}, got {arr.shape[0]}")
    return arr


def as_matrix(x, name: str = "x", rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Coerce to a 2-D float array, optionally enforcing its shape."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if rows is not None and arr.shape[0] != rows:
        raise DimensionError(f"{name} must have {rows} rows, got {arr.shape[0]}")
    if cols is not None and arr.shape[1] != cols:
        raise DimensionError(f"{name} must have {cols} columns, got {arr.shape[1]}")
    return arr


def check_finite(arr: np.ndarray, name: str = "array") -> np.ndarray:
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_consistent_length(n: int, **named) -> None:
    """Verify that every named signal has n samples along its last axis."""
    for name, arr in named.items():
        if arr is None:
            continue
        if np.asarray(arr).shape[-1] != n:
            raise DimensionError(
                f"{name} has {np.asarray(arr).shape[-1]} samples, expected {n}"
            )


def readonly(arr: np.ndarray) -> np.ndarray:
    """Return a float array that cannot be written through this reference."""
    out = np.array(arr, dtype=float, copy=True)
    out.setflags(write=False)
    return out
