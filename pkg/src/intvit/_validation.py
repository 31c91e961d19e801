"""Input validation helpers shared by kernels and estimators."""

from __future__ import annotations

import numpy as np

from .exceptions import AccumulatorOverflowError

INT32_MIN = -(2**31)
INT32_MAX = 2**31 - 1


def check_scale(scale, *, name: str = "scale") -> float | np.ndarray:
    """Return ``scale`` as a python float or a 1-D float64 array, all entries > 0."""
    arr = np.asarray(scale, dtype=np.float64)
    if arr.ndim > 1:
        raise ValueError(f"{name} must be a scalar or a 1-D vector, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} must not be empty")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ValueError(f"every {name} entry must be finite and > 0")
    if arr.ndim == 0:
        return float(arr)
    return arr


def check_float_matrix(x, *, name: str = "x") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_vector(v, length: int, *, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.full(length, float(arr))
    if arr.shape != (length,):
        raise ValueError(f"{name} must have length {length}, got shape {arr.shape}")
    return arr


def check_inner_dims(a_cols: int, b_cols: int, what: str) -> None:
    if a_cols != b_cols:
        raise ValueError(f"dimension mismatch in {what}: {a_cols} != {b_cols}")


def int_matmul(a: np.ndarray, b_t: np.ndarray) -> np.ndarray:
    """Integer product ``a @ b_t.T`` with a checked int32 accumulator."""
    acc = np.asarray(a, dtype=np.int64) @ np.asarray(b_t, dtype=np.int64).T
    check_int32(acc)
    return acc.astype(np.int32)


def check_int32(acc: np.ndarray) -> None:
    if acc.size and (acc.min() < INT32_MIN or acc.max() > INT32_MAX):
        raise AccumulatorOverflowError(
            "accumulator exceeds the int32 range; reduce depth or bit width"
        )
