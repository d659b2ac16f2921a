"""Input validation helpers shared by the estimators and functional API."""

from __future__ import annotations

from typing import Sequence

import numpy as np

UNIT_NORM_TOL = 1e-12


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of a spectral function."""


def check_tensor(t, *, min_order: int = 3, copy: bool = False) -> np.ndarray:
    """Validate a dense tensor and return it as a float64 ndarray.

    Parameters
    ----------
    t : array-like
        Tensor of order at least ``min_order``.
    min_order : int, default=3
        Smallest accepted number of modes.
    copy : bool, default=False
        Force a copy even if ``t`` is already a float64 array.

    Returns
    -------
    ndarray of float64
    """
    arr = np.array(t, dtype=np.float64) if copy else np.asarray(t, dtype=np.float64)
    if arr.ndim < min_order:
        raise ValueError(f"expected a tensor of order >= {min_order}, got order {arr.ndim}")
    if any(n < 1 for n in arr.shape):
        raise ValueError(f"all dimensions must be positive, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite values")
    return arr


def check_mode(mode: int, order: int) -> int:
    if not isinstance(mode, (int, np.integer)) or isinstance(mode, bool):
        raise TypeError(f"mode must be an integer, got {type(mode).__name__}")
    if not 0 <= mode < order:
        raise ValueError(f"mode {mode} out of range for order-{order} tensor")
    return int(mode)


def check_vectors(
    vectors: Sequence,
    dims: Sequence[int] | None = None,
    *,
    skip: int | None = None,
    unit: bool = False,
) -> list[np.ndarray]:
    """Validate a tuple of vectors, one per mode.

    ``skip`` names a mode whose vector is ignored (it may be ``None``).
    With ``unit=True`` every checked vector must have norm 1 within
    ``UNIT_NORM_TOL``.
    """
    vectors = list(vectors)
    if dims is not None and len(vectors) != len(dims):
        raise ValueError(f"expected {len(dims)} vectors, got {len(vectors)}")
    out = []
    for j, v in enumerate(vectors):
        if j == skip:
            out.append(None)
            continue
        v = np.asarray(v, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError(f"vector {j} must be one-dimensional")
        if dims is not None and v.shape[0] != dims[j]:
            raise ValueError(f"vector {j} has length {v.shape[0]}, expected {dims[j]}")
        if unit and abs(np.linalg.norm(v) - 1.0) > UNIT_NORM_TOL:
            raise ValueError(f"vector {j} is not unit norm")
        out.append(v)
    return out


def check_unit_interval(name: str, value: float) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return value


def check_nonnegative(name: str, value: float) -> float:
    value = float(value)
    if not value >= 0.0:
        raise ValueError(f"{name} must be nonnegative, got {value}")
    return value
