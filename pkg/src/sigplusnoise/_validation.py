"""Input validation helpers shared by the estimators and the numeric modules."""
import numpy as np
from sklearn.utils import check_array

from .exceptions import DimensionError, SpecError

SYMMETRY_RTOL = 1e-12
UNIT_NORM_TOL = 1e-10


def as_matrix(M, name="matrix"):
    """Return ``M`` as a finite 2-D float array, raising DimensionError otherwise."""
    try:
        arr = check_array(M, dtype=np.float64, ensure_all_finite=True,
                          ensure_min_samples=1, ensure_min_features=1)
    except ValueError as exc:
        raise DimensionError(f"{name}: {exc}") from exc
    return arr


def as_symmetric(M, name="matrix", rtol=SYMMETRY_RTOL):
    arr = as_matrix(M, name)
    if arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {arr.shape}")
    scale = max(1.0, float(np.max(np.abs(arr))))
    if np.max(np.abs(arr - arr.T)) > rtol * scale:
        raise DimensionError(f"{name} is not symmetric to relative tolerance {rtol:g}")
    return arr


def as_vector(v, length=None, name="vector"):
    arr = np.asarray(v, dtype=np.float64).ravel()
    if arr.size == 0 or not np.all(np.isfinite(arr)):
        raise DimensionError(f"{name} must be a non-empty finite vector")
    if length is not None and arr.size != length:
        raise DimensionError(f"{name} has length {arr.size}, expected {length}")
    return arr


def as_unit_vector(v, length=None, name="vector", tol=UNIT_NORM_TOL):
    arr = as_vector(v, length, name)
    norm = np.linalg.norm(arr)
    if abs(norm - 1.0) > tol:
        raise SpecError(f"{name} must have unit norm (got {norm:.12g})")
    return arr


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or int(value) != value or value < minimum:
        raise SpecError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_descending(values, name="eigenvalues", atol=1e-10):
    arr = as_vector(values, name=name)
    if np.any(np.diff(arr) > atol * max(1.0, float(np.max(np.abs(arr))))):
        raise SpecError(f"{name} must be sorted in non-increasing order")
    return arr
