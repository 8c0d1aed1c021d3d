"""Dense matrix helpers shared by the plain and the differentiable code paths.

Every matrix in this package is a 2-D, C-ordered, float64 numpy array.
File formats carry float32; values are widened to float64 on load so that
gradient checks have headroom. The kernels here are the single source of
truth for the arithmetic: the autodiff layer calls the same functions for
its forward values.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError, DimensionError, EmptyInputError, ParameterError

__all__ = [
    "as_matrix",
    "check_finite",
    "matmul",
    "softmax_rows",
    "sigmoid",
    "relu",
    "mean_rows",
]


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array and reject non-finite entries.

    1-D input is treated as a single row. Raises DimensionError for other
    ranks and DataError-family errors for NaN/Inf.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    check_finite(arr, name)
    return np.ascontiguousarray(arr)


def check_finite(arr: np.ndarray, name: str = "matrix") -> None:
    if arr.size and not np.isfinite(arr).all():
        raise DataError(f"{name} contains non-finite entries")


def matmul(a, b) -> np.ndarray:
    """Matrix product with an explicit shape check naming both operands."""
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul shape mismatch: {a.shape[0]}x{a.shape[1]} @ {b.shape[0]}x{b.shape[1]}"
        )
    return a @ b


def softmax_rows(x, temperature: float = 1.0) -> np.ndarray:
    """Row-wise softmax of x/temperature, stabilized by max subtraction.

    Each output row sums to 1 within 1e-12 for any finite input.
    """
    if not (temperature > 0.0):
        raise ParameterError(f"temperature must be positive, got {temperature}")
    x = as_matrix(x, "softmax input")
    return _softmax_rows_kernel(x, float(temperature))


def _softmax_rows_kernel(x: np.ndarray, temperature: float) -> np.ndarray:
    z = x / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def sigmoid(x):
    """Numerically stable logistic function; accepts scalars or arrays."""
    scalar = np.isscalar(x) or (isinstance(x, np.ndarray) and x.ndim == 0)
    out = _sigmoid_kernel(np.asarray(x, dtype=np.float64))
    return float(out) if scalar else out


def _sigmoid_kernel(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def mean_rows(x) -> np.ndarray:
    """Column-wise mean as a 1xD row; errors on zero rows."""
    x = as_matrix(x, "mean input")
    if x.shape[0] == 0:
        raise EmptyInputError("cannot average zero rows")
    return x.mean(axis=0, keepdims=True)
