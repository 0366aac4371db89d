"""Strict float64 array kernels.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 laid out
row-major; images use (batch, height, width, channel) axis order.  The
helpers here refuse implicit broadcasting: operands must have identical
shapes, or one of them must be a Python/NumPy scalar.
"""
import numbers

import numpy as np

from .errors import DimensionError, NumericError

DTYPE = np.float64


def as_tensor(x):
    """Return ``x`` as a C-contiguous float64 array with at least one axis."""
    arr = np.ascontiguousarray(x, dtype=DTYPE)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if any(d < 1 for d in arr.shape):
        raise DimensionError(f"tensor dimensions must be >= 1, got {arr.shape}")
    return arr


def _check_same(a, b, op):
    if isinstance(a, numbers.Number) or isinstance(b, numbers.Number):
        return
    a, b = np.asarray(a), np.asarray(b)
    if a.ndim == 0 or b.ndim == 0:
        return
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a, b):
    a, b = np.asarray(a, dtype=DTYPE), np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def add(a, b):
    _check_same(a, b, "add")
    return np.add(a, b, dtype=DTYPE)


def sub(a, b):
    _check_same(a, b, "sub")
    return np.subtract(a, b, dtype=DTYPE)


def neg(a):
    return np.negative(a, dtype=DTYPE)


def scale(a, s):
    if not np.isscalar(s) and np.ndim(s) != 0:
        raise DimensionError("scale: factor must be a scalar")
    return np.multiply(a, s, dtype=DTYPE)


def hadamard(a, b):
    _check_same(a, b, "hadamard")
    return np.multiply(a, b, dtype=DTYPE)


def _check_axis(a, axis):
    nd = np.ndim(a)
    axes = (axis,) if isinstance(axis, int) else tuple(axis or ())
    for ax in axes:
        if not -nd <= ax < nd:
            raise DimensionError(f"axis {ax} out of range for shape {np.shape(a)}")


def reduce_sum(a, axis=None):
    _check_axis(a, axis)
    return np.sum(a, axis=axis, dtype=DTYPE)


def reduce_mean(a, axis=None):
    _check_axis(a, axis)
    return np.mean(a, axis=axis, dtype=DTYPE)


def softmax_rows(f):
    """Row-wise softmax of an N x K matrix, stabilised by max subtraction."""
    f = np.asarray(f, dtype=DTYPE)
    if f.ndim != 2:
        raise DimensionError(f"softmax_rows expects a 2-D array, got {f.shape}")
    if np.isnan(f).any():
        raise NumericError("softmax_rows: NaN in input")
    z = f - f.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_rows(f):
    f = np.asarray(f, dtype=DTYPE)
    if f.ndim != 2:
        raise DimensionError(f"log_softmax_rows expects a 2-D array, got {f.shape}")
    z = f - f.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy(labels_onehot, raw):
    """Mean over rows of -sum_k y_k log softmax(raw)_k."""
    _check_same(labels_onehot, raw, "cross_entropy")
    return float(-np.sum(labels_onehot * log_softmax_rows(raw)) / raw.shape[0])


def accuracy(labels_onehot, raw):
    return float(np.mean(np.argmax(raw, axis=1) == np.argmax(labels_onehot, axis=1)))
