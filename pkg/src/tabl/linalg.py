"""Dense real-matrix kernel.

Matrices are plain numpy arrays. Every helper here accepts a single 2-D
matrix or a stack of matrices with one leading sample axis ``(N, rows, cols)``;
the two trailing axes are the matrix axes and are validated strictly. The only
broadcasting allowed is a 2-D operand meeting a stack (a weight applied to a
batch of inputs).
"""

import numpy as np

from .errors import ShapeError, ValidationError

FLOAT64 = np.float64
FLOAT32 = np.float32

_DTYPES = {"float64": FLOAT64, "float32": FLOAT32, "f8": FLOAT64, "f4": FLOAT32}


def resolve_dtype(dtype):
    """Map ``"float64"``/``"float32"`` (or a numpy dtype) to a numpy scalar type."""
    if isinstance(dtype, str):
        try:
            return _DTYPES[dtype]
        except KeyError:
            raise ValidationError(f"unsupported dtype {dtype!r}; use float64 or float32") from None
    dt = np.dtype(dtype).type
    if dt not in (FLOAT64, FLOAT32):
        raise ValidationError(f"unsupported dtype {dtype!r}; use float64 or float32")
    return dt


def as_matrix(data, dtype=FLOAT64):
    """Convert nested sequences / arrays into a 2-D (or stacked 3-D) float array."""
    arr = np.asarray(data, dtype=resolve_dtype(dtype))
    if arr.ndim == 1:
        raise ShapeError("expected a matrix, got a vector; reshape to (n, 1) or (1, n)", arr.shape)
    if arr.ndim not in (2, 3) or 0 in arr.shape:
        raise ShapeError("expected a non-empty 2-D matrix or a stack of matrices", arr.shape)
    return arr


def _check_rank(a, name):
    if a.ndim not in (2, 3):
        raise ShapeError(f"{name} must be a matrix or a stack of matrices", a.shape)


def check_finite(a, name="matrix"):
    """Raise ``ValidationError`` if ``a`` holds NaN or Inf."""
    a = np.asarray(a)
    if not np.all(np.isfinite(a)):
        bad = np.argwhere(~np.isfinite(a))[0]
        raise ValidationError(f"{name} contains non-finite value at index {tuple(int(i) for i in bad)}")
    return a


def matmul(a, b):
    """Matrix product with shape validation."""
    a = np.asarray(a)
    b = np.asarray(b)
    _check_rank(a, "left operand")
    _check_rank(b, "right operand")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul dimension mismatch", a.shape, b.shape)
    if a.ndim == 3 and b.ndim == 3 and a.shape[0] != b.shape[0]:
        raise ShapeError("matmul batch size mismatch", a.shape, b.shape)
    return np.matmul(a, b)


def hadamard(a, b):
    """Elementwise product of equally shaped matrices."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError("hadamard requires equal shapes", a.shape, b.shape)
    return a * b


def softmax_rows(e, check=True):
    """Row-wise softmax over the last axis, stabilised by subtracting the row max.

    ``check=False`` skips the rank and finiteness checks for callers that
    have already validated their input.
    """
    e = np.asarray(e)
    if check:
        _check_rank(e, "softmax input")
        check_finite(e, "softmax input")
    # ufunc reductions skip the ndarray.max/sum wrappers; this sits on the TABL hot path
    z = np.exp(e - np.maximum.reduce(e, axis=-1, keepdims=True))
    z /= np.add.reduce(z, axis=-1, keepdims=True)
    return z


def row_sums(a):
    return np.asarray(a).sum(axis=-1, keepdims=True)


def col_means(a):
    return np.asarray(a).mean(axis=-2)
