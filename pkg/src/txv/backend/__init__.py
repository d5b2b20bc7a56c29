"""Kernel backend selection.

The compiled Cython kernels are used when available; the numpy fallback
otherwise. Set TXV_BACKEND=py to force the fallback or TXV_BACKEND=c to
require the compiled extension (ImportError if it is missing).
"""

import os

import numpy as np

from ..errors import DimensionError

_requested = os.environ.get("TXV_BACKEND", "auto").lower()
if _requested not in ("auto", "py", "c"):
    raise ValueError(f"TXV_BACKEND must be 'py', 'c' or 'auto', got {_requested!r}")

if _requested == "py":
    from . import py_kernels as _impl

    BACKEND = "py"
else:
    try:
        from . import _ckernels as _impl

        BACKEND = "c"
    except ImportError:
        if _requested == "c":
            raise
        from . import py_kernels as _impl

        BACKEND = "py"


def _ckernels_available() -> bool:
    try:
        from . import _ckernels  # noqa: F401
    except ImportError:
        return False
    return True


def _as2d(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-d array, got shape {a.shape}")
    return a


def matmul(a, b):
    """Matrix product a @ b with a backend-fixed summation order."""
    a = _as2d(a)
    b = _as2d(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return np.asarray(_impl.matmul(a, b))


def linear_relu(x, w, bias):
    """ReLU(x @ w.T + bias) for a batch of rows x."""
    x = _as2d(x)
    w = _as2d(w)
    bias = np.asarray(bias, dtype=np.float64)
    if x.shape[1] != w.shape[1] or bias.shape != (w.shape[0],):
        raise DimensionError(
            f"linear_relu shape mismatch: x {x.shape}, w {w.shape}, b {bias.shape}"
        )
    return np.asarray(_impl.linear_relu(x, w, bias))
