"""Scalar/vector/matrix primitives used by the model.

Everything here operates on 64-bit numpy arrays and is a pure function of
its inputs. Reductions delegate to the kernel backend, whose summation
order is fixed, so repeated calls are bitwise identical.
"""

from enum import Enum
from typing import Callable, NamedTuple, Optional, Tuple

import numpy as np

from .errors import DimensionError, NumericalError

#: below this product of norms, cosine similarity is defined as 0.0
NORM_GUARD = 1e-12

#: default finite-difference step / relative tolerance (f64 sweet spot)
FD_STEP = 1e-6
FD_TOL = 1e-4


class Axis(Enum):
    """Softmax direction: COLUMNS normalizes each column (dim=0), ROWS each row."""

    COLUMNS = 0
    ROWS = 1


def as_vec(x, name="vector"):
    """Validate and return a finite 1-d float64 array."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"{name} must be 1-d, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise NumericalError(f"{name} contains non-finite entries")
    return v


def as_mat(x, name="matrix"):
    """Validate and return a finite 2-d float64 array."""
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-d, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericalError(f"{name} contains non-finite entries")
    return m


def cosine_similarity(a, b) -> float:
    a = as_vec(a, "a")
    b = as_vec(b, "b")
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    norms = float(np.linalg.norm(a)) * float(np.linalg.norm(b))
    if norms < NORM_GUARD:
        return 0.0
    return float(np.dot(a, b) / norms)


def softmax(m, axis: Axis):
    """Stabilized softmax along the chosen axis of a non-empty matrix."""
    m = as_mat(m)
    if m.size == 0:
        raise DimensionError("softmax input must be non-empty")
    nd = 0 if axis is Axis.COLUMNS else 1
    shifted = m - m.max(axis=nd, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=nd, keepdims=True)


class AffineCache(NamedTuple):
    w: np.ndarray
    xm: np.ndarray  # input after the dropout mask
    mask: Optional[np.ndarray]
    pre: np.ndarray  # pre-activation W @ xm + b


def affine_relu_forward(w, b, x, drop_mask=None) -> Tuple[np.ndarray, AffineCache]:
    """y = ReLU(W @ (x * drop_mask) + b); the cache feeds the backward pass."""
    w = as_mat(w, "W")
    b = as_vec(b, "b")
    x = as_vec(x, "x")
    if w.shape[1] != x.shape[0]:
        raise DimensionError(f"W has {w.shape[1]} columns but x has dim {x.shape[0]}")
    if b.shape[0] != w.shape[0]:
        raise DimensionError(f"b has dim {b.shape[0]} but W has {w.shape[0]} rows")
    if drop_mask is not None:
        drop_mask = as_vec(drop_mask, "drop_mask")
        if drop_mask.shape != x.shape:
            raise DimensionError("drop_mask must match x")
        xm = x * drop_mask
    else:
        xm = x
    pre = w @ xm + b
    y = np.maximum(pre, 0.0)
    return y, AffineCache(w, xm, drop_mask, pre)


def affine_relu_backward(cache: AffineCache, dy):
    """Exact reverse-mode gradients; the ReLU subgradient at 0 is 0."""
    dy = as_vec(dy, "dy")
    if dy.shape != cache.pre.shape:
        raise DimensionError(f"dy has dim {dy.shape[0]}, expected {cache.pre.shape[0]}")
    dpre = dy * (cache.pre > 0.0)
    dw = np.outer(dpre, cache.xm)
    db = dpre
    dx = cache.w.T @ dpre
    if cache.mask is not None:
        dx = dx * cache.mask
    return dw, db, dx


def dropout_mask(rng: np.random.Generator, dim: int, p: float):
    """Inverted-dropout mask: entries are 0 with probability p, else 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if p == 0.0:
        return np.ones(dim)
    keep = rng.random(dim) >= p
    return keep / (1.0 - p)


def grad_check(
    loss_fn: Callable[[np.ndarray], Tuple[float, np.ndarray]],
    params,
    h: float = FD_STEP,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` maps a flat parameter vector to (loss, analytic gradient).
    The denominator is max(1, |analytic|, |numeric|) per coordinate.
    """
    if not 0.0 < h <= 1e-3:
        raise ValueError(f"finite-difference step must be in (0, 1e-3], got {h}")
    params = as_vec(params, "params")
    loss, grad = loss_fn(params)
    if not np.isfinite(loss):
        raise NumericalError("loss is non-finite at the evaluation point")
    grad = as_vec(grad, "analytic gradient")
    if grad.shape != params.shape:
        raise DimensionError("analytic gradient shape does not match params")
    worst = 0.0
    for i in range(params.shape[0]):
        bumped = params.copy()
        bumped[i] = params[i] + h
        up, _ = loss_fn(bumped)
        bumped[i] = params[i] - h
        down, _ = loss_fn(bumped)
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericalError(f"loss non-finite while perturbing coordinate {i}")
        numeric = (up - down) / (2.0 * h)
        denom = max(1.0, abs(grad[i]), abs(numeric))
        worst = max(worst, abs(grad[i] - numeric) / denom)
    return worst
