"""Dense kernels, activations and initialisation.

Every weight, activation and gradient in the package is a plain
``numpy.ndarray``. The helpers here fix the numerical conventions the rest
of the code relies on: stable sigmoid and softmax, ReLU with its gradient
mask, and uniform Glorot initialisation.
"""

from __future__ import annotations

import numpy as np

Matrix = np.ndarray

DTYPES = {"float32": np.float32, "float64": np.float64}


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def resolve_dtype(precision: str | np.dtype | type) -> np.dtype:
    if isinstance(precision, str):
        try:
            return np.dtype(DTYPES[precision])
        except KeyError:
            raise ValueError(f"unknown precision {precision!r}, expected one of {sorted(DTYPES)}") from None
    return np.dtype(precision)


def make_rng(seed: int | list[int]) -> np.random.Generator:
    """Seeded generator; the same seed always yields the same draw sequence."""
    return np.random.default_rng(seed)


def gemm(a: Matrix, b: Matrix, accumulate_into: Matrix | None = None) -> Matrix:
    """Matrix product ``a @ b``, optionally added in place into ``accumulate_into``."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    if accumulate_into is None:
        return a @ b
    if accumulate_into.shape != (a.shape[0], b.shape[1]):
        raise ShapeError(
            f"accumulator {accumulate_into.shape} does not match product of {a.shape} and {b.shape}"
        )
    accumulate_into += a @ b
    return accumulate_into


def relu(x: Matrix) -> Matrix:
    return np.maximum(x, 0)


def relu_grad(x: Matrix, upstream: Matrix) -> Matrix:
    """Pass ``upstream`` through where the pre-activation ``x`` is positive."""
    if x.shape != upstream.shape:
        raise ShapeError(f"relu_grad shapes differ: {x.shape} vs {upstream.shape}")
    return np.where(x > 0, upstream, 0).astype(upstream.dtype, copy=False)


def sigmoid(x: Matrix) -> Matrix:
    # exp(-|x|) never overflows, so saturation gives exact 0/1 instead of NaN
    x = np.asarray(x)
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1 / (1 + z), z / (1 + z)).astype(x.dtype, copy=False)


def sigmoid_grad(y: Matrix, upstream: Matrix) -> Matrix:
    """Gradient through a sigmoid, given its *output* ``y``."""
    return upstream * y * (1 - y)


def tanh_act(x: Matrix) -> Matrix:
    return np.tanh(x)


def tanh_grad(y: Matrix, upstream: Matrix) -> Matrix:
    """Gradient through tanh, given its *output* ``y``."""
    return upstream * (1 - y * y)


def softmax_rows(logits: Matrix) -> Matrix:
    """Softmax over the last axis, with per-row max subtraction."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def glorot_bound(rows: int, cols: int) -> float:
    return float(np.sqrt(6.0 / (rows + cols)))


def glorot_init(rows: int, cols: int, rng: np.random.Generator, dtype=np.float64) -> Matrix:
    """Uniform draw in [-b, b] with b = sqrt(6 / (rows + cols))."""
    if rows < 1 or cols < 1:
        raise ShapeError(f"glorot_init needs positive dims, got {rows}x{cols}")
    b = glorot_bound(rows, cols)
    return rng.uniform(-b, b, size=(rows, cols)).astype(dtype)
