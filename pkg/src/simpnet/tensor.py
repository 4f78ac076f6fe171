"""Rank-4 tensor conventions and elementwise utilities.

All layer I/O is a C-contiguous numpy array of shape (n, c, h, w) in
float32 or float64 ("a tensor4" below). Index (i, j, y, x) maps to flat
offset ((i*c + j)*h + y)*w + x, i.e. plain row-major order with w
fastest. float64 is used in gradient-check mode, float32 in training;
dtype travels with the array, never as a global switch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .rng import SplitRng

DTYPES = {"f32": np.float32, "f64": np.float64}

# n*c*h*w above this is refused outright rather than left to the allocator
MAX_ELEMENTS = 2**40


@dataclass(frozen=True)
class Shape4:
    n: int
    c: int
    h: int
    w: int

    def __post_init__(self):
        for name, v in (("n", self.n), ("c", self.c), ("h", self.h), ("w", self.w)):
            if v < 1:
                raise ShapeError(f"dim {name} must be >= 1, got {v}")
        if self.n * self.c * self.h * self.w > MAX_ELEMENTS:
            raise ShapeError(f"shape {self} exceeds addressable size")

    @property
    def size(self) -> int:
        return self.n * self.c * self.h * self.w

    def astuple(self) -> tuple[int, int, int, int]:
        return (self.n, self.c, self.h, self.w)


def as_shape4(shape) -> Shape4:
    return shape if isinstance(shape, Shape4) else Shape4(*shape)


def check_tensor4(x: np.ndarray) -> np.ndarray:
    if x.ndim != 4:
        raise ShapeError(f"expected rank-4 tensor, got rank {x.ndim}")
    if x.dtype not in (np.float32, np.float64):
        raise ShapeError(f"expected f32/f64 tensor, got {x.dtype}")
    if min(x.shape) < 1:
        raise ShapeError(f"all dims must be >= 1, got {x.shape}")
    return x


def zeros(shape, dtype=np.float32) -> np.ndarray:
    return np.zeros(as_shape4(shape).astuple(), dtype=dtype)


def fill_random_uniform(shape, lo: float, hi: float, rng: SplitRng, dtype=np.float32) -> np.ndarray:
    """Uniform tensor in [lo, hi); same rng key+counter gives identical bytes."""
    return rng.uniform(as_shape4(shape).astuple(), lo, hi, dtype=dtype)


def flat_offset(shape, i: int, j: int, y: int, x: int) -> int:
    s = as_shape4(shape)
    if not (0 <= i < s.n and 0 <= j < s.c and 0 <= y < s.h and 0 <= x < s.w):
        raise ShapeError(f"index ({i},{j},{y},{x}) out of bounds for {s}")
    return ((i * s.c + j) * s.h + y) * s.w + x


def unflatten_offset(shape, offset: int) -> tuple[int, int, int, int]:
    s = as_shape4(shape)
    if not 0 <= offset < s.size:
        raise ShapeError(f"offset {offset} out of bounds for {s}")
    offset, x = divmod(offset, s.w)
    offset, y = divmod(offset, s.h)
    i, j = divmod(offset, s.c)
    return (i, j, y, x)


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise sum; dims must match exactly (no broadcasting)."""
    if a.shape != b.shape:
        raise ShapeError(f"add dims mismatch: {a.shape} vs {b.shape}")
    return a + b


def mul_scalar(a: np.ndarray, s: float) -> np.ndarray:
    return a * a.dtype.type(s)


def tensor_sum(a: np.ndarray) -> float:
    return float(a.sum())


def max_reduce(a: np.ndarray) -> float:
    return float(a.max())
