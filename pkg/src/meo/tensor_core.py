"""Dense matrix helpers and a reproducible random stream.

Matrices are plain 2-D numpy arrays (rows = tokens, cols = features).
Everything defaults to float64; float32 input is preserved so the benchmark
can time single-precision forwards.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "DimensionError",
    "EmptyInputError",
    "Rng",
    "as_matrix",
    "matmul",
    "mean_rows",
    "softmax_rows",
]


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class EmptyInputError(ValueError):
    """Raised when an operation needs at least one row."""


def as_matrix(a, dtype=None) -> np.ndarray:
    """Return ``a`` as a 2-D floating array.

    Float32/float64 inputs keep their dtype unless ``dtype`` is given;
    anything else becomes float64.
    """
    arr = np.asarray(a)
    if dtype is None:
        dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float64
    arr = arr.astype(dtype, copy=False)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {arr.shape}")
    return arr


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def softmax_rows(m) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction."""
    m = as_matrix(m)
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def mean_rows(m) -> np.ndarray:
    """Arithmetic mean over rows, returned as a 1 x cols matrix.

    Computed as ``m[0] + mean(m - m[0])`` so identical rows average to
    themselves exactly.
    """
    m = as_matrix(m)
    if m.shape[0] == 0:
        raise EmptyInputError("mean_rows needs at least one row")
    base = m[:1]
    return base + (m - base).mean(axis=0, keepdims=True)


_MASK64 = (1 << 64) - 1
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _as_shape(shape) -> tuple[int, ...]:
    if isinstance(shape, (int, np.integer)):
        return (int(shape),)
    return tuple(int(k) for k in shape)


class Rng:
    """SplitMix64 stream.

    The n-th output is ``mix(seed + n * gamma)``, so blocks of draws are
    computed vectorised and the sequence is identical on every platform.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._count = 0

    def next_u64(self, count: int) -> np.ndarray:
        steps = np.arange(self._count + 1, self._count + 1 + count, dtype=np.uint64)
        self._count += count
        with np.errstate(over="ignore"):
            return _mix64(np.uint64(self.seed) + steps * _GAMMA)

    def random(self, shape) -> np.ndarray:
        """Uniform floats in [0, 1) with 53 bits of resolution."""
        shape = _as_shape(shape)
        count = int(np.prod(shape, dtype=np.int64))
        bits = self.next_u64(count) >> np.uint64(11)
        return (bits.astype(np.float64) * 2.0**-53).reshape(shape)

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return low + (high - low) * self.random(shape)

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        """Standard normal draws via Box-Muller (cosine branch only)."""
        shape = _as_shape(shape)
        count = int(np.prod(shape, dtype=np.int64))
        u = self.random((2, count))
        r = np.sqrt(-2.0 * np.log1p(-u[0]))
        return (scale * r * np.cos(2.0 * np.pi * u[1])).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = np.arange(n)
        if n < 2:
            return perm
        draws = self.random(n - 1)
        for i in range(n - 1, 0, -1):
            j = int(draws[n - 1 - i] * (i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm
