"""Counter-based splittable random number generator.

Every random decision in the engine (weight init, shuffling, dropout
masks, augmentation) flows through a `SplitRng` owned by the caller.
There is no global generator. The design is counter-based: draw i of a
stream keyed by k is a pure function mix(k, i), so identical keys give
bit-identical streams regardless of how other streams interleave, and
a stream can be split into independent child streams by label.

The mixer is splitmix64 (Steele, Lea & Flood's finalizer), vectorized
over uint64 numpy arrays. All arithmetic wraps mod 2**64.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_SPLIT_SALT = np.uint64(0xD6E8FEB86659FD93)

_U64 = np.uint64
_MASK64 = 0xFFFFFFFFFFFFFFFF


def _mix64(z: np.ndarray) -> np.ndarray:
    # uint64 arithmetic wraps mod 2**64 by design
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _U64(30))) * _MIX1
        z = (z ^ (z >> _U64(27))) * _MIX2
        return z ^ (z >> _U64(31))


class SplitRng:
    """Deterministic stream of random numbers identified by a 64-bit key.

    Draw i of the stream is mix64(key + (i+1)*golden); the counter
    advances by the number of values drawn. `split(label)` derives an
    independent child stream without consuming from this one.
    """

    __slots__ = ("key", "counter")

    def __init__(self, seed: int, _counter: int = 0):
        self.key = _U64(seed & _MASK64)
        self.counter = _counter

    def split(self, *labels: int) -> "SplitRng":
        key = self.key
        with np.errstate(over="ignore"):
            for label in labels:
                salted = _U64((int(label) & _MASK64)) * _SPLIT_SALT + _GOLDEN
                key = _mix64(key ^ _mix64(np.asarray(salted, dtype=np.uint64)))
        return SplitRng(int(key))

    def _next_u64(self, n: int) -> np.ndarray:
        counters = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix64(self.key + counters * _GOLDEN)

    def uniform(self, shape, lo: float = 0.0, hi: float = 1.0, dtype=np.float64) -> np.ndarray:
        """Uniform draws in [lo, hi). Scalar shape means a flat vector."""
        if not lo < hi:
            raise ValueError(f"uniform requires lo < hi, got [{lo}, {hi})")
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        u01 = (self._next_u64(n) >> _U64(11)) * (1.0 / (1 << 53))
        out = lo + (hi - lo) * u01
        return out.reshape(shape).astype(dtype, copy=False)

    def normal(self, shape, dtype=np.float64) -> np.ndarray:
        """Standard normal draws via Box-Muller."""
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        m = (n + 1) // 2
        # u1 in (0,1] so the log is finite
        u1 = 1.0 - (self._next_u64(m) >> _U64(11)) * (1.0 / (1 << 53))
        u2 = (self._next_u64(m) >> _U64(11)) * (1.0 / (1 << 53))
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(shape).astype(dtype, copy=False)

    def keep_mask(self, shape, drop_p: float) -> np.ndarray:
        """Boolean mask with P(False) = drop_p per element.

        Integer threshold compare on the raw 53-bit draws: equivalent to
        uniform(shape) >= drop_p without the float conversion.
        """
        if not 0.0 <= drop_p < 1.0:
            raise ValueError(f"drop probability must be in [0, 1), got {drop_p}")
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        threshold = _U64(int(drop_p * (1 << 53)))
        return ((self._next_u64(n) >> _U64(11)) >= threshold).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n) (argsort of random keys)."""
        return np.argsort(self._next_u64(n), kind="stable")

    def coin(self, shape, p: float) -> np.ndarray:
        """Boolean array, True with probability p per element."""
        return self.uniform(shape) < p

    def integers(self, n: int, hi: int) -> np.ndarray:
        """n integers uniform in [0, hi). Bias is < hi/2**64, negligible here."""
        return (self._next_u64(n) % _U64(hi)).astype(np.int64)
