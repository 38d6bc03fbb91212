"""Counter-based splittable random streams.

Every stream is fully described by (seed, stream_id, counter): the i-th raw
64-bit word of a stream is a pure function of those three integers, so draws
can be replayed from any point and streams can be handed to workers without
coordination. Derived quantities consume a fixed number of words per value
(uniform: 1, gaussian: 2), which makes draw sequences invariant to batching.

The integer pipeline is exact on every platform; float transforms go through
libm (log/cos/sqrt), so bit-identity across platforms holds up to libm
rounding of those calls.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_STREAM_SALT = 0xD1B54A32D192ED03

_U_GOLDEN = np.uint64(_GOLDEN)
_TWO_NEG_53 = 2.0 ** -53


def _mix64_int(x: int) -> int:
    """Stafford mix13 finalizer on a Python int, mod 2**64."""
    x &= _MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK64
    x ^= x >> 31
    return x


def _mix64_array(x: np.ndarray) -> np.ndarray:
    # uint64 array ops wrap silently, unlike numpy scalars
    x = x ^ (x >> np.uint64(30))
    x = x * np.uint64(0xBF58476D1CE4E5B9)
    x = x ^ (x >> np.uint64(27))
    x = x * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def _stream_key(seed: int, stream_id: int) -> int:
    k = _mix64_int(seed ^ _GOLDEN)
    return _mix64_int(k ^ ((stream_id * _STREAM_SALT) & _MASK64))


@dataclass
class RngStream:
    """Single-consumer random stream; split() children, don't share."""

    seed: int
    stream_id: int = 0
    counter: int = 0
    _key: int = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._key = _stream_key(self.seed & _MASK64, self.stream_id & _MASK64)

    # raw words ---------------------------------------------------------

    def _words(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        return _mix64_array(np.uint64(self._key) + idx * _U_GOLDEN)

    # derived draws -----------------------------------------------------

    def uniform(self, shape=()) -> np.ndarray:
        """I.i.d. uniforms on [0, 1), one word each."""
        n = int(np.prod(shape)) if shape else 1
        u = (self._words(n) >> np.uint64(11)).astype(np.float64) * _TWO_NEG_53
        return u.reshape(shape) if shape else u[0]

    def gaussian(self, shape=()) -> np.ndarray:
        """I.i.d. standard normals via Box-Muller, two words each."""
        n = int(np.prod(shape)) if shape else 1
        w = self._words(2 * n)
        # u1 in (0, 1] so log is finite
        u1 = ((w[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * _TWO_NEG_53
        u2 = (w[1::2] >> np.uint64(11)).astype(np.float64) * _TWO_NEG_53
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return z.reshape(shape) if shape else z[0]

    def integers(self, bound: int, shape=()) -> np.ndarray:
        """Uniform ints in [0, bound); modulo bias < 2**-50 for desk-scale bounds."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        n = int(np.prod(shape)) if shape else 1
        v = (self._words(n) % np.uint64(bound)).astype(np.int64)
        return v.reshape(shape) if shape else int(v[0])

    def weighted_indices(self, weights: np.ndarray, count: int) -> np.ndarray:
        """Draw `count` indices with replacement, proportional to `weights`."""
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a nonempty 1-d array")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        total = w.sum()
        if total <= 0:
            raise ValueError("weights must not all be zero")
        cdf = np.cumsum(w / total)
        cdf[-1] = 1.0
        u = self.uniform((count,))
        return np.searchsorted(cdf, u, side="right").astype(np.int64)

    def shuffle(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n), Fisher-Yates, n words."""
        perm = np.arange(n, dtype=np.int64)
        w = self._words(n)
        for i in range(n - 1, 0, -1):
            j = int(w[n - 1 - i] % np.uint64(i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    # splitting ---------------------------------------------------------

    def spawn(self, tag: int) -> "RngStream":
        """Child stream with an id derived from (parent id, tag); counter 0."""
        child_id = _mix64_int((self.stream_id * _GOLDEN + (tag + 1) * _STREAM_SALT) & _MASK64)
        return RngStream(self.seed, child_id)

    def split(self, k: int) -> list["RngStream"]:
        return [self.spawn(i) for i in range(k)]
