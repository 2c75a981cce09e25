"""Deterministic random number generation.

The generator is SplitMix64 (Steele, Lea & Flood 2014): a 64-bit counter
advanced by the golden-ratio constant, with the output run through a
two-round xor-multiply finalizer.  The whole state is one u64, which makes
checkpointing trivial and keeps every training run bit-reproducible across
platforms and numpy versions.

Draw contracts (documented so streams are stable):
  * ``uniform``  - one u64 per value, mapped to [0, 1) via the top 53 bits.
  * ``normal``   - two consecutive u64s per value, Box-Muller cosine branch
    only (no cached second deviate), so generating n values then m values
    consumes exactly the same draws as generating n+m at once.
  * ``randint``  - one u64 per value, reduced modulo n (bias is < n/2**64,
    negligible for the small n used here).
"""

from __future__ import annotations

import numpy as np

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_TO_UNIT = 1.0 / float(1 << 53)


def _finalize(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Seeded generator; state is a single unsigned 64-bit integer."""

    def __init__(self, seed: int):
        self._state = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)

    @property
    def state(self) -> int:
        return int(self._state)

    @state.setter
    def state(self, value: int) -> None:
        self._state = np.uint64(value & 0xFFFFFFFFFFFFFFFF)

    def _raw(self, n: int) -> np.ndarray:
        """Next n outputs as uint64, vectorized but stream-identical to
        calling one at a time (state advances by a fixed increment)."""
        with np.errstate(over="ignore"):
            steps = np.arange(1, n + 1, dtype=np.uint64)
            z = self._state + _GOLDEN * steps
            out = _finalize(z)
            self._state = self._state + _GOLDEN * np.uint64(n)
        return out

    def next_u64(self) -> int:
        return int(self._raw(1)[0])

    def uniform(self, shape=None):
        """Doubles in [0, 1); scalar when shape is None."""
        n = 1 if shape is None else int(np.prod(shape))
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * _TO_UNIT
        if shape is None:
            return float(u[0])
        return u.reshape(shape)

    def normal(self, shape=None, scale=1.0):
        """Standard normals via Box-Muller; scalar when shape is None."""
        n = 1 if shape is None else int(np.prod(shape))
        raw = (self._raw(2 * n) >> np.uint64(11)).astype(np.float64) * _TO_UNIT
        u1 = raw[0::2]
        u2 = raw[1::2]
        z = np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)
        z *= scale
        if shape is None:
            return float(z[0])
        return z.reshape(shape)

    def randint(self, n: int) -> int:
        """Integer in [0, n)."""
        if n <= 0:
            raise ValueError("randint bound must be positive")
        return int(self._raw(1)[0] % np.uint64(n))

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n)."""
        perm = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.randint(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def spawn(self) -> "SplitMix64":
        """Independent child generator seeded from this stream."""
        return SplitMix64(self.next_u64())
