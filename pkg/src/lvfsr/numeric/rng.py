"""Deterministic, platform-independent random streams.

The generator is counter-based SplitMix64: draw ``i`` of a stream with seed
``s`` is ``mix64(s + (i + 1) * GOLDEN)``.  Streams are split by name, with the
child seed derived from the parent seed and a hash of the name, so adding a
parameter to a model never perturbs the draws of any other parameter.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

_MASK = (1 << 64) - 1
_INV_2_53 = float(2.0**-53)


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def _fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK
    return h


class Rng:
    """A named, splittable SplitMix64 stream.

    Identical seeds yield identical draw sequences on every platform; all
    arithmetic is 64-bit unsigned wrap-around.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        self._counter = 0

    def stream(self, name: str) -> "Rng":
        """Derive an independent child stream keyed by ``name``."""
        return Rng(_mix64(self.seed ^ _fnv1a64(name.encode("utf-8"))))

    def _next_u64(self, n: int) -> np.ndarray:
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            return _mix64_array(np.uint64(self.seed) + idx * np.uint64(_GOLDEN))

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """Uniform float64 draws in [low, high)."""
        n = int(np.prod(shape)) if shape else 1
        u = (self._next_u64(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        out = low + (high - low) * u
        return out.reshape(shape) if shape else out[0]

    def integers(self, n_draws: int, upper: int) -> np.ndarray:
        """``n_draws`` ints uniform in [0, upper). Modulo bias is negligible for small upper."""
        return (self._next_u64(n_draws) % np.uint64(upper)).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n) via argsort of fresh uniforms."""
        keys = self._next_u64(n)
        return np.argsort(keys, kind="stable")
