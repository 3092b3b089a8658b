"""Portable counter-based random numbers.

Every draw is a pure function of ``(seed, counter)`` through the SplitMix64
finalizer, so a seed produces the same stream on every platform and numpy
version. Gaussian draws use Box-Muller on top of the uniform stream.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _splitmix(z: np.ndarray) -> np.ndarray:
    z = z.copy()
    z ^= z >> np.uint64(30)
    z *= _MIX1
    z ^= z >> np.uint64(27)
    z *= _MIX2
    z ^= z >> np.uint64(31)
    return z


def mix_seed(*parts: int) -> int:
    """Hash integers into one 64-bit seed (used to split streams per item)."""
    acc = np.array([0], dtype=np.uint64)
    for p in parts:
        acc = _splitmix(acc ^ np.array([int(p) & _MASK64], dtype=np.uint64)) + _GOLDEN
    return int(_splitmix(acc)[0])


class Rng:
    """Seeded stream of 64-bit words; ``counter`` counts words consumed."""

    __slots__ = ("seed", "counter")

    def __init__(self, seed: int, counter: int = 0) -> None:
        self.seed = int(seed) & _MASK64
        self.counter = int(counter)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, counter={self.counter})"

    def spawn(self, index: int) -> "Rng":
        """Independent child stream for item ``index``; does not advance self."""
        return Rng(mix_seed(self.seed, index))

    def bits(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        return _splitmix(np.uint64(self.seed) + idx * _GOLDEN)

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0):
        """Uniform draws on ``[low, high)`` with 53 bits of resolution."""
        n = 1 if size is None else int(np.prod(size))
        u = (self.bits(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        u = low + (high - low) * u
        if size is None:
            return float(u[0])
        return u.reshape(size)

    def normal(self, size=None, loc: float = 0.0, scale: float = 1.0):
        n = 1 if size is None else int(np.prod(size))
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        r = np.sqrt(-2.0 * np.log1p(-u[:pairs]))  # 1 - u is in (0, 1]
        theta = 2.0 * np.pi * u[pairs:]
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        z = loc + scale * z
        if size is None:
            return float(z[0])
        return z.reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")
