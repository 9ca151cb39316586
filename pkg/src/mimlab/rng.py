"""Deterministic random streams.

Every random decision in the package flows from one 64-bit master seed.
Component streams are derived with splitmix64 over (seed, label, indices),
so e.g. changing the secondary-mask ratio never perturbs the sampling draw
and re-runs are bit-identical across platforms.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One splitmix64 step; returns the mixed 64-bit output."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _label_hash(label: str) -> int:
    # FNV-1a, 64-bit: stable across runs unlike hash().
    h = 0xCBF29CE484222325
    for b in label.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & _MASK64
    return h


def derive_seed(master: int, *path: object) -> int:
    """Derive a child seed from a master seed and a path of labels/indices."""
    s = master & _MASK64
    for part in path:
        if isinstance(part, str):
            s = splitmix64(s ^ _label_hash(part))
        else:
            s = splitmix64(s ^ (int(part) & _MASK64))
    return s


class SplitMix64:
    """Tiny sequential PRNG used where bit-identical cross-platform draws
    matter (mask sampling). numpy generators are used for bulk numeric noise.
    """

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return (z ^ (z >> 31)) & _MASK64

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n) via rejection (no modulo bias)."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = _MASK64 - (_MASK64 % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def uniform(self) -> float:
        # 53-bit mantissa in [0, 1)
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample_without_replacement(self, n: int, k: int) -> list[int]:
        """First k entries of a shuffled [0, n); returned sorted."""
        idx = list(range(n))
        self.shuffle(idx)
        return sorted(idx[:k])


def np_stream(master: int, *path: object) -> np.random.Generator:
    """numpy generator seeded from a derived stream (weight init, noise)."""
    return np.random.Generator(np.random.PCG64(derive_seed(master, *path)))
