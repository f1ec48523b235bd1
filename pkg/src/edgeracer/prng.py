"""Splitmix64 deterministic PRNG for reproducible weight initialization.

The algorithm is fixed by name so two independent builds seeded identically
produce bit-identical parameter tensors.
"""

import numpy as np

_MASK = (1 << 64) - 1


class SplitMix64:
    """Classic splitmix64 stream (Steele, Lea, Flood 2014)."""

    def __init__(self, seed):
        self.state = int(seed) & _MASK

    def next_u64(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def next_float(self):
        """Uniform double in [0, 1) using the top 53 bits."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def uniform(self, low, high, n):
        """Array of n uniforms in [low, high), drawn in a fixed order."""
        u = np.array([self.next_float() for _ in range(n)], dtype=np.float64)
        return low + (high - low) * u


def hash_u64(*values):
    """Order-sensitive 64-bit hash of integers, for deriving sub-seeds."""
    h = 0xCBF29CE484222325
    for v in values:
        h ^= int(v) & _MASK
        h = (h * 0x100000001B3) & _MASK
        h ^= h >> 29
    return h
