"""Deterministic randomness: splitmix64 streams and seed derivation.

Every shuffle and sample in the pipeline draws from a splitmix64 stream
(Steele et al., the generator behind java.util.SplittableRandom) so that
identical seeds reproduce identical artifacts across platforms and
implementations. Per-stage seeds are derived from a single root seed via
SHA-256 so re-running one stage never perturbs its siblings.
"""

from __future__ import annotations

import hashlib

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


class SplitMix64:
    """splitmix64 PRNG. State advances by the golden-ratio gamma; each
    output is the finalizer mix of the new state."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) via masked rejection (no modulo bias)."""
        if n <= 0:
            raise ValueError("below() requires n > 0")
        mask = (1 << (n - 1).bit_length()) - 1 if n > 1 else 0
        while True:
            r = self.next_u64() & mask
            if r < n:
                return r

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle, iterating from the last index down."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]


def derive_seed(root_seed: int, label: str) -> int:
    """Derive a 64-bit stage seed: first 8 bytes (big-endian) of
    SHA-256 over "<root_seed>\\x1f<label>"."""
    digest = hashlib.sha256(f"{root_seed}\x1f{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def stable_hash64(text: str) -> int:
    """Stable 64-bit hash of a string (first 8 bytes of SHA-256, big-endian)."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")
