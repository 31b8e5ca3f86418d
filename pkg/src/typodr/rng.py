"""Portable seeded randomness.

Everything that must be reproducible across platforms and Python builds
(typo generation, seed derivation for repeats and epochs) runs on
SplitMix64, a tiny counter-based 64-bit generator with a published
reference implementation.  Numeric-heavy sampling (parameter init,
dataset synthesis) uses numpy's PCG64, which is likewise stable across
platforms for a fixed seed.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix(z: int) -> int:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """SplitMix64 stream; next_u64 advances the state by the golden gamma."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        return _mix(self._state)

    def randrange(self, n: int) -> int:
        """Uniform-ish integer in [0, n).  Plain modulo; the bias at
        n << 2^64 is far below anything observable and determinism is
        what matters here."""
        if n <= 0:
            raise ValueError("randrange needs n >= 1")
        return self.next_u64() % n

    def choice(self, seq):
        return seq[self.randrange(len(seq))]


def fnv1a64(data: bytes) -> int:
    """FNV-1a 64-bit hash: h = 0xcbf29ce484222325; per byte h ^= b, h *= 0x100000001b3."""
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & _MASK64
    return h


def derive_seed(base: int, *salts) -> int:
    """Deterministically derive a child seed from a base seed and salts.

    Integer salts are mixed directly; strings are hashed with FNV-1a
    first.  Order-sensitive.
    """
    z = base & _MASK64
    for salt in salts:
        if isinstance(salt, str):
            salt = fnv1a64(salt.encode("utf-8"))
        z = _mix((z + _GOLDEN) & _MASK64)
        z = _mix((z ^ (salt & _MASK64)) + _GOLDEN & _MASK64)
    return z
