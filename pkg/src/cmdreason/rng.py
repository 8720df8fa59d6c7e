"""Minimal portable PRNG used everywhere a seed must mean the same thing forever.

SplitMix64 (Steele, Lea & Flood) is a tiny 64-bit mixer with published
reference outputs, so identical seeds produce identical streams on any
platform and any Python version.  The stdlib Mersenne Twister would also be
stable in practice, but its stream depends on seeding details we do not
control; this keeps the whole contract in ~20 lines we do.
"""
from __future__ import annotations

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


class SplitMix64:
    """Deterministic 64-bit generator; one instance per seeded operation."""

    __slots__ = ("_state",)

    def __init__(self, seed: int) -> None:
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        """Return the next 64-bit output of the stream."""
        self._state = (self._state + _GAMMA) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def next_bit(self) -> bool:
        """Fair coin flip: the top bit of the next output."""
        return bool(self.next_u64() >> 63)

    def randrange(self, bound: int) -> int:
        """Integer in [0, bound). Modulo reduction; bias is ~2**-64 per draw."""
        if bound < 1:
            raise ValueError(f"bound must be >= 1, got {bound}")
        return self.next_u64() % bound
