"""Deterministic counter-based random streams.

Reproducibility contract: every stochastic consumer (noise synthesis, patch
shuffling, weight init, validation splits) draws from its own named substream
of one master seed. A stream is a pure function of (seed, counter), so any
run can be replayed bit-for-bit from its config, and resuming a run continues
the streams exactly where they stopped.

The generator is splitmix64: output i of a stream with seed s is
mix64(s + (i+1)*GAMMA) with all arithmetic modulo 2**64. Uniform doubles take
the top 53 bits; Gaussians come from the Box-Muller transform on consecutive
pairs of uniforms.
"""
from __future__ import annotations

import math

import numpy as np

_MASK = 0xFFFFFFFFFFFFFFFF
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

_TWO53 = float(1 << 53)


def mix64(z: int) -> int:
    """splitmix64 finalizer on a Python int, modulo 2**64."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def _fnv1a(name: str) -> int:
    h = _FNV_OFFSET
    for b in name.encode("utf-8"):
        h = ((h ^ b) * _FNV_PRIME) & _MASK
    return h


def substream_seed(master: int, name: str, index: int = 0) -> int:
    """Seed of the substream (name, index) of a master seed.

    Distinct names or indices give unrelated streams; the derivation is pure
    arithmetic so it is stable across platforms and runs.
    """
    s = mix64((master & _MASK) ^ _fnv1a(name))
    return mix64((s + ((index + 1) * _GAMMA)) & _MASK)


def _mix_u64(z: np.ndarray) -> np.ndarray:
    # vectorized splitmix64 finalizer; uint64 arrays wrap silently in numpy
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


class Rng:
    """One counter-based stream. Instances are cheap; state is (seed, counter)."""

    def __init__(self, seed: int, counter: int = 0):
        self.seed = seed & _MASK
        self.counter = counter

    def stream(self, name: str, index: int = 0) -> "Rng":
        """Independent named substream; does not advance this stream."""
        return Rng(substream_seed(self.seed, name, index))

    def raw(self, n: int) -> np.ndarray:
        """Next n raw 64-bit outputs as uint64, advancing the counter."""
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        base = np.uint64(self.seed)
        gamma = np.uint64(_GAMMA)
        return _mix_u64(base + idx * gamma)

    def uniform(self, n: int) -> np.ndarray:
        """n doubles in [0, 1): top 53 bits of each raw output."""
        return np.asarray(self.raw(n) >> np.uint64(11), dtype=np.float64) / _TWO53

    def normal(self, n: int) -> np.ndarray:
        """n standard normal doubles via Box-Muller on pairs of raw outputs.

        u1 is shifted into (0, 1] so log(u1) is finite. An odd n still
        consumes a whole pair, keeping stream positions aligned.
        """
        pairs = (n + 1) // 2
        raw = self.raw(2 * pairs)
        u1 = (np.asarray(raw[0::2] >> np.uint64(11), dtype=np.float64) + 1.0) / _TWO53
        u2 = np.asarray(raw[1::2] >> np.uint64(11), dtype=np.float64) / _TWO53
        r = np.sqrt(-2.0 * np.log(u1))
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = r * np.cos(2.0 * math.pi * u2)
        out[1::2] = r * np.sin(2.0 * math.pi * u2)
        return out[:n]

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates using one uniform per swap position."""
        n = len(items)
        if n < 2:
            return
        u = self.uniform(n - 1)
        for i in range(n - 1, 0, -1):
            j = int(u[n - 1 - i] * (i + 1))
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> list[int]:
        idx = list(range(n))
        self.shuffle(idx)
        return idx
