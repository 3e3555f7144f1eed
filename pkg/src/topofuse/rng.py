"""Counter-based pseudo-random streams.

Every stochastic choice in the package is drawn from a SplitMix64-style
stream: output i of a stream with key k is ``mix64(k + (i+1)*GOLDEN)``.
Because draws are a pure function of (key, counter) the same seed gives
bit-identical results on any platform, streams can be forked structurally
(per image, per epoch, per grid point) without serializing generator
state, and resuming a run mid-way needs no RNG bookkeeping at all.

Gaussians use the plain Box-Muller transform on f64 uniforms; no ziggurat
tables, so the values are reproducible everywhere numpy runs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def _mix64_int(z: int) -> int:
    m = 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & m
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & m
    return z ^ (z >> 31)


def _fold(key: int, word: int) -> int:
    """Absorb one 64-bit word into a stream key."""
    m = 0xFFFFFFFFFFFFFFFF
    k = key ^ _mix64_int((word + 0x9E3779B97F4A7C15) & m)
    return _mix64_int((k * 0xBF58476D1CE4E5B9) & m)


def _hash_tag(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFFFFFFFFFF
    if isinstance(tag, str):
        h = 0xCBF29CE484222325  # FNV-1a 64
        for b in tag.encode("utf-8"):
            h = ((h ^ b) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
        return h
    raise TypeError(f"stream tags must be int or str, got {type(tag).__name__}")


@dataclass
class Stream:
    """A forkable counter-based random stream."""

    key: int
    counter: int = field(default=0)

    def spawn(self, *tags) -> "Stream":
        """Derive an independent child stream from (key, tags)."""
        k = self.key
        for t in tags:
            k = _fold(k, _hash_tag(t))
        return Stream(key=k)

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        return _mix64(np.uint64(self.key) + idx * _GOLDEN)

    def uniforms(self, shape) -> np.ndarray:
        """f64 uniforms in [0, 1)."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        return u.reshape(shape)

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        return float(lo + (hi - lo) * self.uniforms(1)[0])

    def normals(self, shape) -> np.ndarray:
        """Standard normals via Box-Muller."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        m = (n + 1) // 2
        # u1 in (0, 1] so log is finite
        u1 = ((self._raw(m) >> np.uint64(11)).astype(np.float64) + 1.0) * (2.0 ** -53)
        u2 = (self._raw(m) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(shape)

    def integers(self, n: int, lo: int, hi: int) -> np.ndarray:
        """n integers uniform in [lo, hi). Floor-of-uniform; fine for small ranges."""
        if hi <= lo:
            raise ValueError("empty integer range")
        u = self.uniforms(n)
        return (lo + np.floor(u * (hi - lo))).astype(np.int64)

    def integer(self, lo: int, hi: int) -> int:
        return int(self.integers(1, lo, hi)[0])

    def choice(self, seq):
        return seq[self.integer(0, len(seq))]

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n)."""
        perm = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.integer(0, i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm
