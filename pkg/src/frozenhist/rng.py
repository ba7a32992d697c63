"""Deterministic random number generation.

Everything random in this package flows through the counter-based SplitMix64
generator below.  SplitMix64 (Steele, Lea & Flood, "Fast splittable
pseudorandom number generators", OOPSLA 2014) produces its k-th output as
``mix64(seed + (k+1) * GAMMA)`` where ``mix64`` is its finalizer, which makes
the whole stream a pure function of (seed, counter): scalar draws run on
Python integers, block draws on vectorized uint64 arithmetic, and both yield
identical values at identical counters.  Gaussians come from the Box-Muller
transform on consecutive counter pairs.  Results are identical across
platforms and call patterns.

Stream splitting: sub-streams are derived as ``mix64(seed XOR fnv1a64(name))``
so that independent components (weight init, environments, action sampling,
...) never share counters.
"""

from __future__ import annotations

import math

import numpy as np

_GAMMA_I = 0x9E3779B97F4A7C15
_MIX1_I = 0xBF58476D1CE4E5B9
_MIX2_I = 0x94D049BB133111EB
_MASK_I = 0xFFFFFFFFFFFFFFFF

_GAMMA = np.uint64(_GAMMA_I)
_MIX1 = np.uint64(_MIX1_I)
_MIX2 = np.uint64(_MIX2_I)

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

# 2^-53, the spacing of uniform doubles in [0, 1)
_U53 = float(2.0**-53)
_TWO_PI = 2.0 * math.pi


def _mix64_int(z: int) -> int:
    """SplitMix64 finalizer on plain Python integers (wrapping at 64 bits)."""
    z = ((z ^ (z >> 30)) * _MIX1_I) & _MASK_I
    z = ((z ^ (z >> 27)) * _MIX2_I) & _MASK_I
    return z ^ (z >> 31)


def _mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer on uint64 arrays (wrapping arithmetic)."""
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def split_seed(seed: int, name: str) -> int:
    """Derive the sub-seed for a named component stream.

    ``mix64(seed XOR fnv1a64(name))``; documented so runs can be reproduced
    component by component.
    """
    h = _FNV_OFFSET
    for byte in name.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK_I
    z = (seed ^ h) & _MASK_I
    return _mix64_int((z + _GAMMA_I) & _MASK_I)


def normals_at(seed: int, index: int, n: int) -> np.ndarray:
    """Random-access standard normals: entries ``index .. index+n-1``.

    Each normal i consumes the raw counter pair (2i, 2i+1) of the stream, so
    any block can be regenerated without replaying earlier draws.  The layout
    differs from :meth:`Rng.normal` (which packs two normals per pair) but is
    equally deterministic.
    """
    ks = np.arange(index, index + n, dtype=np.uint64)
    s = np.uint64(seed & _MASK_I)
    with np.errstate(over="ignore"):
        r1 = _mix64(s + (np.uint64(2) * ks + np.uint64(1)) * _GAMMA)
        r2 = _mix64(s + (np.uint64(2) * ks + np.uint64(2)) * _GAMMA)
    u1 = (r1 >> np.uint64(11)).astype(np.float64) * _U53
    u2 = (r2 >> np.uint64(11)).astype(np.float64) * _U53
    return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(_TWO_PI * u2)


class Rng:
    """Counter-based SplitMix64 stream with Box-Muller Gaussians.

    Scalar methods (``n=None``) return Python numbers from the same counter
    sequence as the vectorized block methods.
    """

    def __init__(self, seed: int):
        self._seed = seed & _MASK_I
        self._count = 0

    def _raw_scalar(self) -> int:
        self._count += 1
        return _mix64_int((self._seed + self._count * _GAMMA_I) & _MASK_I)

    def raw(self, n: int) -> np.ndarray:
        """Next ``n`` raw uint64 words."""
        ks = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
        self._count += n
        with np.errstate(over="ignore"):
            return _mix64(np.uint64(self._seed) + ks * _GAMMA)

    def uniform(self, n: int | None = None) -> np.ndarray | float:
        """Uniform doubles in [0, 1): the top 53 bits of each word."""
        if n is None:
            return (self._raw_scalar() >> 11) * _U53
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * _U53

    def normal(self, n: int | None = None) -> np.ndarray | float:
        """Standard normals via Box-Muller on counter pairs.

        Pair 2i/2i+1 of the stream yields z_{2i} = r cos(theta) and
        z_{2i+1} = r sin(theta) with r = sqrt(-2 ln(1 - u1)), theta = 2 pi u2.
        """
        if n is None:
            u1 = (self._raw_scalar() >> 11) * _U53
            u2 = (self._raw_scalar() >> 11) * _U53
            return math.sqrt(-2.0 * math.log1p(-u1)) * math.cos(_TWO_PI * u2)
        pairs = (n + 1) // 2
        u = (self.raw(2 * pairs) >> np.uint64(11)).astype(np.float64) * _U53
        u1, u2 = u[0::2], u[1::2]
        r = np.sqrt(-2.0 * np.log1p(-u1))
        theta = _TWO_PI * u2
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return z[:n]

    def integers(self, lo: int, hi: int, n: int | None = None) -> np.ndarray | int:
        """Integers in [lo, hi) via floor(uniform * range).

        The modulo bias is O(range * 2^-53), negligible at the scales used
        here (ranges of at most a few thousand).
        """
        if hi <= lo:
            raise ValueError(f"integers: empty range [{lo}, {hi})")
        if n is None:
            return lo + int(self.uniform() * (hi - lo))
        u = self.uniform(n)
        return (u * (hi - lo)).astype(np.int64) + lo

    def choice(self, probs: np.ndarray, n: int | None = None) -> np.ndarray | int:
        """Sample indices from a probability vector by inverse CDF."""
        p = np.asarray(probs, dtype=np.float64)
        cdf = np.cumsum(p)
        cdf[-1] = max(cdf[-1], 1.0)  # guard against rounding shortfall
        if n is None:
            u = self.uniform()
            return min(int(np.searchsorted(cdf, u, side="right")), len(p) - 1)
        idx = np.searchsorted(cdf, self.uniform(n), side="right")
        return np.minimum(idx, len(p) - 1)

    def categorical_rows(self, probs: np.ndarray) -> np.ndarray:
        """One sample per row of a (B, A) probability matrix."""
        p = np.asarray(probs, dtype=np.float64)
        cdf = np.cumsum(p, axis=1)
        u = self.uniform(p.shape[0]) * cdf[:, -1]
        idx = (cdf < u[:, None]).sum(axis=1)
        return np.minimum(idx, p.shape[1] - 1)

    def shuffled_indices(self, n: int) -> np.ndarray:
        """A permutation of range(n) (Fisher-Yates with stream draws)."""
        idx = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.integers(0, i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return idx
