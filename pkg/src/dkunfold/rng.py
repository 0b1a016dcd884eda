"""Seeded, platform-stable Poisson sampling.

Uniform source
    PCG64 (``numpy.random.PCG64``) seeded with the 64-bit integer seed via
    ``numpy.random.SeedSequence``.  Each raw 64-bit output ``x`` becomes the
    double ``(x >> 11) * 2**-53`` in ``[0, 1)``.

Poisson variates
    * mean 0: returns 0 and draws nothing.
    * mean < 30: inversion by sequential search, one uniform per variate.
    * mean >= 30: PTRS transformed rejection with squeeze (Hoermann, 1993),
      two uniforms per attempt.

Only integer arithmetic and IEEE double operations with a fixed order are
used, so a given seed yields the same variates on every platform.
"""
from __future__ import annotations

import math

import numpy as np

__all__ = ["UniformStream", "poisson_variate", "poisson_array", "INVERSION_LIMIT"]

INVERSION_LIMIT = 30.0
_BLOCK = 4096
_TWO_M53 = 2.0 ** -53


class UniformStream:
    """Buffered ``[0, 1)`` doubles from PCG64."""

    def __init__(self, seed: int):
        seed = int(seed)
        if not (0 <= seed < 2**64):
            raise ValueError("seed must be a 64-bit unsigned integer")
        self._bitgen = np.random.PCG64(seed)
        self._buf = np.empty(0)
        self._pos = 0

    def _refill(self):
        raw = self._bitgen.random_raw(_BLOCK)
        self._buf = (raw >> np.uint64(11)).astype(np.float64) * _TWO_M53
        self._pos = 0

    def next(self) -> float:
        if self._pos >= self._buf.size:
            self._refill()
        u = float(self._buf[self._pos])
        self._pos += 1
        return u


def _inversion(lam: float, stream: UniformStream) -> int:
    u = stream.next()
    k = 0
    p = math.exp(-lam)
    cdf = p
    while u > cdf:
        k += 1
        p *= lam / k
        if p == 0.0 and k > lam:
            break
        cdf += p
    return k


def _ptrs(lam: float, stream: UniformStream) -> int:
    slam = math.sqrt(lam)
    loglam = math.log(lam)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    while True:
        u = stream.next() - 0.5
        v = stream.next()
        us = 0.5 - abs(u)
        if us == 0.0:
            continue
        k = math.floor((2.0 * a / us + b) * u + lam + 0.43)
        if us >= 0.07 and v <= vr:
            return int(k)
        if k < 0 or (us < 0.013 and v > us):
            continue
        if v == 0.0:
            return int(k)
        lhs = math.log(v) + math.log(invalpha) - math.log(a / (us * us) + b)
        rhs = -lam + k * loglam - math.lgamma(k + 1.0)
        if lhs <= rhs:
            return int(k)


def poisson_variate(lam: float, stream: UniformStream) -> int:
    if lam < 0 or not math.isfinite(lam):
        raise ValueError("Poisson mean must be finite and >= 0")
    if lam == 0.0:
        return 0
    if lam < INVERSION_LIMIT:
        return _inversion(lam, stream)
    return _ptrs(lam, stream)


def poisson_array(means, seed: int) -> np.ndarray:
    """Independent Poisson draws for ``means``, in index order."""
    stream = UniformStream(seed)
    means = np.asarray(means, dtype=float)
    return np.array([poisson_variate(float(m), stream) for m in means], dtype=np.int64)
