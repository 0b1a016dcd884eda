"""Cumulative count surface and derivative-kernel density estimates.

For channel counts ``c[k]`` the prefix sums ``F[n] = c[0] + ... + c[n-1]``
sample the cumulative recorded spectrum at the channel edges, and the
surface ``m(n1, n2) = F[n1 + n2] - F[n1]`` is the count between energies
``n1*eps`` and ``(n1 + n2)*eps`` (relative to the histogram origin).  Its
derivative along the second argument at zero is the density ``M``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .folding import ChannelHistogram, ContinuousSpectrum
from .kernels import KernelPair, delta_pair
from .response import EnergyGrid

__all__ = [
    "MSurface",
    "prefix_sums",
    "build_m_surface",
    "kernel_reach",
    "estimate_density",
    "reconstruction_csv",
]


def prefix_sums(hist: ChannelHistogram) -> np.ndarray:
    """``[0, c0, c0+c1, ...]``; integer dtype for realized histograms."""
    counts = hist.counts
    dtype = np.int64 if hist.mode == "realized" else np.float64
    out = np.zeros(counts.size + 1, dtype=dtype)
    np.cumsum(counts, out=out[1:])
    return out


@dataclass(frozen=True, eq=False)
class MSurface:
    """Samples of ``m(n1*eps, n2*eps)`` for ``n1 = 0..N`` and ``n2 = -L..L``.

    ``values[n1, n2 + L]`` holds the sample; cells with ``n1 + n2`` outside
    ``0..N`` are NaN.
    """

    epsilon: float
    origin: float
    half_width: int
    prefix: np.ndarray
    values: np.ndarray

    @property
    def n_channels(self) -> int:
        return int(self.prefix.size - 1)

    def value(self, n1: int, n2: int) -> float:
        if abs(n2) > self.half_width or not (0 <= n1 <= self.n_channels):
            raise IndexError("cell outside the stored surface")
        return float(self.values[n1, n2 + self.half_width])

    def is_valid(self, n1: int, n2: int) -> bool:
        return 0 <= n1 <= self.n_channels and 0 <= n1 + n2 <= self.n_channels and abs(n2) <= self.half_width


def build_m_surface(hist: ChannelHistogram, half_width: int) -> MSurface:
    """Sample the cumulative surface with ``|n2| <= half_width``.

    Nonnegative ``n2`` columns come straight from the prefix form; negative
    columns are filled from ``m(E, -E') = -m(E - E', E')``.
    """
    L = int(half_width)
    if L < 1:
        raise ValueError("half_width must be >= 1")
    N = hist.n_channels
    if N < 2 * L + 1:
        raise ValueError(f"histogram has {N} channels; need at least {2 * L + 1}")
    prefix = prefix_sums(hist)
    F = prefix.astype(float)
    values = np.full((N + 1, 2 * L + 1), np.nan)
    for n2 in range(0, L + 1):
        values[: N + 1 - n2, n2 + L] = F[n2:] - F[: N + 1 - n2]
    for n2 in range(1, L + 1):
        # m(n1, -n2) = -m(n1 - n2, n2), defined for n1 >= n2.
        values[n2:, L - n2] = -values[: N + 1 - n2, L + n2]
    prefix.flags.writeable = False
    values.flags.writeable = False
    return MSurface(float(hist.epsilon), float(hist.origin), L, prefix, values)


def kernel_reach(pair: KernelPair) -> int:
    """Largest ``|n2|`` the pair touches along the second surface axis."""
    return int(round(np.max(np.abs(pair.shift - pair.offsets))))


def estimate_density(surface: MSurface, pair: KernelPair, smooth: bool = True) -> ContinuousSpectrum:
    """Density at the channel edges from the separable kernel pair.

    ``d0`` smooths along the first argument and ``d1`` differentiates along
    the second at zero::

        M_hat[n1] = sum_i sum_j d0[i] * d1[j] * m(n1 - i, -j) / eps

    Half-sample pairs are evaluated at ``(n1 - 1/2, 1/2)``, which lands on
    the same output energies.  Outputs needing cells beyond either end of
    the surface are flagged invalid and set to NaN.

    Parameters
    ----------
    smooth : bool
        When False, ``d0`` is replaced by the identity (integer pairs only).
    """
    L = surface.half_width
    reach = kernel_reach(pair)
    if reach > L:
        raise ValueError(f"kernel reach {reach} exceeds the surface half-width {L}")
    if not smooth:
        if pair.half_sample:
            raise ValueError("smoothing cannot be disabled for a half-sample pair")
        pair = KernelPair(delta_pair(pair.support).d0, pair.d1, label=pair.label)

    N = surface.n_channels
    s = pair.shift
    n1 = np.arange(N + 1)
    acc = np.zeros(N + 1)
    valid = np.ones(N + 1, dtype=bool)
    for o0, w0 in zip(pair.offsets, pair.d0):
        rows = n1 - int(round(s + o0))
        inside = (rows >= 0) & (rows <= N)
        safe = np.clip(rows, 0, N)
        for o1, w1 in zip(pair.offsets, pair.d1):
            col = int(round(s - o1)) + L
            cell = surface.values[safe, col]
            ok = inside & np.isfinite(cell)
            valid &= ok
            if w0 != 0.0 and w1 != 0.0:
                acc += np.where(ok, w0 * w1 * cell, 0.0)
    density = np.where(valid, acc / surface.epsilon, np.nan)
    grid = EnergyGrid(surface.origin, surface.origin + N * surface.epsilon, N + 1)
    return ContinuousSpectrum(grid, density, relaxed=True, valid=valid)


def reconstruction_csv(spectrum: ContinuousSpectrum) -> str:
    rows = ["energy_keV,density_per_keV,valid_flag"]
    for e, d, v in zip(spectrum.energies, spectrum.density, spectrum.valid):
        rows.append(f"{e:.17g},{d:.17g},{int(v)}")
    return "\n".join(rows) + "\n"
