"""Forward model: line source -> recorded density -> channel histogram."""
from __future__ import annotations

from dataclasses import dataclass, field
import math
from typing import Iterable, Sequence

import numpy as np

from .response import EnergyGrid, ResponseMatrix
from .rng import poisson_array

__all__ = [
    "SpectralLine",
    "ContinuousSpectrum",
    "ChannelHistogram",
    "fold",
    "channelize",
    "poisson_realize",
    "format_histogram",
    "parse_histogram",
    "histogram_csv",
    "MIN_CHANNELS",
]

MIN_CHANNELS = 8


@dataclass(frozen=True, order=True)
class SpectralLine:
    """A discrete source line: ``amplitude`` photons emitted at ``energy`` keV."""

    energy: float
    amplitude: float

    def __post_init__(self):
        if not math.isfinite(self.energy):
            raise ValueError("line energy must be finite")
        if not (self.amplitude >= 0 and math.isfinite(self.amplitude)):
            raise ValueError("line amplitude must be finite and >= 0")


LineList = Sequence[SpectralLine]


@dataclass(frozen=True, eq=False)
class ContinuousSpectrum:
    """Density (counts/keV) sampled on an energy grid.

    Forward-model spectra are nonnegative everywhere.  Reconstructed
    estimates carry ``relaxed=True``; they may go negative and mark
    boundary points as invalid through ``valid`` (density is NaN there).
    """

    grid: EnergyGrid
    density: np.ndarray
    relaxed: bool = False
    valid: np.ndarray | None = None
    snap_offsets: tuple = field(default=())

    def __post_init__(self):
        dens = np.array(self.density, dtype=float)
        if dens.shape != (self.grid.n_points,):
            raise ValueError("density length must match the grid")
        valid = np.isfinite(dens) if self.valid is None else np.array(self.valid, dtype=bool)
        if valid.shape != dens.shape:
            raise ValueError("valid mask length must match the grid")
        if not self.relaxed:
            if not np.all(valid) or not np.all(np.isfinite(dens)):
                raise ValueError("forward spectra must be finite everywhere")
            if dens.min(initial=0.0) < 0:
                raise ValueError("forward spectra must be nonnegative")
        dens.flags.writeable = False
        valid.flags.writeable = False
        object.__setattr__(self, "density", dens)
        object.__setattr__(self, "valid", valid)

    @property
    def energies(self) -> np.ndarray:
        return self.grid.points

    def integral(self) -> float:
        return float(self.density[self.valid].sum() * self.grid.spacing)


@dataclass(frozen=True, eq=False)
class ChannelHistogram:
    """Counts per channel of width ``epsilon`` starting at ``origin`` (keV).

    ``mode`` is ``"expected"`` (real counts) or ``"realized"`` (integers).
    """

    epsilon: float
    origin: float
    counts: np.ndarray
    mode: str = "expected"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("channel width must be positive")
        if self.mode not in ("expected", "realized"):
            raise ValueError("mode must be 'expected' or 'realized'")
        counts = np.array(self.counts)
        if counts.ndim != 1 or counts.size < MIN_CHANNELS:
            raise ValueError(f"a histogram needs at least {MIN_CHANNELS} channels")
        if self.mode == "realized":
            if counts.dtype.kind not in "iu":
                as_int = counts.astype(np.int64)
                if not np.array_equal(as_int, counts):
                    raise ValueError("realized counts must be integers")
                counts = as_int
            counts = counts.astype(np.int64)
        else:
            counts = counts.astype(float)
            if not np.all(np.isfinite(counts)):
                raise ValueError("counts must be finite")
        if counts.min() < 0:
            raise ValueError("counts must be nonnegative")
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)

    @property
    def n_channels(self) -> int:
        return int(self.counts.size)

    @property
    def edges(self) -> np.ndarray:
        """Channel boundaries ``origin + k*epsilon`` for ``k = 0..N``."""
        return self.origin + self.epsilon * np.arange(self.n_channels + 1)

    def total(self):
        return self.counts.sum()


def fold(lines: Iterable[SpectralLine], rhat: ResponseMatrix) -> ContinuousSpectrum:
    """Recorded density ``M(E) = sum_n a_n * R_hat(E, E_n)``.

    Line energies snap to the nearest grid column; the signed offsets
    (requested minus grid energy) are kept in ``snap_offsets``.
    """
    grid = rhat.grid
    pts = grid.points
    density = np.zeros(grid.n_points)
    offsets = []
    for line in lines:
        j = grid.nearest_index(line.energy)
        offsets.append(float(line.energy - pts[j]))
        if line.amplitude:
            density += line.amplitude * rhat.values[:, j]
    return ContinuousSpectrum(grid, density, snap_offsets=tuple(offsets))


def channelize(spectrum: ContinuousSpectrum, epsilon: float, origin: float | None = None,
               n_channels: int | None = None) -> ChannelHistogram:
    """Integrate a density into channels of width ``epsilon``.

    The density is taken as constant on each grid cell (midpoint rule).
    Channel boundaries fall on grid points, so a boundary cell contributes
    half of its mass to each neighbour and the integral is exact for that
    piecewise-constant density.

    ``epsilon`` must be an integer multiple of the grid spacing and
    ``origin`` a grid point.  By default as many whole channels as fit are
    produced.
    """
    grid = spectrum.grid
    h = grid.spacing
    ratio = epsilon / h
    m = int(round(ratio))
    if m < 1 or abs(ratio - m) > 1e-9 * max(1.0, ratio):
        raise ValueError(f"channel width {epsilon} keV is not a multiple of the grid spacing {h} keV")
    if origin is None:
        origin = grid.e_min
    i0 = grid.index_of(origin)
    available = (grid.n_points - 1 - i0) // m
    if n_channels is None:
        n_channels = available
    if n_channels > available:
        raise ValueError(f"only {available} channels fit on the grid from origin {origin}")
    if not np.all(spectrum.valid[i0:i0 + n_channels * m + 1]):
        raise ValueError("cannot channelize over invalid density points")

    seg = spectrum.density[i0:i0 + n_channels * m + 1]
    body = seg[:-1].reshape(n_channels, m)
    inner = body[:, 1:].sum(axis=1) if m > 1 else np.zeros(n_channels)
    counts = h * (0.5 * body[:, 0] + inner + 0.5 * seg[m::m])
    return ChannelHistogram(float(epsilon), float(grid.points[i0]), counts, "expected")


def poisson_realize(hist: ChannelHistogram, total_counts: int, seed: int) -> ChannelHistogram:
    """Scale ``hist`` to ``total_counts`` expected counts and draw Poisson counts.

    See :mod:`dkunfold.rng` for the generator.  A channel with zero
    expectation always yields zero.
    """
    if hist.mode != "expected":
        raise ValueError("poisson_realize needs an expected-mode histogram")
    if int(total_counts) != total_counts or total_counts <= 0:
        raise ValueError("total_counts must be a positive integer")
    mass = float(hist.counts.sum())
    if not mass > 0:
        raise ValueError("cannot realize a histogram with zero total mass")
    means = hist.counts * (float(total_counts) / mass)
    drawn = poisson_array(means, seed)
    return ChannelHistogram(hist.epsilon, hist.origin, drawn, "realized")


def format_histogram(hist: ChannelHistogram) -> str:
    head = f"epsilon={hist.epsilon!r} origin={hist.origin!r} mode={hist.mode}"
    if hist.mode == "realized":
        body = (str(int(c)) for c in hist.counts)
    else:
        body = (f"{c:.17g}" for c in hist.counts)
    return head + "\n" + "\n".join(body) + "\n"


def parse_histogram(text: str) -> ChannelHistogram:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty histogram file")
    try:
        fields = dict(tok.split("=", 1) for tok in lines[0].split())
        epsilon, origin, mode = float(fields["epsilon"]), float(fields["origin"]), fields["mode"]
    except (KeyError, ValueError) as exc:
        raise ValueError(f"bad histogram header: {lines[0]!r}") from exc
    if mode == "realized":
        counts = np.array([int(v) for v in lines[1:]], dtype=np.int64)
    else:
        counts = np.array([float(v) for v in lines[1:]])
    return ChannelHistogram(epsilon, origin, counts, mode)


def histogram_csv(hist: ChannelHistogram) -> str:
    rows = ["channel,energy_low,counts"]
    for k, (lo, c) in enumerate(zip(hist.edges[:-1], hist.counts)):
        value = str(int(c)) if hist.mode == "realized" else f"{c:.17g}"
        rows.append(f"{k},{lo:.17g},{value}")
    return "\n".join(rows) + "\n"
