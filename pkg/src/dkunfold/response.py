"""Discretized detector and medium transfer operators.

Every operator lives on a uniform :class:`EnergyGrid`.  Grid point ``E_i``
is the midpoint of the cell ``[E_i - h/2, E_i + h/2]`` (``h`` the spacing),
and a matrix entry ``values[i, j]`` is a density in 1/keV: the expected
number of photons recorded (or exiting the medium) per keV around ``E_i``
for one photon of energy ``E_j``.  Column mass is ``values[:, j].sum() * h``.
"""
from __future__ import annotations

from dataclasses import dataclass
import math
from typing import Callable, Union

import numpy as np
from scipy.special import ndtr

__all__ = [
    "ELECTRON_REST_KEV",
    "EnergyGrid",
    "ResponseMatrix",
    "DetectorModel",
    "MediumModel",
    "compton_edge",
    "detector_response_matrix",
    "medium_kernel",
    "modified_response",
    "format_response",
    "parse_response",
]

ELECTRON_REST_KEV = 511.0
FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
_MASS_TOL = 1e-9
_COLUMN_CHUNK = 512


@dataclass(frozen=True)
class EnergyGrid:
    """Uniform energy grid in keV."""

    e_min: float
    e_max: float
    n_points: int

    def __post_init__(self):
        if self.e_min < 0:
            raise ValueError("e_min must be >= 0")
        if not self.e_max > self.e_min:
            raise ValueError("e_max must exceed e_min")
        if int(self.n_points) != self.n_points or self.n_points < 2:
            raise ValueError("n_points must be an integer >= 2")

    @property
    def spacing(self) -> float:
        return (self.e_max - self.e_min) / (self.n_points - 1)

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.e_min, self.e_max, int(self.n_points))

    @property
    def lower_edge(self) -> float:
        return self.e_min - 0.5 * self.spacing

    @property
    def upper_edge(self) -> float:
        return self.e_max + 0.5 * self.spacing

    def nearest_index(self, energy: float) -> int:
        """Index of the grid point closest to ``energy`` (ties go low)."""
        if not (self.lower_edge <= energy <= self.upper_edge):
            raise ValueError(f"energy {energy} keV lies outside the grid")
        pos = (energy - self.e_min) / self.spacing
        idx = int(math.ceil(pos - 0.5))
        return min(max(idx, 0), self.n_points - 1)

    def index_of(self, energy: float, rtol: float = 1e-6) -> int:
        """Index of a grid point that ``energy`` must coincide with."""
        idx = self.nearest_index(energy)
        if abs(self.points[idx] - energy) > rtol * self.spacing:
            raise ValueError(f"energy {energy} keV is not a grid point")
        return idx


class ResponseMatrix:
    """Nonnegative square operator on an :class:`EnergyGrid`.

    ``values`` is stored read-only; the constructor enforces
    nonnegativity and a column mass of at most one.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: EnergyGrid, values):
        values = np.array(values, dtype=float)
        n = grid.n_points
        if values.shape != (n, n):
            raise ValueError(f"values must have shape {(n, n)}, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("response values must be finite")
        if values.min() < 0:
            raise ValueError("response values must be nonnegative")
        mass = values.sum(axis=0) * grid.spacing
        if mass.max() > 1.0 + _MASS_TOL:
            raise ValueError(f"column mass {mass.max():.12g} exceeds one")
        values.flags.writeable = False
        self.grid = grid
        self.values = values

    def column_mass(self) -> np.ndarray:
        return self.values.sum(axis=0) * self.grid.spacing

    def column(self, energy: float) -> np.ndarray:
        return self.values[:, self.grid.nearest_index(energy)]

    def __repr__(self):
        g = self.grid
        return f"ResponseMatrix(e_min={g.e_min}, e_max={g.e_max}, n_points={g.n_points})"


@dataclass(frozen=True)
class DetectorModel:
    """Parametric scintillator response: Gaussian photopeak plus Compton shelf.

    Resolution is ``FWHM(E) = fwhm_a * sqrt(E) + fwhm_b * E`` (keV).
    With ``escape_peaks`` set, photons above 1022 keV also produce single
    and double escape peaks at ``E - 511`` and ``E - 1022``.
    """

    fwhm_a: float
    fwhm_b: float = 0.0
    photofraction: float = 1.0
    compton_fraction: float = 0.0
    escape_peaks: bool = False
    single_escape_fraction: float = 0.0
    double_escape_fraction: float = 0.0

    def __post_init__(self):
        if self.fwhm_a < 0 or self.fwhm_b < 0 or (self.fwhm_a == 0 and self.fwhm_b == 0):
            raise ValueError("resolution coefficients must be nonnegative and not both zero")
        if not (0.0 < self.photofraction <= 1.0):
            raise ValueError("photofraction must lie in (0, 1]")
        if self.compton_fraction < 0:
            raise ValueError("compton_fraction must be >= 0")
        total = self.photofraction + self.compton_fraction
        if self.escape_peaks:
            if self.single_escape_fraction < 0 or self.double_escape_fraction < 0:
                raise ValueError("escape fractions must be >= 0")
            total += self.single_escape_fraction + self.double_escape_fraction
        if total > 1.0 + 1e-12:
            raise ValueError("detector fractions sum to more than one")

    def fwhm(self, energy):
        energy = np.asarray(energy, dtype=float)
        return self.fwhm_a * np.sqrt(energy) + self.fwhm_b * energy


TransmissionLike = Union[float, Callable[[np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class MediumModel:
    """Uniform medium between source and detector.

    ``transmission`` is the unscattered survival probability, either a
    constant or a callable of energy (keV).  A fraction ``scatter_fraction``
    of the surviving photons is downshifted into a flat continuum below the
    emission energy.
    """

    transmission: TransmissionLike = 1.0
    scatter_fraction: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.scatter_fraction < 1.0):
            raise ValueError("scatter_fraction must lie in [0, 1)")
        if not callable(self.transmission) and not (0.0 < self.transmission <= 1.0):
            raise ValueError("transmission must lie in (0, 1]")

    def transmission_at(self, energy) -> np.ndarray:
        energy = np.asarray(energy, dtype=float)
        if callable(self.transmission):
            t = np.asarray(self.transmission(energy), dtype=float)
            t = np.broadcast_to(t, energy.shape).copy()
        else:
            t = np.full(energy.shape, float(self.transmission))
        if np.any(t <= 0) or np.any(t > 1):
            raise ValueError("transmission must lie in (0, 1] on the grid")
        return t


def compton_edge(energy):
    """Maximum energy deposited by a single Compton scatter (keV)."""
    energy = np.asarray(energy, dtype=float)
    return energy * (1.0 - 1.0 / (1.0 + 2.0 * energy / ELECTRON_REST_KEV))


def _gaussian_block(points, centers, sigma, lo_edge, hi_edge, h):
    """Midpoint-sampled unit Gaussians, rescaled to their in-grid mass."""
    z = (points[:, None] - centers[None, :]) / sigma[None, :]
    dens = np.exp(-0.5 * z * z) / (sigma[None, :] * math.sqrt(2.0 * math.pi))
    inside = ndtr((hi_edge - centers) / sigma) - ndtr((lo_edge - centers) / sigma)
    total = dens.sum(axis=0) * h
    scale = np.divide(inside, total, out=np.zeros_like(total), where=total > 0)
    return dens * scale[None, :]


def _shelf_block(points, edges, h):
    """Unit-mass flat densities on ``[0, edge]``, integrated exactly per cell."""
    lo = np.maximum(points[:, None] - 0.5 * h, 0.0)
    hi = np.minimum(points[:, None] + 0.5 * h, edges[None, :])
    overlap = np.clip(hi - lo, 0.0, None)
    height = np.divide(1.0, edges, out=np.zeros_like(edges), where=edges > 0)
    return overlap * height[None, :] / h


def detector_response_matrix(model: DetectorModel, grid: EnergyGrid) -> ResponseMatrix:
    """Discretize the detector transfer function ``R(E, V)``.

    Column ``j`` holds ``photofraction`` times a Gaussian photopeak at
    ``V_j`` and ``compton_fraction`` times a flat shelf on
    ``[0, compton_edge(V_j)]``.  Mass falling outside the grid is dropped.
    A zero-energy column is empty.

    Raises
    ------
    ValueError
        If the spacing exceeds half the FWHM at the lowest positive grid
        energy, which would alias the photopeak.
    """
    h = grid.spacing
    e_check = grid.e_min if grid.e_min > 0 else grid.e_min + h
    if h > 0.5 * float(model.fwhm(e_check)):
        raise ValueError(
            f"grid spacing {h:g} keV exceeds half the FWHM ({float(model.fwhm(e_check)):g} keV) "
            f"at {e_check:g} keV"
        )
    pts = grid.points
    values = np.zeros((grid.n_points, grid.n_points))
    lo_edge, hi_edge = grid.lower_edge, grid.upper_edge

    for start in range(0, grid.n_points, _COLUMN_CHUNK):
        cols = slice(start, min(start + _COLUMN_CHUNK, grid.n_points))
        v = pts[cols]
        live = v > 0
        if not np.any(live):
            continue
        vl = v[live]
        block = np.zeros((grid.n_points, vl.size))
        sigma = model.fwhm(vl) * FWHM_TO_SIGMA
        block += model.photofraction * _gaussian_block(pts, vl, sigma, lo_edge, hi_edge, h)
        if model.compton_fraction > 0:
            block += model.compton_fraction * _shelf_block(pts, compton_edge(vl), h)
        if model.escape_peaks:
            pair = vl > 2.0 * ELECTRON_REST_KEV
            for shift, frac in ((ELECTRON_REST_KEV, model.single_escape_fraction),
                                (2.0 * ELECTRON_REST_KEV, model.double_escape_fraction)):
                if frac <= 0 or not np.any(pair):
                    continue
                c = vl[pair] - shift
                s = model.fwhm(c) * FWHM_TO_SIGMA
                block[:, pair] += frac * _gaussian_block(pts, c, s, lo_edge, hi_edge, h)
        sub = values[:, cols]
        sub[:, live] = block
    return ResponseMatrix(grid, values)


def medium_kernel(model: MediumModel, grid: EnergyGrid) -> ResponseMatrix:
    """Discretize the medium kernel ``P(V, U)``.

    Column ``j`` puts ``t(U_j) * (1 - s)`` into the single cell at ``U_j``
    and spreads ``t(U_j) * s`` uniformly over the grid cells below ``U_j``.
    For the lowest column there is no cell below, so the scattered part is
    absorbed.
    """
    h = grid.spacing
    n = grid.n_points
    t = model.transmission_at(grid.points)
    s = model.scatter_fraction
    values = np.diag(t * (1.0 - s) / h)
    if s > 0:
        j = np.arange(n, dtype=float)
        height = np.divide(t * s, j * h, out=np.zeros(n), where=j > 0)
        values += np.triu(np.broadcast_to(height, (n, n)), k=1)
    return ResponseMatrix(grid, values)


def modified_response(R: ResponseMatrix, P: ResponseMatrix) -> ResponseMatrix:
    """Compose detector and medium: ``R_hat = R @ P * h`` (midpoint rule)."""
    if R.grid != P.grid:
        raise ValueError("response and medium matrices live on different grids")
    values = (R.values @ P.values) * R.grid.spacing
    return ResponseMatrix(R.grid, values)


def format_response(rm: ResponseMatrix) -> str:
    """Text form: one header line with the grid, then one row per line."""
    g = rm.grid
    lines = [f"# response e_min={g.e_min!r} e_max={g.e_max!r} n_points={g.n_points}"]
    for row in rm.values:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    return "\n".join(lines) + "\n"


def parse_response(text: str) -> ResponseMatrix:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# response "):
        raise ValueError("missing response header")
    fields = dict(tok.split("=", 1) for tok in lines[0][len("# response "):].split())
    grid = EnergyGrid(float(fields["e_min"]), float(fields["e_max"]), int(fields["n_points"]))
    rows = [[float(v) for v in ln.split()] for ln in lines[1:] if ln.strip()]
    return ResponseMatrix(grid, np.array(rows, dtype=float).reshape(grid.n_points, grid.n_points))
