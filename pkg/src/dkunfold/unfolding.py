"""Line recovery: peak candidates, NNLS amplitudes, energy refinement."""
from __future__ import annotations

from dataclasses import dataclass
import json
import warnings

import numpy as np
from scipy.optimize import nnls
from scipy.signal import find_peaks

from .folding import ChannelHistogram, ContinuousSpectrum, SpectralLine, fold
from .kernels import KernelPair
from .reconstruction import build_m_surface, estimate_density, kernel_reach
from .response import ResponseMatrix

__all__ = [
    "UnfoldResult",
    "UnfoldOptions",
    "detect_peaks",
    "fit_amplitudes",
    "refine_energies",
    "unfold",
    "spectrum_error",
    "result_csv",
    "result_json",
]


@dataclass(frozen=True)
class UnfoldResult:
    lines: tuple
    residual_norm: float
    diagnostics: tuple = ()

    def __post_init__(self):
        energies = [ln.energy for ln in self.lines]
        if any(b <= a for a, b in zip(energies, energies[1:])):
            raise ValueError("line energies must be strictly increasing")

    @property
    def energies(self) -> np.ndarray:
        return np.array([ln.energy for ln in self.lines])

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([ln.amplitude for ln in self.lines])


@dataclass(frozen=True)
class UnfoldOptions:
    """Thresholds for :func:`unfold`.

    ``half_width`` defaults to the kernel reach plus one.  ``min_prominence``
    is a fraction of the largest valid density; ``min_separation`` is in keV;
    ``refine_radius`` is in fine-grid steps.
    """

    half_width: int | None = None
    smooth: bool = True
    min_prominence: float = 0.05
    min_separation: float = 0.0
    refine_radius: int = 4
    prune_zero: bool = True


def detect_peaks(spectrum: ContinuousSpectrum, min_prominence: float = 0.05,
                 min_separation: float = 0.0) -> list[float]:
    """Candidate line energies from local maxima of the valid density.

    A maximum qualifies when its prominence reaches ``min_prominence`` times
    the largest valid density.  Candidates are then accepted greedily by
    decreasing prominence (ties to lower energy) while keeping every pair at
    least ``min_separation`` keV apart.  Returned in increasing energy.
    """
    valid = np.flatnonzero(spectrum.valid)
    if valid.size < 3:
        return []
    lo, hi = valid[0], valid[-1] + 1
    if not np.all(spectrum.valid[lo:hi]):
        raise ValueError("valid region of the spectrum must be contiguous")
    y = spectrum.density[lo:hi]
    top = float(y.max())
    if not top > 0:
        return []
    idx, props = find_peaks(y, prominence=min_prominence * top)
    if idx.size == 0:
        return []
    energies = spectrum.energies[lo:hi][idx]
    order = np.lexsort((energies, -props["prominences"]))
    kept: list[float] = []
    for k in order:
        e = float(energies[k])
        if all(abs(e - other) >= min_separation for other in kept):
            kept.append(e)
    return sorted(kept)


class _Design:
    """Rows of ``R_hat`` matched to the valid points of a spectrum."""

    def __init__(self, spectrum: ContinuousSpectrum, rhat: ResponseMatrix):
        if spectrum.grid == rhat.grid:
            rows = np.arange(rhat.grid.n_points)
        else:
            g = rhat.grid
            pos = (spectrum.energies - g.e_min) / g.spacing
            rows = np.rint(pos).astype(int)
            if (np.abs(pos - rows).max() > 1e-6 or rows.min() < 0
                    or rows.max() >= g.n_points):
                raise ValueError("spectrum energies do not lie on the response grid")
        mask = spectrum.valid
        self.rows = rows[mask]
        self.y = spectrum.density[mask]
        self.rhat = rhat
        self._cols: dict[int, np.ndarray] = {}

    def basis(self, cols) -> np.ndarray:
        vecs = []
        for c in cols:
            c = int(c)
            if c not in self._cols:
                self._cols[c] = self.rhat.values[self.rows, c]
            vecs.append(self._cols[c])
        return np.column_stack(vecs)

    def solve(self, cols):
        """NNLS through a thin QR: ``|Ba - y|^2 = |Ra - Q'y|^2 + |y - QQ'y|^2``."""
        B = self.basis(cols)
        Q, R = np.linalg.qr(B)
        qty = Q.T @ self.y
        perp = float(np.linalg.norm(self.y - Q @ qty))
        amps, rnorm = nnls(R, qty)
        return amps, float(np.hypot(rnorm, perp))


def _columns(rhat: ResponseMatrix, energies) -> list[int]:
    cols = sorted(rhat.grid.nearest_index(float(e)) for e in energies)
    merged = sorted(set(cols))
    if len(merged) < len(cols):
        warnings.warn("candidates sharing a response column were merged", RuntimeWarning, stacklevel=3)
    return merged


def _result(design: _Design, cols, amps, resid) -> UnfoldResult:
    pts = design.rhat.grid.points
    B = design.basis(cols)
    norms = np.linalg.norm(B, axis=0)
    safe = np.where(norms > 0, norms, 1.0)
    corr = np.abs((B / safe).T @ (B / safe))
    np.fill_diagonal(corr, 0.0)
    lines, diags = [], []
    for k, (c, a) in enumerate(zip(cols, amps)):
        lines.append(SpectralLine(float(pts[c]), float(a)))
        diags.append({
            "column": int(c),
            "max_correlation": float(corr[k].max()) if len(cols) > 1 else 0.0,
            "active": bool(a > 0),
        })
    return UnfoldResult(tuple(lines), resid, tuple(diags))


def fit_amplitudes(spectrum: ContinuousSpectrum, rhat: ResponseMatrix, energies) -> UnfoldResult:
    """Nonnegative amplitudes of ``R_hat`` columns at ``energies``.

    Minimizes the squared residual over the valid points of ``spectrum``
    with scipy's Lawson-Hanson active-set NNLS.  Candidates are snapped to
    grid columns and sorted first, so the input order does not matter.
    """
    if len(energies) == 0:
        raise ValueError("at least one candidate energy is required")
    design = _Design(spectrum, rhat)
    cols = _columns(rhat, energies)
    amps, resid = design.solve(cols)
    return _result(design, cols, amps, resid)


def refine_energies(spectrum: ContinuousSpectrum, rhat: ResponseMatrix, result: UnfoldResult,
                    radius: int = 4) -> UnfoldResult:
    """Coordinate descent on line energies over the fine grid.

    Each line in turn tries every column within ``radius`` steps of its
    current one (refitting all amplitudes) and moves to the best strictly
    better column.  Sweeps repeat until none moves a line.
    """
    if not result.lines or radius < 1:
        return result
    design = _Design(spectrum, rhat)
    n = rhat.grid.n_points
    cols = [rhat.grid.nearest_index(ln.energy) for ln in result.lines]
    amps, best = design.solve(cols)
    changed = True
    while changed:
        changed = False
        for k in range(len(cols)):
            taken = set(cols[:k] + cols[k + 1:])
            lo = cols[k - 1] + 1 if k > 0 else 0
            hi = cols[k + 1] - 1 if k + 1 < len(cols) else n - 1
            choice = None
            for c in range(max(lo, cols[k] - radius), min(hi, cols[k] + radius) + 1):
                if c == cols[k] or c in taken:
                    continue
                trial = cols[:k] + [c] + cols[k + 1:]
                a, r = design.solve(trial)
                if r < best:
                    best, amps, choice = r, a, c
            if choice is not None:
                cols[k] = choice
                changed = True
    return _result(design, cols, amps, best)


def unfold(hist: ChannelHistogram, rhat: ResponseMatrix, pair: KernelPair,
           options: UnfoldOptions | None = None) -> UnfoldResult:
    """Histogram -> m-surface -> density -> peaks -> NNLS -> refined lines."""
    opts = options or UnfoldOptions()
    L = opts.half_width if opts.half_width is not None else kernel_reach(pair) + 1
    surface = build_m_surface(hist, L)
    spectrum = estimate_density(surface, pair, smooth=opts.smooth)
    candidates = detect_peaks(spectrum, opts.min_prominence, opts.min_separation)
    if not candidates:
        return UnfoldResult((), float(np.linalg.norm(spectrum.density[spectrum.valid])))
    result = fit_amplitudes(spectrum, rhat, candidates)
    if opts.prune_zero:
        result = _prune(spectrum, rhat, result)
    result = refine_energies(spectrum, rhat, result, opts.refine_radius)
    if opts.prune_zero:
        result = _prune(spectrum, rhat, result)
    return result


def _prune(spectrum, rhat, result: UnfoldResult) -> UnfoldResult:
    """Drop zero-amplitude lines; the NNLS optimum of the rest is unchanged."""
    if all(ln.amplitude > 0 for ln in result.lines):
        return result
    keep = [ln.energy for ln in result.lines if ln.amplitude > 0]
    if not keep:
        return UnfoldResult((), result.residual_norm)
    return fit_amplitudes(spectrum, rhat, keep)


def spectrum_error(truth, estimate, rhat: ResponseMatrix, valid=None) -> float:
    """Relative L2 distance between the folded truth and folded estimate."""
    truth_lines = list(truth)
    if not truth_lines:
        raise ValueError("truth must contain at least one line")
    est_lines = estimate.lines if isinstance(estimate, UnfoldResult) else list(estimate)
    a = fold(truth_lines, rhat).density
    b = fold(est_lines, rhat).density
    if valid is not None:
        a, b = a[valid], b[valid]
    norm = float(np.linalg.norm(a))
    if norm == 0:
        raise ValueError("folded truth has zero norm")
    return float(np.linalg.norm(b - a) / norm)


def result_csv(result: UnfoldResult) -> str:
    rows = ["energy_keV,amplitude,amplitude_stddev_placeholder"]
    for ln in result.lines:
        rows.append(f"{ln.energy:.17g},{ln.amplitude:.17g},nan")
    return "\n".join(rows) + "\n"


def result_json(result: UnfoldResult) -> str:
    payload = {
        "lines": [{"energy_keV": ln.energy, "amplitude": ln.amplitude} for ln in result.lines],
        "residual_norm": result.residual_norm,
        "diagnostics": list(result.diagnostics),
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"
