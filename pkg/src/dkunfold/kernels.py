"""Matched interpolation/derivative kernel pairs.

A pair ``(d0, d1)`` is a smoothing kernel and a first-derivative kernel
sampled on the same taps.  The pair is *matched* when the discrete Fourier
transforms obey ``1j * omega * D0(omega) == D1(omega)`` over the band of
interest.  Odd supports sit on integer offsets ``-H..H``; even supports sit
on half-integer offsets (``-1.5, -0.5, 0.5, 1.5`` for four taps).

Conventions
-----------
* ``d0`` is even, ``sum(d0) == 1``.
* ``d1`` is odd and ``sum(-offset * d1) == 1``, so that convolving an
  increasing unit ramp with ``d1`` returns ``+1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

__all__ = [
    "KernelPair",
    "DesignSpec",
    "centered_offsets",
    "frequency_response",
    "matching_residual",
    "matching_error",
    "design_pair",
    "sampled_gaussian_pair",
    "delta_pair",
    "catalog_pair",
    "catalog_labels",
    "format_catalog",
    "parse_catalog",
]

DEFAULT_BAND_EDGE = 0.8 * math.pi
DEFAULT_GRID_POINTS = 1024
WEIGHTS = ("uniform", "raised-cosine")

_INVARIANT_TOL = 1e-12


def centered_offsets(support: int) -> np.ndarray:
    """Tap offsets for a centered kernel of ``support`` taps.

    Odd supports give integers ``-H..H``; even supports give half-integers.
    """
    support = int(support)
    if support < 1:
        raise ValueError("support must be positive")
    return np.arange(support, dtype=float) - (support - 1) / 2.0


@dataclass(frozen=True, eq=False)
class KernelPair:
    """Discrete smoothing/derivative taps sharing one set of offsets.

    Parameters
    ----------
    d0 : array_like
        Smoothing (interpolation) taps, dimensionless.
    d1 : array_like
        Derivative taps, units of 1/sample.
    label : str
        Catalog identifier such as ``"DK5"`` or ``"gauss-5"``.
    """

    d0: np.ndarray
    d1: np.ndarray
    label: str = ""
    offsets: np.ndarray = field(init=False)

    def __post_init__(self):
        d0 = np.array(self.d0, dtype=float)
        d1 = np.array(self.d1, dtype=float)
        if d0.ndim != 1 or d1.ndim != 1 or d0.shape != d1.shape:
            raise ValueError("d0 and d1 must be 1-D with equal length")
        if d0.size < 2:
            raise ValueError("a kernel pair needs at least two taps")
        offsets = centered_offsets(d0.size)
        for arr in (d0, d1, offsets):
            arr.flags.writeable = False
        object.__setattr__(self, "d0", d0)
        object.__setattr__(self, "d1", d1)
        object.__setattr__(self, "offsets", offsets)

    @property
    def support(self) -> int:
        return int(self.d0.size)

    @property
    def half_sample(self) -> bool:
        """True when taps sit on half-integer offsets (even support)."""
        return self.support % 2 == 0

    @property
    def shift(self) -> float:
        """Offset that moves half-integer taps back onto the integer lattice."""
        return 0.5 if self.half_sample else 0.0

    def dc_gain(self) -> float:
        return float(self.d0.sum())

    def ramp_response(self) -> float:
        return float(np.sum(-self.offsets * self.d1))

    def invariant_violations(self, tol: float = _INVARIANT_TOL) -> list[str]:
        """Return a list of human-readable invariant failures (empty if fine)."""
        problems = []
        scale0 = max(1.0, float(np.abs(self.d0).max()))
        scale1 = max(1.0, float(np.abs(self.d1).max()))
        if np.abs(self.d0 - self.d0[::-1]).max() > tol * scale0:
            problems.append("d0 is not even-symmetric")
        if np.abs(self.d1 + self.d1[::-1]).max() > tol * scale1:
            problems.append("d1 is not odd-antisymmetric")
        if abs(self.dc_gain() - 1.0) > tol:
            problems.append("sum(d0) != 1")
        if abs(self.ramp_response() - 1.0) > tol:
            problems.append("ramp response of d1 != 1")
        return problems

    def check(self, tol: float = _INVARIANT_TOL) -> "KernelPair":
        problems = self.invariant_violations(tol)
        if problems:
            name = self.label or "kernel pair"
            raise ValueError(f"{name}: " + "; ".join(problems))
        return self

    def reversed(self) -> "KernelPair":
        """Index-reversed pair with ``d1`` sign flipped (same operator)."""
        return KernelPair(self.d0[::-1], -self.d1[::-1], label=self.label)


@dataclass(frozen=True)
class DesignSpec:
    """Objective for :func:`design_pair`.

    ``band_edge`` is in radians/sample; the objective is sampled at
    ``grid_points`` equally spaced frequencies on ``[0, band_edge]``.
    Even ``support`` selects a half-sample design.
    """

    support: int
    band_edge: float = DEFAULT_BAND_EDGE
    weight_id: str = "uniform"
    grid_points: int = DEFAULT_GRID_POINTS

    def __post_init__(self):
        if int(self.support) != self.support or self.support < 3:
            raise ValueError(f"support must be an integer >= 3, got {self.support!r}")
        if not (0.0 < self.band_edge <= math.pi):
            raise ValueError("band_edge must lie in (0, pi]")
        if self.weight_id not in WEIGHTS:
            raise ValueError(f"unknown weight {self.weight_id!r}; expected one of {WEIGHTS}")
        if self.grid_points < 8 * self.support:
            raise ValueError("grid_points must be at least 8 * support")

    def frequencies(self) -> np.ndarray:
        return np.linspace(0.0, self.band_edge, int(self.grid_points))

    def weights(self) -> np.ndarray:
        omega = self.frequencies()
        if self.weight_id == "uniform":
            return np.ones_like(omega)
        return 0.5 * (1.0 + np.cos(np.pi * omega / self.band_edge))


def frequency_response(taps, omega, offsets=None):
    """Discrete-time Fourier transform ``sum(taps[n] * exp(-1j*omega*n))``.

    Parameters
    ----------
    taps : array_like
        Filter taps.
    omega : float or array_like
        Frequency in radians/sample.
    offsets : array_like, optional
        Tap positions ``n``.  Defaults to :func:`centered_offsets`.

    Returns
    -------
    complex or ndarray of complex
    """
    taps = np.asarray(taps, dtype=float)
    if offsets is None:
        offsets = centered_offsets(taps.size)
    offsets = np.asarray(offsets, dtype=float)
    w = np.asarray(omega, dtype=float)
    phase = np.exp(-1j * np.multiply.outer(w, offsets))
    out = phase @ taps
    if np.ndim(out) == 0:
        return complex(out)
    return out


def matching_residual(pair: KernelPair, omega):
    """``1j*omega*D0(omega) - D1(omega)`` for the given pair."""
    w = np.asarray(omega, dtype=float)
    d0 = frequency_response(pair.d0, w, pair.offsets)
    d1 = frequency_response(pair.d1, w, pair.offsets)
    return 1j * w * d0 - d1


def matching_error(pair: KernelPair, spec: DesignSpec) -> float:
    """Weighted mean of ``|1j*w*D0(w) - D1(w)|**2`` over the design band."""
    if pair.support != spec.support:
        raise ValueError(
            f"pair support {pair.support} does not match design support {spec.support}"
        )
    pair.check()
    omega = spec.frequencies()
    weights = spec.weights()
    resid = matching_residual(pair, omega)
    return float(np.sum(weights * np.abs(resid) ** 2) / np.sum(weights))


def _design_system(spec: DesignSpec):
    """Real linear model of the matching residual in the free half-taps.

    The unknown vector is ``x = (a, b)``: ``a`` holds d0 on the non-negative
    offsets and ``b[k] = d1[-p_k]`` on the positive offsets ``p_k``.  Then
    ``Im(residual) = A @ x`` (the real part vanishes by symmetry) and the
    normalizations read ``C @ x = e``.
    """
    offsets = centered_offsets(spec.support)
    pos = offsets[offsets > 0]
    has_center = not (spec.support % 2 == 0)
    omega = spec.frequencies()[:, None]

    cols_a = []
    if has_center:
        cols_a.append(omega[:, 0])
    cols_a.extend(2.0 * omega[:, 0] * np.cos(omega[:, 0] * p) for p in pos)
    cols_b = [-2.0 * np.sin(omega[:, 0] * p) for p in pos]
    A = np.column_stack(cols_a + cols_b)

    n_a = len(cols_a)
    C = np.zeros((2, A.shape[1]))
    if has_center:
        C[0, 0] = 1.0
        C[0, 1:n_a] = 2.0
    else:
        C[0, :n_a] = 2.0
    C[1, n_a:] = 2.0 * pos
    e = np.array([1.0, 1.0])
    return A, C, e, pos, has_center


def _expand_taps(x: np.ndarray, support: int, pos: np.ndarray, has_center: bool):
    n_a = len(pos) + (1 if has_center else 0)
    a, b = x[:n_a], x[n_a:]
    half = support // 2
    d0 = np.zeros(support)
    d1 = np.zeros(support)
    if has_center:
        d0[half] = a[0]
        a = a[1:]
        right = slice(half + 1, support)
    else:
        right = slice(half, support)
    d0[right] = a
    d0[: len(a)] = a[::-1]
    d1[right] = -b
    d1[: len(b)] = b[::-1]
    return d0, d1


def design_pair(spec: DesignSpec, label: str | None = None) -> KernelPair:
    """Least-squares optimal matched pair for ``spec``.

    The matching residual is linear in the taps, so the optimum of the
    weighted objective under the DC and ramp constraints is a single
    equality-constrained linear least-squares solve (null-space method).
    """
    A, C, e, pos, has_center = _design_system(spec)
    sw = np.sqrt(spec.weights())[:, None]
    Aw = A * sw

    x_part = np.linalg.lstsq(C, e, rcond=None)[0]
    _, s, vt = np.linalg.svd(C)
    rank = int(np.sum(s > s[0] * 1e-12))
    null = vt[rank:].T
    if null.shape[1]:
        z = np.linalg.lstsq(Aw @ null, -(Aw @ x_part), rcond=None)[0]
        x = x_part + null @ z
    else:
        x = x_part
    if not np.all(np.isfinite(x)):
        raise RuntimeError("constrained least-squares solve produced non-finite taps")

    d0, d1 = _expand_taps(x, spec.support, pos, has_center)
    # Remove rounding residue so the normalizations hold to the last ulp.
    d0 = d0 / d0.sum()
    offsets = centered_offsets(spec.support)
    d1 = d1 / np.sum(-offsets * d1)
    if label is None:
        label = f"DK{spec.support}"
    return KernelPair(d0, d1, label=label).check()


def sampled_gaussian_pair(sigma: float | None = None, support: int = 5, label: str | None = None) -> KernelPair:
    """Sampled Gaussian and sampled Gaussian derivative, renormalized.

    ``sigma`` is in samples and defaults to ``support / 5``.  Both kernels
    are rescaled to unit DC gain and unit ramp response so that comparisons
    against designed pairs isolate the matching quality.
    """
    support = int(support)
    if support < 3 or support % 2 == 0:
        raise ValueError("support must be an odd integer >= 3")
    if sigma is None:
        sigma = support / 5.0
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    j = centered_offsets(support)
    g = np.exp(-(j**2) / (2.0 * sigma**2))
    d0 = g / g.sum()
    d1 = -j * g / sigma**2
    d1 = d1 / np.sum(-j * d1)
    if label is None:
        label = f"gauss-{support}"
    return KernelPair(d0, d1, label=label).check()


def delta_pair(support: int = 3) -> KernelPair:
    """Identity smoothing with a central difference, padded to ``support``."""
    support = int(support)
    if support < 3:
        raise ValueError("support must be >= 3")
    d0 = np.zeros(support)
    d1 = np.zeros(support)
    if support % 2:
        h = support // 2
        d0[h] = 1.0
        d1[h - 1], d1[h + 1] = 0.5, -0.5
    else:
        # Half-sample analogue: linear interpolation and first difference.
        h = support // 2
        d0[h - 1] = d0[h] = 0.5
        d1[h - 1], d1[h] = 1.0, -1.0
    return KernelPair(d0, d1, label=f"delta-{support}").check()


_CATALOG = {"DK3": 3, "DK4": 4, "DK5": 5}


def catalog_labels() -> list[str]:
    return ["DK3", "DK4", "DK5", "gauss-3", "gauss-5"]


def catalog_pair(label: str, band_edge: float = DEFAULT_BAND_EDGE,
                 weight_id: str = "uniform", grid_points: int = DEFAULT_GRID_POINTS) -> KernelPair:
    """Resolve a catalog label (``DK3``, ``DK4``, ``DK5``, ``gauss-N``, ``delta-N``)."""
    if label in _CATALOG:
        spec = DesignSpec(_CATALOG[label], band_edge, weight_id, grid_points)
        return design_pair(spec, label=label)
    if label.startswith("DK") and label[2:].isdigit():
        spec = DesignSpec(int(label[2:]), band_edge, weight_id, grid_points)
        return design_pair(spec, label=label)
    if label.startswith("gauss-") and label[6:].isdigit():
        return sampled_gaussian_pair(support=int(label[6:]), label=label)
    if label.startswith("delta-") and label[6:].isdigit():
        return delta_pair(int(label[6:]))
    raise KeyError(f"unknown kernel label {label!r}")


def format_catalog(pairs) -> str:
    """Plain-text table ``label, offset, d0, d1``, one row per tap."""
    lines = ["label, offset, d0, d1"]
    for pair in pairs:
        for off, a, b in zip(pair.offsets, pair.d0, pair.d1):
            lines.append(f"{pair.label}, {off:g}, {a:.17g}, {b:.17g}")
    return "\n".join(lines) + "\n"


def parse_catalog(text: str) -> dict[str, KernelPair]:
    rows: dict[str, list[tuple[float, float, float]]] = {}
    body = [ln for ln in text.splitlines() if ln.strip()]
    if not body or body[0].replace(" ", "") != "label,offset,d0,d1":
        raise ValueError("missing catalog header")
    for ln in body[1:]:
        label, off, a, b = (s.strip() for s in ln.split(","))
        rows.setdefault(label, []).append((float(off), float(a), float(b)))
    out = {}
    for label, taps in rows.items():
        taps.sort()
        pair = KernelPair([t[1] for t in taps], [t[2] for t in taps], label=label)
        if not np.allclose(pair.offsets, [t[0] for t in taps]):
            raise ValueError(f"{label}: offsets are not centered")
        out[label] = pair
    return out
