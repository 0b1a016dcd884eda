"""Simulation study runner: kernel comparison and error-vs-statistics sweeps.

Config files are plain ``key = value`` lines.  ``#`` starts a comment, list
values are comma separated, and unknown keys are rejected.  Run
``dkunfold --dump-config`` for every key with its default.

Seeds
-----
Trial seeds are ``derive_seed(base_seed, level_index, trial)`` where
``derive_seed`` takes the first 8 bytes (little endian) of the BLAKE2b hash
of the colon-joined decimal arguments.  The kernel is deliberately not part
of the hash, so all kernels see the same line sets and noise realizations.
Within a trial the line set is drawn from ``UniformStream(seed)`` and the
Poisson noise uses ``derive_seed(seed, "noise")``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
import csv
from dataclasses import asdict, dataclass, fields, replace
from functools import lru_cache
import hashlib
import io
import logging
import math
import time

import numpy as np
from scipy import stats

from .folding import SpectralLine, channelize, fold, poisson_realize
from .kernels import catalog_pair
from .response import (DetectorModel, EnergyGrid, MediumModel, ResponseMatrix,
                       detector_response_matrix, medium_kernel, modified_response)
from .rng import UniformStream
from .unfolding import UnfoldOptions, spectrum_error, unfold

logger = logging.getLogger(__name__)

__all__ = [
    "ExperimentConfig",
    "TrialRow",
    "Context",
    "build_context",
    "derive_seed",
    "generate_lines",
    "run_trial",
    "run_ensemble",
    "summarize",
    "paired_comparison",
    "format_csv",
    "parse_csv",
    "emit_csv",
    "read_csv",
    "emit_svg",
    "parse_config",
    "dump_config",
    "CSV_HEADER",
]

CSV_HEADER = "kernel,total_counts,trial,seed,error,runtime_ms"


@dataclass(frozen=True)
class ExperimentConfig:
    # fine energy grid (keV)
    e_min: float = 0.0
    e_max: float = 4096.0
    n_points: int = 4097
    channel_factor: int = 4
    # detector
    fwhm_a: float = 2.0
    fwhm_b: float = 0.0
    photofraction: float = 0.5
    compton_fraction: float = 0.35
    # medium
    transmission: float = 0.9
    scatter_fraction: float = 0.3
    # line sets
    n_lines: int = 3
    line_region_low: float = 0.2
    line_region_high: float = 0.8
    amplitude_decades: float = 1.0
    separation_fwhm: float = 3.0
    # experiment
    kernels: tuple = ("DK5", "gauss-5")
    count_levels: tuple = (1000, 10000, 100000, 1000000)
    trials: int = 100
    base_seed: int = 20090401
    output_dir: str = "out"
    jobs: int = 1
    # kernel design and unfolding
    band_edge_pi: float = 0.8
    min_prominence: float = 0.05
    min_separation_fwhm: float = 1.0
    refine_radius: int = 4

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        levels = tuple(int(c) for c in self.count_levels)
        if not levels or any(c <= 0 for c in levels):
            raise ValueError("count levels must be positive integers")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError("count levels must be strictly increasing")
        object.__setattr__(self, "count_levels", levels)
        object.__setattr__(self, "kernels", tuple(self.kernels))
        if not self.kernels:
            raise ValueError("at least one kernel label is required")
        for label in self.kernels:
            catalog_pair(label, band_edge=self.band_edge)
        if self.n_lines < 1:
            raise ValueError("n_lines must be >= 1")
        if not (0.0 <= self.line_region_low < self.line_region_high <= 1.0):
            raise ValueError("line region must satisfy 0 <= low < high <= 1")
        if self.channel_factor < 1:
            raise ValueError("channel_factor must be >= 1")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")

    @property
    def band_edge(self) -> float:
        return self.band_edge_pi * math.pi

    @property
    def grid(self) -> EnergyGrid:
        return EnergyGrid(self.e_min, self.e_max, self.n_points)

    @property
    def detector(self) -> DetectorModel:
        return DetectorModel(self.fwhm_a, self.fwhm_b, self.photofraction, self.compton_fraction)

    @property
    def medium(self) -> MediumModel:
        return MediumModel(self.transmission, self.scatter_fraction)

    @property
    def epsilon(self) -> float:
        return self.channel_factor * self.grid.spacing

    def line_region(self) -> tuple[float, float]:
        span = self.e_max - self.e_min
        return (self.e_min + self.line_region_low * span, self.e_min + self.line_region_high * span)

    def unfold_options(self) -> UnfoldOptions:
        low = self.line_region()[0]
        sep = self.min_separation_fwhm * float(self.detector.fwhm(low))
        return UnfoldOptions(min_prominence=self.min_prominence, min_separation=sep,
                             refine_radius=self.refine_radius)


_LIST_KEYS = {"kernels": str, "count_levels": int}


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Read ``key = value`` lines on top of ``base`` (defaults if omitted)."""
    base = base or ExperimentConfig()
    types = {f.name: type(getattr(base, f.name)) for f in fields(base)}
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        if key in _LIST_KEYS:
            conv = _LIST_KEYS[key]
            updates[key] = tuple(conv(float(v)) if conv is int else conv(v.strip())
                                 for v in value.split(",") if v.strip())
        elif types[key] is int:
            fv = float(value)
            if fv != int(fv):
                raise ValueError(f"config line {lineno}: {key} must be an integer")
            updates[key] = int(fv)
        elif types[key] is float:
            updates[key] = float(value)
        else:
            updates[key] = value
    return replace(base, **updates)


def dump_config(config: ExperimentConfig | None = None) -> str:
    config = config or ExperimentConfig()
    out = []
    for key, value in asdict(config).items():
        if isinstance(value, (tuple, list)):
            value = ", ".join(str(v) for v in value)
        out.append(f"{key} = {value}")
    return "\n".join(out) + "\n"


@dataclass(frozen=True)
class TrialRow:
    kernel: str
    total_counts: int
    trial: int
    seed: int
    error: float
    runtime_ms: float = 0.0


@dataclass(frozen=True, eq=False)
class Context:
    """Per-config objects shared by every trial (read-only)."""

    config: ExperimentConfig
    rhat: ResponseMatrix
    pairs: dict
    options: UnfoldOptions


@lru_cache(maxsize=2)
def _rhat_for(grid: EnergyGrid, detector: DetectorModel, medium: MediumModel) -> ResponseMatrix:
    logger.info("building response on %d points", grid.n_points)
    R = detector_response_matrix(detector, grid)
    P = medium_kernel(medium, grid)
    return modified_response(R, P)


def build_context(config: ExperimentConfig) -> Context:
    rhat = _rhat_for(config.grid, config.detector, config.medium)
    pairs = {label: catalog_pair(label, band_edge=config.band_edge) for label in config.kernels}
    return Context(config, rhat, pairs, config.unfold_options())


def derive_seed(*parts) -> int:
    digest = hashlib.blake2b(":".join(str(p) for p in parts).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def generate_lines(config: ExperimentConfig, seed: int, max_attempts: int = 10000) -> list[SpectralLine]:
    """Random on-grid line set for one trial.

    Energies are uniform on the configured region (default the middle 60%
    of the grid) with pairwise separation of at least ``separation_fwhm``
    times the FWHM at the higher energy.  Relative amplitudes are
    log-uniform over ``amplitude_decades`` decades.
    """
    grid = config.grid
    pts = grid.points
    lo, hi = config.line_region()
    stream = UniformStream(seed)
    energies: list[float] = []
    attempts = 0
    while len(energies) < config.n_lines:
        attempts += 1
        if attempts > max_attempts:
            raise RuntimeError("could not place lines with the requested separation")
        e = float(pts[grid.nearest_index(lo + (hi - lo) * stream.next())])
        if all(abs(e - o) >= config.separation_fwhm * float(config.detector.fwhm(max(e, o)))
               for o in energies):
            energies.append(e)
    energies.sort()
    amps = [10.0 ** (config.amplitude_decades * stream.next()) for _ in energies]
    return [SpectralLine(e, a) for e, a in zip(energies, amps)]


def run_trial(config: ExperimentConfig, kernel: str, total_counts: int, seed: int,
              context: Context | None = None, timing: bool = False) -> TrialRow:
    """One simulate-and-unfold cycle scored with :func:`spectrum_error`.

    A failure inside the pipeline yields a row with ``error = nan``.
    """
    if int(total_counts) != total_counts or total_counts <= 0:
        raise ValueError("total_counts must be a positive integer")
    ctx = context or build_context(config)
    pair = ctx.pairs[kernel] if kernel in ctx.pairs else catalog_pair(kernel, band_edge=config.band_edge)
    start = time.perf_counter()
    try:
        truth = generate_lines(config, seed)
        expected = channelize(fold(truth, ctx.rhat), config.epsilon)
        hist = poisson_realize(expected, int(total_counts), derive_seed(seed, "noise"))
        # Scale the truth to the realized exposure so amplitudes are in counts.
        scale = total_counts / float(expected.counts.sum())
        truth = [SpectralLine(ln.energy, ln.amplitude * scale) for ln in truth]
        result = unfold(hist, ctx.rhat, pair, ctx.options)
        err = spectrum_error(truth, result, ctx.rhat)
    except Exception:  # sentinel row, the ensemble keeps going
        logger.exception("trial failed: kernel=%s counts=%s seed=%s", kernel, total_counts, seed)
        err = float("nan")
    elapsed = (time.perf_counter() - start) * 1e3 if timing else 0.0
    return TrialRow(kernel, int(total_counts), -1, int(seed), float(err), elapsed)


def run_ensemble(config: ExperimentConfig, timing: bool = False, progress=None) -> list[TrialRow]:
    """Every (kernel, count level, trial) combination, in index order."""
    ctx = build_context(config)
    tasks = []
    for li, level in enumerate(config.count_levels):
        for t in range(config.trials):
            seed = derive_seed(config.base_seed, li, t)
            for kernel in config.kernels:
                tasks.append((kernel, level, t, seed))

    def work(task):
        kernel, level, t, seed = task
        row = run_trial(config, kernel, level, seed, context=ctx, timing=timing)
        if progress is not None:
            progress()
        return replace(row, trial=t)

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            rows = list(pool.map(work, tasks))
    else:
        rows = [work(task) for task in tasks]
    order = {k: i for i, k in enumerate(config.kernels)}
    rows.sort(key=lambda r: (order[r.kernel], r.total_counts, r.trial))
    return rows


def summarize(rows) -> dict:
    """``{(kernel, total_counts): (mean, standard error, n, failures)}``."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.kernel, r.total_counts), []).append(r.error)
    out = {}
    for key, errs in groups.items():
        arr = np.asarray(errs, dtype=float)
        ok = arr[np.isfinite(arr)]
        n = ok.size
        mean = float(ok.mean()) if n else float("nan")
        sem = float(ok.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
        out[key] = (mean, sem, n, int(arr.size - n))
    return out


def paired_comparison(rows, kernel_a: str, kernel_b: str, total_counts: int):
    """Paired t-test of ``error(a) - error(b)`` over trials sharing seeds.

    Returns ``(mean difference, one-sided p-value for mean(a) < mean(b))``.
    """
    a = {r.seed: r.error for r in rows if r.kernel == kernel_a and r.total_counts == total_counts}
    b = {r.seed: r.error for r in rows if r.kernel == kernel_b and r.total_counts == total_counts}
    seeds = sorted(s for s in a if s in b and math.isfinite(a[s]) and math.isfinite(b[s]))
    if len(seeds) < 2:
        raise ValueError("need at least two shared trials")
    x = np.array([a[s] for s in seeds])
    y = np.array([b[s] for s in seeds])
    res = stats.ttest_rel(x, y, alternative="less")
    return float(np.mean(x - y)), float(res.pvalue)


def format_csv(rows) -> str:
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    for r in rows:
        buf.write(f"{r.kernel},{r.total_counts},{r.trial},{r.seed},{r.error!r},{r.runtime_ms!r}\n")
    return buf.getvalue()


def parse_csv(text: str) -> list[TrialRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or ",".join(header) != CSV_HEADER:
        raise ValueError("unexpected ensemble CSV header")
    return [TrialRow(k, int(c), int(t), int(s), float(e), float(ms))
            for k, c, t, s, e, ms in reader]


def emit_csv(rows, path) -> None:
    rows = list(rows)
    if not rows:
        raise ValueError("nothing to write")
    with open(path, "w", newline="") as fh:
        fh.write(format_csv(rows))


def read_csv(path) -> list[TrialRow]:
    with open(path) as fh:
        return parse_csv(fh.read())


_MARKERS = {"gauss": "o", "DK3": "s", "DK4": "x", "DK5": "D"}


def _marker(label: str) -> str:
    for key, m in _MARKERS.items():
        if label.startswith(key):
            return m
    return "^"


def emit_svg(rows, path, kind: str = "counts", total_counts: int | None = None) -> None:
    """Render a self-contained SVG.

    ``kind="counts"``: mean error (with standard error bars) against total
    counts on a log axis, one curve per kernel.  ``kind="kernels"``: the
    per-trial errors of every kernel at one count level (default: the
    highest level present).
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = list(rows)
    if not rows:
        raise ValueError("nothing to plot")
    kernels = list(dict.fromkeys(r.kernel for r in rows))
    plt.rcParams["svg.hashsalt"] = "dkunfold"
    fig, ax = plt.subplots(figsize=(6, 4))
    if kind == "counts":
        summary = summarize(rows)
        for k in kernels:
            levels = sorted(c for (kk, c) in summary if kk == k)
            means = [summary[(k, c)][0] for c in levels]
            sems = [summary[(k, c)][1] for c in levels]
            ax.errorbar(levels, means, yerr=sems, marker=_marker(k), capsize=3, label=k)
        ax.set_xscale("log")
        ax.set_xlabel("total recorded counts")
        ax.set_ylabel("mean spectrum error")
    elif kind == "kernels":
        level = total_counts if total_counts is not None else max(r.total_counts for r in rows)
        for k in kernels:
            sel = sorted((r.trial, r.error) for r in rows if r.kernel == k and r.total_counts == level)
            if sel:
                ax.plot([s[0] for s in sel], [s[1] for s in sel], linestyle="none",
                        marker=_marker(k), fillstyle="none", label=k)
        ax.set_xlabel(f"simulated spectrum (trial) at {level} counts")
        ax.set_ylabel("spectrum error")
    else:
        plt.close(fig)
        raise ValueError(f"unknown plot kind {kind!r}")
    ax.legend()
    fig.tight_layout()
    try:
        fig.savefig(path, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
