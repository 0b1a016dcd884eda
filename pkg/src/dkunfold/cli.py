"""Command line entry point: ``dkunfold <verb> [--config F] [--seed N] [--out DIR]``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from . import harness
from .folding import SpectralLine, channelize, fold, format_histogram, histogram_csv, parse_histogram, poisson_realize
from .kernels import DesignSpec, catalog_labels, catalog_pair, format_catalog, matching_error
from .reconstruction import build_m_surface, estimate_density, kernel_reach, reconstruction_csv
from .unfolding import result_csv, result_json, spectrum_error, unfold

logger = logging.getLogger("dkunfold")


def _load_config(args) -> harness.ExperimentConfig:
    config = harness.ExperimentConfig()
    if args.config:
        with open(args.config) as fh:
            config = harness.parse_config(fh.read(), config)
    return config


def _outdir(args, config) -> str:
    out = args.out or config.output_dir
    os.makedirs(out, exist_ok=True)
    return out


def _write(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)
    logger.info("wrote %s", path)


def cmd_design(args, config):
    labels = args.labels or catalog_labels()
    pairs = [catalog_pair(lab, band_edge=config.band_edge) for lab in labels]
    out = _outdir(args, config)
    _write(os.path.join(out, "kernels.txt"), format_catalog(pairs))
    for pair in pairs:
        err = matching_error(pair, DesignSpec(pair.support, config.band_edge))
        print(f"{pair.label:10s} support={pair.support} matching_error={err:.6e}")


def _truth_csv(lines):
    rows = ["energy_keV,amplitude"] + [f"{ln.energy:.17g},{ln.amplitude:.17g}" for ln in lines]
    return "\n".join(rows) + "\n"


def _read_truth(path):
    with open(path) as fh:
        body = fh.read().splitlines()[1:]
    return [SpectralLine(*map(float, ln.split(","))) for ln in body if ln.strip()]


def cmd_simulate(args, config):
    seed = args.seed if args.seed is not None else config.base_seed
    counts = args.counts or config.count_levels[-1]
    ctx = harness.build_context(config)
    truth = harness.generate_lines(config, seed)
    expected = channelize(fold(truth, ctx.rhat), config.epsilon)
    scale = counts / float(expected.counts.sum())
    truth = [SpectralLine(ln.energy, ln.amplitude * scale) for ln in truth]
    if args.expected:
        hist = type(expected)(expected.epsilon, expected.origin, expected.counts * scale, "expected")
    else:
        hist = poisson_realize(expected, counts, harness.derive_seed(seed, "noise"))
    out = _outdir(args, config)
    _write(os.path.join(out, "histogram.txt"), format_histogram(hist))
    _write(os.path.join(out, "histogram.csv"), histogram_csv(hist))
    _write(os.path.join(out, "truth.csv"), _truth_csv(truth))
    print(f"simulated {len(truth)} lines, {int(round(hist.counts.sum()))} counts in {hist.n_channels} channels")


def cmd_unfold(args, config):
    with open(args.histogram) as fh:
        hist = parse_histogram(fh.read())
    ctx = harness.build_context(replace(config, kernels=(args.kernel,)))
    pair = ctx.pairs[args.kernel]
    result = unfold(hist, ctx.rhat, pair, ctx.options)
    surface = build_m_surface(hist, kernel_reach(pair) + 1)
    spectrum = estimate_density(surface, pair)
    out = _outdir(args, config)
    _write(os.path.join(out, "result.csv"), result_csv(result))
    _write(os.path.join(out, "result.json"), result_json(result))
    _write(os.path.join(out, "reconstructed.csv"), reconstruction_csv(spectrum))
    for ln in result.lines:
        print(f"E = {ln.energy:10.3f} keV   a = {ln.amplitude:14.3f}")
    if args.truth:
        err = spectrum_error(_read_truth(args.truth), result, ctx.rhat)
        print(f"spectrum_error = {err:.6g}")


def cmd_ensemble(args, config):
    if args.seed is not None:
        config = replace(config, base_seed=args.seed)
    if args.trials:
        config = replace(config, trials=args.trials)
    if args.jobs:
        config = replace(config, jobs=args.jobs)
    rows = harness.run_ensemble(config, timing=args.timing)
    out = _outdir(args, config)
    harness.emit_csv(rows, os.path.join(out, "ensemble.csv"))
    summary = harness.summarize(rows)
    lines = ["kernel,total_counts,mean_error,sem,n,failures"]
    for (k, c), (m, s, n, f) in summary.items():
        lines.append(f"{k},{c},{m!r},{s!r},{n},{f}")
    _write(os.path.join(out, "summary.csv"), "\n".join(lines) + "\n")
    print("\n".join(lines))


def cmd_plot(args, config):
    rows = harness.read_csv(args.input or os.path.join(args.out or config.output_dir, "ensemble.csv"))
    out = _outdir(args, config)
    kinds = ["counts", "kernels"] if args.kind == "both" else [args.kind]
    for kind in kinds:
        harness.emit_svg(rows, os.path.join(out, f"{kind}.svg"), kind=kind, total_counts=args.level)
        logger.info("wrote %s.svg", kind)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dkunfold", description=__doc__)
    parser.add_argument("--dump-config", action="store_true", help="print every config key with its default and exit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb")

    def verb(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--seed", type=int, help="seed (base seed for ensembles)")
        p.add_argument("--out", help="output directory (default: output_dir from config)")
        p.set_defaults(func=func)
        return p

    p = verb("design-kernels", cmd_design, "design and export kernel pairs")
    p.add_argument("--labels", nargs="*", help=f"kernel labels (default: {' '.join(catalog_labels())})")

    p = verb("simulate", cmd_simulate, "simulate one histogram")
    p.add_argument("--counts", type=int, help="total counts (default: highest config level)")
    p.add_argument("--expected", action="store_true", help="write the noiseless expectation")

    p = verb("unfold", cmd_unfold, "unfold a histogram file")
    p.add_argument("--histogram", required=True)
    p.add_argument("--kernel", default="DK5")
    p.add_argument("--truth", help="truth.csv from simulate, to report spectrum_error")

    p = verb("ensemble", cmd_ensemble, "run the kernel x counts x trials study")
    p.add_argument("--trials", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--timing", action="store_true", help="record wall time per trial (breaks byte-identical CSVs)")

    p = verb("plot", cmd_plot, "render SVG plots from an ensemble CSV")
    p.add_argument("--input", help="ensemble CSV (default: <out>/ensemble.csv)")
    p.add_argument("--kind", choices=["counts", "kernels", "both"], default="both")
    p.add_argument("--level", type=int, help="count level for the kernel plot")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.dump_config:
            config = _load_config(args) if getattr(args, "config", None) else harness.ExperimentConfig()
            sys.stdout.write(harness.dump_config(config))
            return 0
        if args.verb is None:
            parser.print_help()
            return 2
        config = _load_config(args)
        args.func(args, config)
    except Exception as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
