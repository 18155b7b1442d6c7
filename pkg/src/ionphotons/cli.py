"""Command-line interface: simulate, correlate, fit, figure.

Exit codes: 0 success, 1 configuration/validation error, 2 I/O or file
format error, 3 fit non-convergence or a failed figure/oracle check.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_config
from .correlator import OracleMismatchError
from .pipeline import (PipelineStageError, run_correlate, run_figure, run_fit,
                       run_simulate)
from .tagfile import TagFileError

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_NOT_CONVERGED = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ionphotons",
        description="Simulate and analyze photon correlations from trapped ions")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="simulate a run and write a tag file")
    sim.add_argument("--config", required=True, help="key=value config file")
    sim.add_argument("--seed", type=int, default=None,
                     help="override the config seed")
    sim.add_argument("--out", required=True, help="output tag file")

    cor = sub.add_parser("correlate", help="histogram a tag file into a CSV")
    cor.add_argument("input", help="tag file")
    cor.add_argument("--bin", type=int, required=True, help="bin width, ps")
    cor.add_argument("--window", type=int, required=True, help="max |delay|, ps")
    cor.add_argument("--oracle", action="store_true",
                     help="cross-check against the brute-force pair count")
    cor.add_argument("--live-time-s", type=float, default=None,
                     help="normalize by live time instead of span")
    cor.add_argument("--out", required=True, help="output CSV")

    fit = sub.add_parser("fit", help="fit a model to a curve CSV")
    fit.add_argument("input", help="curve CSV")
    fit.add_argument("--model", required=True, choices=("dip", "peak", "rabi"))
    fit.add_argument("--config", default=None,
                     help="config supplying the atom guess for model=rabi")
    fit.add_argument("--peak-center-ps", type=float, default=None,
                     help="peak location for model=peak (default: highest bin)")
    fit.add_argument("--out", required=True, help="output report path")

    figp = sub.add_parser("figure", help="run a canned figure pipeline")
    figp.add_argument("name", choices=("fig2", "fig3", "fig4"))
    figp.add_argument("--seed", type=int, required=True)
    figp.add_argument("--out", required=True, help="output directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            config = load_config(args.config)
            if args.seed is not None:
                from dataclasses import replace
                config = replace(config, seed=args.seed)
            n = run_simulate(config, args.out)
            print(f"wrote {n} tags to {args.out}")
        elif args.command == "correlate":
            hist, _ = run_correlate(args.input, args.bin, args.window,
                                    args.out, oracle=args.oracle,
                                    live_time=args.live_time_s)
            print(f"wrote {hist.n_bins} bins ({int(hist.counts.sum())} pairs) "
                  f"to {args.out}")
        elif args.command == "fit":
            atom_guess = None
            if args.config is not None:
                atom_guess = load_config(args.config).atom
            result = run_fit(args.input, args.model, args.out,
                             atom_guess=atom_guess,
                             peak_center_ps=args.peak_center_ps)
            print(open(args.out, "r", encoding="utf-8").read(), end="")
            if not result.converged:
                return EXIT_NOT_CONVERGED
        elif args.command == "figure":
            checks = run_figure(args.name, args.seed, args.out)
            for check in checks:
                print(check.line())
            if not all(c.passed for c in checks):
                return EXIT_NOT_CONVERGED
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OracleMismatchError as exc:
        print(f"oracle mismatch: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except PipelineStageError as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except TagFileError as exc:
        print(f"tag file error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
