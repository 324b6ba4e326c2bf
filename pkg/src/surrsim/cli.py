"""Command-line pipeline driver.

Subcommands mirror the stages (calibrate, simulate, metrics, meta, report)
plus `all` to chain them.  Output directory and thread count can also come
from the SURRSIM_OUT and SURRSIM_THREADS environment variables; every other
knob is an explicit flag so the manifest fully determines the outputs.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import __version__
from . import pipeline
from .scenario import PROFILES, get_scenario

_STAGES = ("calibrate", "simulate", "metrics", "meta", "report", "all")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="surrsim",
        description="Simulate joint surrogate/survival trials and score "
        "patient- and trial-level surrogacy metrics.",
    )
    parser.add_argument("--version", action="version", version=f"surrsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _STAGES:
        s = sub.add_parser(name, help=f"run the {name} stage" if name != "all" else "run every stage in order")
        s.add_argument(
            "--scenario",
            default="Ks1",
            help="preset name or path to a JSON scenario file (default Ks1)",
        )
        s.add_argument(
            "--profile",
            choices=sorted(PROFILES),
            default="desk",
            help="run-size profile (default desk)",
        )
        s.add_argument("--seed", type=int, default=7, help="master seed (default 7)")
        s.add_argument(
            "--out",
            default=None,
            help="output directory (default runs/<scenario>-<profile>-s<seed>; "
            "SURRSIM_OUT overrides the default)",
        )
        s.add_argument(
            "--threads",
            type=int,
            default=None,
            help="worker processes (default 1; SURRSIM_THREADS overrides the "
            "default; never changes output bytes)",
        )
        if name in ("meta", "all"):
            s.add_argument(
                "--mode",
                choices=["fixed", "mixed"],
                default="fixed",
                help="meta-set pairing mode: strata by (alpha, beta1) or by alpha",
            )
            s.add_argument(
                "--dups",
                type=int,
                choices=[3, 1],
                default=3,
                help="replicates per active-mean value in fixed mode (15- or 5-study sets)",
            )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = get_scenario(args.scenario)
    except (KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    profile = PROFILES[args.profile]
    spec = spec.with_profile(profile)
    outdir = args.out or os.environ.get("SURRSIM_OUT") or (
        f"runs/{spec.name}-{profile.name}-s{args.seed}"
    )
    if args.threads is not None:
        threads = args.threads
    else:
        threads = int(os.environ.get("SURRSIM_THREADS", "1"))

    mode = {"fixed": "fixed_beta1", "mixed": "mixed_beta1"}.get(
        getattr(args, "mode", "fixed")
    )
    dups = getattr(args, "dups", 3)

    stage_args = (outdir, spec, profile, args.seed, threads)
    try:
        if args.command == "calibrate":
            pipeline.stage_calibrate(*stage_args)
        elif args.command == "simulate":
            pipeline.stage_simulate(*stage_args)
        elif args.command == "metrics":
            pipeline.stage_metrics(*stage_args)
        elif args.command == "meta":
            pipeline.stage_meta(*stage_args, mode=mode, dups=dups)
        elif args.command == "report":
            for line in pipeline.stage_report(*stage_args):
                print(line)
        elif args.command == "all":
            for line in pipeline.run_all(*stage_args, mode=mode, dups=dups):
                print(line)
    except Exception as exc:  # surface a single diagnostic line, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
