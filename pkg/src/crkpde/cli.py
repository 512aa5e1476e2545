"""Command line entry point: ``crkpde run | converge | compare``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .crk import ConvergenceError
from .harness import ConfigError, compare, converge, load_config, preset_config, run

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGENCE = 0, 2, 3


def _float_list(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from exc


def _common(p):
    p.add_argument("--preset", help="experiment preset id")
    p.add_argument("--config", type=Path, help="flat key = value config file")
    p.add_argument("--dt", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--t-end", type=float, dest="t_end")
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", type=int, dest="max_iter")
    p.add_argument("--scheme")
    p.add_argument("--out", help="CSV path (relative paths honour CRKPDE_OUTPUT_DIR)")
    p.add_argument("--full", action="store_true", help="use the preset's full time horizon")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crkpde", description="Local energy-preserving PDE integrators")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one simulation")
    _common(p_run)
    p_run.add_argument("--snapshots", type=_float_list, help="times at which |u| snapshots are written")
    p_conv = sub.add_parser("converge", help="temporal convergence study")
    _common(p_conv)
    p_conv.add_argument("--dts", type=_float_list, required=True)
    p_cmp = sub.add_parser("compare", help="run several schemes side by side")
    _common(p_cmp)
    p_cmp.add_argument("--schemes", required=True, help="comma separated scheme ids")
    return parser


def _config(args):
    overrides = dict(dt=args.dt, n=args.n, m=args.m, t_end=args.t_end, tol=args.tol, max_iter=args.max_iter,
                     scheme=args.scheme, out=args.out)
    if getattr(args, "snapshots", None):
        overrides["snapshots"] = args.snapshots
    if args.config is not None:
        try:
            text = args.config.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        if args.preset:
            text = f"preset = {args.preset}\n" + text
        return load_config(text, full=args.full, **overrides)
    if not args.preset:
        raise ConfigError("give --preset or --config")
    return preset_config(args.preset, full=args.full, **overrides)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        if args.command == "run":
            print("\n".join(run(cfg).lines()))
        elif args.command == "converge":
            print("\n".join(converge(cfg, args.dts).lines()))
        else:
            schemes = [s.strip() for s in args.schemes.split(",") if s.strip()]
            for scheme, summary in compare(cfg, schemes).items():
                print(f"[{scheme}]")
                print("\n".join(summary.lines()))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
