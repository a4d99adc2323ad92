#!/usr/bin/env python3
import argparse
import os
import sys

COMMANDS = {
    "verify": "Run the surface identity suite",
    "solve": "Integrate the limit equations (imex or galerkin variant)",
    "galerkin": "Build a Galerkin basis and integrate the Galerkin system",
    "helmholtz": "Check Helmholtz-Leray projections on random fields",
    "thinfilm": "Thin-film identities and rate tables over an eps sweep",
}

THREAD_VARIABLES = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def cap_threads():
    """Set the BLAS thread pools to SURFNS_THREADS, overriding inherited values (before numpy loads)."""
    threads = os.environ.get("SURFNS_THREADS")
    if threads:
        for name in THREAD_VARIABLES:
            os.environ[name] = threads


def load(args):
    # Import here so the thread caps are in place before numpy loads
    from core.config import RunConfig, load_config, load_preset, with_overrides

    if args.preset:
        cfg = load_preset(args.preset)
    elif args.config:
        cfg = load_config(args.config)
    else:
        cfg = RunConfig()
    return with_overrides(cfg, command=args.command)


def main(argv=None):
    parser = argparse.ArgumentParser(description="Surface Navier-Stokes and thin-film toolkit")
    subparsers = parser.add_subparsers(dest="command", help="Command to run", required=True)

    for name, description in COMMANDS.items():
        sub = subparsers.add_parser(name, help=description)
        source = sub.add_mutually_exclusive_group()
        source.add_argument("--config", help="Configuration file (.yaml, .json or key=value text)")
        source.add_argument("--preset", help="Shipped preset name (see configs/)")
        sub.add_argument("--out", help="Output directory (overrides the config)")
        sub.add_argument("--seed", type=lambda s: int(s, 0), help="Random seed, unsigned 64-bit (overrides the config)")
        sub.add_argument("--log-dir", help="Also write per-component log files to this directory")
        sub.add_argument("--verbose", action="store_true", help="Log run milestones to the console")

    args = parser.parse_args(argv)
    cap_threads()

    import logging

    from core.errors import SurfNSError
    from core.runner import run
    from utils.dependency_check import ensure_dependencies
    from utils.logging_util import configure_log_dir, set_console_level

    ensure_dependencies()
    if args.log_dir:
        configure_log_dir(args.log_dir)
    if args.verbose:
        set_console_level(logging.INFO)

    try:
        cfg = load(args)
    except SurfNSError as e:
        for violation in getattr(e, "violations", [str(e)]):
            print(f"configuration error: {violation}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"cannot read configuration: {e}", file=sys.stderr)
        return 1

    status = run(cfg, out=args.out, seed=args.seed)
    if status == 0:
        print(f"{cfg.command} finished; outputs in {args.out or cfg.out}")
    return status


if __name__ == "__main__":
    sys.exit(main())
