#!/usr/bin/env python3
import argparse
import os
import sys
import tempfile

# Add the parent directory to sys.path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from utils.dependency_check import ensure_dependencies


def check_determinism(cfg, keep_dir=None):
    """Run cfg twice into separate directories and compare the outputs byte for byte."""
    from core.run_storage import compare_runs
    from core.runner import run

    root = keep_dir or tempfile.mkdtemp(prefix="surfns_determinism_")
    dir_a, dir_b = os.path.join(root, "a"), os.path.join(root, "b")
    for out in (dir_a, dir_b):
        status = run(cfg, out=out)
        if status != 0:
            print(f"run into {out} failed with exit status {status}")
            return status

    results = compare_runs(dir_a, dir_b)
    print(f"\nCompared {len(results['files'])} files in {root}")
    if results["identical"]:
        print("Outputs are byte-identical.")
        return 0
    print("Outputs differ:")
    for difference in results["differences"]:
        print(f"  - {difference}")
    return 4


def main():
    ensure_dependencies()

    parser = argparse.ArgumentParser(description="Check that a run is reproducible")
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--config", help="Configuration file")
    source.add_argument("--preset", help="Preset name")
    parser.add_argument("--keep", help="Directory for the two runs (default: a temporary directory)")
    args = parser.parse_args()

    from core.config import load_config, load_preset

    cfg = load_preset(args.preset) if args.preset else load_config(args.config)
    return check_determinism(cfg, args.keep)


if __name__ == "__main__":
    sys.exit(main())
