#!/usr/bin/env python3
import argparse
import os
import sys
import time

# Add the parent directory to sys.path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from utils.dependency_check import ensure_dependencies


def run_presets(names, out_root, seed=None):
    """Run each named preset into out_root/<name> and print a status table."""
    from core.config import load_preset
    from core.runner import run

    results = []
    for name in names:
        print(f"\n=== {name} ===")
        start = time.time()
        try:
            cfg = load_preset(name)
        except Exception as e:
            print(f"  cannot load preset: {e}")
            results.append((name, 1, 0.0))
            continue
        status = run(cfg, out=os.path.join(out_root, name), seed=seed)
        elapsed = time.time() - start
        print(f"  exit status {status} after {elapsed:.1f}s")
        results.append((name, status, elapsed))

    print("\n=== Summary ===")
    for name, status, elapsed in results:
        print(f"  {name:<22} {'ok' if status == 0 else f'failed ({status})':<12} {elapsed:8.1f}s")
    return max((status for _, status, _ in results), default=0)


def main():
    ensure_dependencies()

    from core.config import PRESETS

    parser = argparse.ArgumentParser(description="Run the shipped presets")
    parser.add_argument("presets", nargs="*", default=list(PRESETS), help="Preset names (default: all)")
    parser.add_argument("--out", default="results", help="Root output directory (default: results)")
    parser.add_argument("--seed", type=lambda s: int(s, 0), help="Seed override for every preset")
    args = parser.parse_args()

    return run_presets(args.presets, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
