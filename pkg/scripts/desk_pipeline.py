"""Run the full desk-scale pipeline into a directory and print stage timings."""

from __future__ import annotations

import argparse
import sys

from molmech.cli.pipeline import StageFailed, run_pipeline


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out-dir", default="desk_run")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    args = p.parse_args()
    try:
        result = run_pipeline(args.out_dir, seed=args.seed, threads=args.threads)
    except StageFailed as e:
        print(f"pipeline failed: {e}", file=sys.stderr)
        return 1
    for s in result["stages"]:
        print(f"{s['seconds']:8.1f}s  {s['command']} {' '.join(s['args'])}")
    print(f"{result['total_seconds']:8.1f}s  total")
    return 0


if __name__ == "__main__":
    sys.exit(main())
