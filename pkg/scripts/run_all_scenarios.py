#!/usr/bin/env python3
"""Run every scenario preset with default parameters into out/<name>/."""

import argparse
import sys
import time
from pathlib import Path

from sawsps.scenarios import ScenarioConfig, list_scenarios, run_scenario


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="out", help="base output directory")
    parser.add_argument("--seed", type=int, default=12345)
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args()

    base = Path(args.out)
    for name, description in list_scenarios():
        cfg = ScenarioConfig.preset(name, master_seed=args.seed)
        t0 = time.perf_counter()
        manifest = run_scenario(cfg, base / name, force=True,
                                threads=args.threads)
        print(f"{name:20s} {len(manifest['files']):3d} files "
              f"{time.perf_counter() - t0:6.1f} s   {description}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
