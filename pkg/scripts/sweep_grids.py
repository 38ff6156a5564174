#!/usr/bin/env python3
"""Reproduce the toy-scale parameter-grid experiments.

Writes four artifact sets into the output directory: the condition-switch
sequence, a constant-window grid (window top x window length), a
schedule-kind grid, and a guidance-scale grid.
"""

import argparse
import sys

from diffpath.cli import main as cli_main


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=None, help="run config (default: bundled demo)")
    parser.add_argument("--output", default="out/grids", help="output directory")
    args = parser.parse_args()

    base = [] if args.config is None else ["--config", args.config]
    for scenario in ("prompt-switch", "window-grid", "schedule-grid", "guidance-grid"):
        print(f"--- {scenario} ---")
        code = cli_main(["demo", *base, "--scenario", scenario,
                         "--output", args.output])
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
