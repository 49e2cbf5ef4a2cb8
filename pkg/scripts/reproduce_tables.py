"""Regenerate every experiment table as CSV plus aligned text.

    python3 scripts/reproduce_tables.py [--scale desk|full] [--outdir results] [--jobs 1]
"""
import argparse
import os
import sys

from smpec.cli import TABLES, main


def run(scale: str, outdir: str, jobs: int) -> int:
    os.makedirs(outdir, exist_ok=True)
    status = 0
    for name in TABLES:
        out = os.path.join(outdir, f"table_{name}_{scale}.csv")
        print(f"[{name}] -> {out}", flush=True)
        status |= main(["table", name, "--scale", scale, "--jobs", str(jobs), "--out", out])
    return status


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", choices=("desk", "full"), default="desk")
    ap.add_argument("--outdir", default="results")
    ap.add_argument("--jobs", type=int, default=1)
    a = ap.parse_args()
    sys.exit(run(a.scale, a.outdir, a.jobs))
