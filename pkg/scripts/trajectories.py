"""Gap-versus-iteration series for the convex, accelerated and nonconvex schemes.

    python3 scripts/trajectories.py [--outdir results]
"""
import argparse
import os
import sys

from smpec.cli import main

SERIES = (
    ("cournot2s_convex", ["--problem", "cournot2s", "--solver", "zsol-convex", "--iters", "10000"]),
    ("cournot2s_acc", ["--problem", "cournot2s", "--solver", "zsol-acc", "--iters", "1000"]),
    ("cournot1s_inexact", ["--problem", "cournot1s", "--solver", "zsol-convex", "--lower", "inexact",
                           "--param", "N=100", "--iters", "1000"]),
    ("bard_nonconvex", ["--problem", "bard", "--solver", "zsol-nonconvex", "--iters", "10000"]),
)

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--outdir", default="results")
    ap.add_argument("--log-every", type=int, default=100)
    a = ap.parse_args()
    os.makedirs(a.outdir, exist_ok=True)
    status = 0
    for label, args in SERIES:
        out = os.path.join(a.outdir, f"trajectory_{label}.csv")
        print(f"[{label}] -> {out}", flush=True)
        status |= main(["trajectory", *args, "--log-every", str(a.log_every), "--out", out])
    sys.exit(status)
