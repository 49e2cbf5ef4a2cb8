"""Evaluate the literature instances at their published solutions and locate
the minimizers of the high-dimensional counterparts on a grid.

    python3 scripts/literature_check.py
"""
import numpy as np
from scipy.optimize import minimize_scalar

from smpec.problems import appendix_problems, hd_oligopoly, hd_projection

if __name__ == "__main__":
    print("instance               x_published        f(x_published)   f_published")
    for p in appendix_problems():
        x = p.optimum.x_star
        label = p.name + (f" {p.params}" if p.name in ("p5",) else "")
        print(f"{label:22s} {np.array2string(x, precision=3):18s} {p.reported(p.objective(x)):14.4f}"
              f"   {p.reported(p.optimum.f_star):10.2f}")
    for n in (5, 10):
        p = hd_oligopoly(n=n)
        r = minimize_scalar(lambda z: p.objective(np.array([z])), bounds=(1.0, 149.0), method="bounded")
        print(f"hd1 n={n:3d}: minimizer x={r.x:.3f}, E f = {r.fun:.3f} (validation-sample mean)")
    for n in (2, 10):
        p = hd_projection(n=n)
        r = minimize_scalar(lambda t: p.objective(np.full(n, t)), bounds=(0.0, 2.0), method="bounded")
        print(f"hd2 n={n:3d}: best symmetric x={r.x:.3f}*1, E f = {r.fun:.4f} (nonnegative as printed)")
