"""Benchmark problems and a string registry for the CLI."""
from __future__ import annotations

from .appendix import hd_oligopoly, hd_projection, problem1, problem2, problem3, problem4, problem5
from .bard import BARON_OPTIMA, bard_bilevel
from .base import AnalyticOptimum, InexactSettings, SmpecProblem, grid_oracle
from .cournot import cournot_single_stage, cournot_two_stage

REGISTRY = {
    "cournot2s": cournot_two_stage,
    "cournot1s": cournot_single_stage,
    "bard": bard_bilevel,
    "p1": problem1,
    "p2": problem2,
    "p3": problem3,
    "p4": problem4,
    "p5": problem5,
    "hd1": hd_oligopoly,
    "hd2": hd_projection,
}


def make_problem(name: str, **kwargs) -> SmpecProblem:
    """Build a registered problem; keyword arguments go to its constructor."""
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; choose from {sorted(REGISTRY)}") from None
    return factory(**kwargs)


def appendix_problems() -> list:
    """The deterministic literature instances with their published optima."""
    out = [problem1(g) for g in (1.0, 1.1, 1.3)]
    out += [problem2(), problem3(), problem4()]
    out += [problem5(v) for v in (1, 2, 3)]
    return out


__all__ = [
    "AnalyticOptimum", "BARON_OPTIMA", "InexactSettings", "REGISTRY", "SmpecProblem", "appendix_problems",
    "bard_bilevel", "cournot_single_stage", "cournot_two_stage", "grid_oracle", "hd_oligopoly", "hd_projection",
    "make_problem", "problem1", "problem2", "problem3", "problem4", "problem5",
]
