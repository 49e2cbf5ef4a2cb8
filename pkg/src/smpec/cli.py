"""Command-line experiment harness: ``smpec run|trajectory|table|oracle``.

Settings come from an optional TOML file (``--config``) and are overridden by
flags; ``SMPEC_SEED`` overrides ``--seed``.  Every command writes CSV.
Replicate i uses seed ``seed + i`` so results do not depend on ``--jobs``.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import tomli

from .baselines import SaaConfig, confidence_interval, saa_solve
from .geometry import make_rng
from .problems import REGISTRY, grid_oracle, make_problem
from .problems.bard import BARON_OPTIMA
from .zsol import (ResidualConfig, Schedule, residual_norm, run_accelerated, run_convex, run_nonconvex,
                   schedule_eval)

SOLVERS = ("zsol-convex", "zsol-nonconvex", "zsol-acc", "saa")
SCHEDULE_FLAGS = ("gamma0", "eta0", "a", "b", "r", "tau", "rho", "m0", "lam")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentSpec:
    problem: str = "cournot2s"
    params: dict = field(default_factory=dict)
    solver: str = "zsol-convex"
    lower: str = "exact"
    runs: int = 1
    seed: int = 0
    iters: Optional[int] = None
    schedule: dict = field(default_factory=dict)
    saa_samples: int = 1000
    residual_batch: int = 0
    jobs: int = 1
    out: Optional[str] = None

    def validate(self):
        if self.problem not in REGISTRY:
            raise ConfigError(f"unknown problem {self.problem!r}; choose from {sorted(REGISTRY)}")
        if self.solver not in SOLVERS:
            raise ConfigError(f"unknown solver {self.solver!r}; choose from {list(SOLVERS)}")
        if self.lower not in ("exact", "inexact"):
            raise ConfigError("lower must be 'exact' or 'inexact'")
        if self.runs < 1:
            raise ConfigError("runs must be at least 1")
        if self.iters is not None and self.iters < 1:
            raise ConfigError("iters must be at least 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        unknown = set(self.schedule) - set(SCHEDULE_FLAGS)
        if unknown:
            raise ConfigError(f"unknown schedule keys {sorted(unknown)}")
        return self

    def build_schedule(self) -> Schedule:
        K = self.iters or (10_000 if self.solver == "zsol-nonconvex" else 1000)
        if self.solver == "zsol-acc":
            base = Schedule.accelerated(K)
        elif self.solver == "zsol-nonconvex":
            base = Schedule.constant(1e-3, 1e-2, K)
        else:
            base = Schedule(K=K)
        try:
            return replace(base, **self.schedule)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid schedule: {exc}") from exc


# ---------------------------------------------------------------------------- execution
@dataclass
class RunRecord:
    run: int
    seed: int
    x: np.ndarray
    objective: float
    gap: float
    residual: float
    residual_se: float
    counters: dict
    wall_time: float


def execute(spec: ExperimentSpec, run: int) -> RunRecord:
    """One seeded replicate; builds its own problem and generator."""
    seed = spec.seed + run
    rng = make_rng(seed)
    problem = make_problem(spec.problem, **spec.params)
    sched = spec.build_schedule()
    residual = residual_se = float("nan")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if spec.solver == "saa":
            res = saa_solve(problem, SaaConfig(K_samples=spec.saa_samples), rng)
            x, counters, wall = res.x_hat, {"saa_iterations": res.iterations}, res.wall_time
        else:
            if spec.solver == "zsol-convex":
                tr = run_convex(problem, sched, spec.lower, rng, seed=seed)
            elif spec.solver == "zsol-acc":
                tr = run_accelerated(problem, sched, rng, seed=seed)
            else:
                tr = run_nonconvex(problem, sched, spec.lower, rng, seed=seed)
            x, counters, wall = tr.x, tr.counters(), tr.wall_time
            if spec.residual_batch > 1:
                cfg = ResidualConfig(eta=sched.eta0, beta=1.0 / sched.gamma0, mc_batch=spec.residual_batch)
                residual, residual_se = residual_norm(problem, x, cfg, rng)
    obj = problem.objective(x)
    gap = problem.gap(x) if problem.optimum is not None else float("nan")
    return RunRecord(run, seed, np.atleast_1d(x), problem.reported(obj), gap, residual, residual_se, counters, wall)


def _execute_star(args):
    spec, run = args
    try:
        return execute(spec, run)
    except Exception as exc:
        raise RuntimeError(f"run {run} (seed {spec.seed + run}): {type(exc).__name__}: {exc}") from exc


def execute_all(spec: ExperimentSpec) -> list:
    jobs = [(spec, i) for i in range(spec.runs)]
    if spec.jobs == 1 or spec.runs == 1:
        return [_execute_star(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
        return list(pool.map(_execute_star, jobs))


COUNTER_KEYS = ("upper_projections", "upper_samples", "lower_solves", "lower_projections", "lower_samples",
                "saa_iterations")
RUN_COLUMNS = ("run", "seed", "problem", "solver", "x", "objective", "gap", "residual", "residual_stderr",
               *COUNTER_KEYS, "ci_low", "ci_high", "wall_time")


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def run_rows(spec: ExperimentSpec, records: list) -> list:
    rows = []
    for r in records:
        row = dict(run=r.run, seed=r.seed, problem=spec.problem, solver=spec.solver,
                   x=";".join(repr(float(v)) for v in r.x), objective=r.objective, gap=r.gap,
                   residual=r.residual, residual_stderr=r.residual_se, wall_time=r.wall_time)
        row.update({k: r.counters.get(k) for k in COUNTER_KEYS})
        rows.append(row)
    gaps = np.array([r.gap for r in records])
    key, vals = ("gap", gaps) if np.all(np.isfinite(gaps)) else ("objective", np.array([r.objective for r in records]))
    summary = dict(run="summary", problem=spec.problem, solver=spec.solver,
                   wall_time=float(np.mean([r.wall_time for r in records])))
    summary[key] = float(vals.mean())
    if len(vals) >= 2:
        ci = confidence_interval(vals)
        summary["ci_low"], summary["ci_high"] = ci.lower, ci.upper
    rows.append(summary)
    return rows


def write_csv(rows: list, columns, out: Optional[str]):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row.get(c)) for c in columns])
    text = buf.getvalue()
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------- commands
def cmd_run(spec: ExperimentSpec) -> int:
    records = execute_all(spec)
    write_csv(run_rows(spec, records), RUN_COLUMNS, spec.out)
    return 0


def cmd_trajectory(spec: ExperimentSpec, log_every: int) -> int:
    if log_every < 1:
        raise ConfigError("log-every must be at least 1")
    if spec.solver == "saa":
        raise ConfigError("trajectory needs a ZSOL solver")
    problem = make_problem(spec.problem, **spec.params)
    sched = spec.build_schedule()
    rng = make_rng(spec.seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if spec.solver == "zsol-convex":
            marks = list(range(0, sched.K + 1, log_every))
            tr = run_convex(problem, sched, spec.lower, rng, record=True, snapshot_at=marks, seed=spec.seed)
            points = [(0, tr.iterates[0])] + [(k, tr.snapshots[k]) for k in marks if k in tr.snapshots]
            mode = "convex"
        else:
            if spec.solver == "zsol-acc":
                tr = run_accelerated(problem, sched, rng, record=True, seed=spec.seed)
                mode = "accelerated"
            else:
                tr = run_nonconvex(problem, sched, spec.lower, rng, record=True, seed=spec.seed)
                mode = "nonconvex"
            points = [(k, tr.iterates[k]) for k in range(0, len(tr.iterates), log_every)]
    rows = []
    for k, x in points:
        value, se = objective_with_stderr(problem, x)
        ref = problem.optimum.f_star if problem.optimum is not None else float("nan")
        vals = schedule_eval(sched, k, mode)
        rows.append(dict(k=k, gap_estimate=value - ref, stderr=se, eta=vals.eta, gamma=vals.gamma))
    write_csv(rows, ("k", "gap_estimate", "stderr", "eta", "gamma"), spec.out)
    return 0


def objective_with_stderr(problem, x):
    if problem.expected is not None:
        return problem.objective(x), 0.0
    ws = problem.validation_set()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xs = np.broadcast_to(x, (ws.shape[0], x.shape[0]))
    if problem.staging == "two":
        ys = problem.exact_lower(xs, ws)
    else:
        ys = np.broadcast_to(problem.exact_lower(x[None], None), (ws.shape[0], problem.dim_y))
    vals = problem.upper(xs, ys, ws)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size))


def cmd_oracle(spec: ExperimentSpec) -> int:
    problem = make_problem(spec.problem, **spec.params)
    rows = []
    if problem.optimum is not None:
        o = problem.optimum
        rows.append(dict(source=o.provenance, x="" if o.x_star is None else ";".join(repr(float(v)) for v in o.x_star),
                         objective=problem.reported(o.f_star), stderr=o.stderr))
    if problem.dim_x <= 2:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            g = grid_oracle(problem, resolution=21, mc_samples=200, refine=3, seed=spec.seed)
        rows.append(dict(source=g.provenance, x=";".join(repr(float(v)) for v in g.x_star),
                         objective=problem.reported(g.f_star), stderr=g.stderr))
    if not rows:
        raise ConfigError(f"no oracle available for {spec.problem}")
    write_csv(rows, ("source", "x", "objective", "stderr"), spec.out)
    return 0


TABLES = ("time", "time2", "time3", "p0", "ci")


def table_plan(name: str, scale: str) -> list:
    """(label, problem, params, solver, lower, runs, iters) rows of a table."""
    desk = scale == "desk"
    plan = []
    if name in ("time", "ci"):
        Ns = ((10, 1000) if name == "time" else (1000,)) if desk else ((10, 20, 100, 1000, 10_000) if name == "time"
                                                                        else (10_000,))
        solvers = ("zsol-convex", "zsol-acc") + (("saa",) if name == "time" else ())
        for N in Ns:
            for b in (1.0, 0.5):
                for c in (0.05, 0.1):
                    for s in solvers:
                        if s == "saa" and N > 20:
                            continue
                        plan.append((f"N={N} b={b} c={c}", "cournot2s", dict(N=N, b=b, c=c), s, "exact", 20, 1000))
    elif name == "time2":
        for N in ((100, 1000) if desk else (100, 1000, 10_000, 100_000)):
            for b in (0.01, 0.02):
                for c in (3.0, 5.0):
                    plan.append((f"N={N} b={b} c={c}", "cournot1s", dict(N=N, b=b, c=c), "zsol-convex", "inexact",
                                 5 if desk else 20, 1000))
                    if N <= 10_000:
                        plan.append((f"N={N} b={b} c={c}", "cournot1s", dict(N=N, b=b, c=c), "saa", "exact",
                                     5 if desk else 20, 1000))
    elif name == "time3":
        for (a, bb, c, d) in BARON_OPTIMA:
            plan.append((f"a={a} b={bb} c={c} d={d}", "bard", dict(a_coef=a, b_coef=bb, c_coef=c, d_coef=d),
                         "zsol-nonconvex", "exact", 3 if desk else 20, 10_000))
    elif name == "p0":
        for g in (1.0, 1.1, 1.3):
            plan.append((f"p1 gamma={g}", "p1", dict(gamma=g), "zsol-nonconvex", "exact", 1, 1000 if desk else 10_000))
        for p in ("p2", "p3", "p4"):
            plan.append((p, p, {}, "zsol-nonconvex", "exact", 1, 10_000))
        for v in (1, 2, 3):
            plan.append((f"p5 variant={v}", "p5", dict(variant=v), "zsol-nonconvex", "exact", 1, 300 if desk else 1000))
    else:
        raise ConfigError(f"unknown table {name!r}; choose from {list(TABLES)}")
    return plan


def cmd_table(spec: ExperimentSpec, name: str, scale: str) -> int:
    if scale not in ("full", "desk"):
        raise ConfigError("scale must be 'full' or 'desk'")
    rows = []
    for label, prob, params, solver, lower, runs, iters in table_plan(name, scale):
        sub = replace(spec, problem=prob, params=params, solver=solver, lower=lower, runs=runs,
                      iters=spec.iters or iters, schedule=dict(spec.schedule)).validate()
        recs = execute_all(sub)
        gaps = np.array([r.gap for r in recs])
        objs = np.array([r.objective for r in recs])
        row = dict(row=label, solver=solver, runs=runs, objective=float(objs.mean()),
                   gap=float(gaps.mean()), time=float(np.mean([r.wall_time for r in recs])))
        if runs >= 2 and np.all(np.isfinite(gaps)):
            ci = confidence_interval(gaps)
            row["ci_low"], row["ci_high"] = ci.lower, ci.upper
        rows.append(row)
    cols = ("row", "solver", "runs", "objective", "gap", "ci_low", "ci_high", "time")
    out = spec.out or f"table_{name}_{scale}.csv"
    write_csv(rows, cols, out)
    with open(os.path.splitext(out)[0] + ".txt", "w", encoding="utf-8") as fh:
        fh.write(render_text(rows, cols))
    return 0


def render_text(rows: list, cols) -> str:
    cells = [[c for c in cols]] + [[_short(r.get(c)) for c in cols] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(cols))]
    return "\n".join("  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells) + "\n"


def _short(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "--"
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


# ---------------------------------------------------------------------------- parsing
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file; flags override its values")
    common.add_argument("--problem")
    common.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                        help="problem constructor argument (repeatable)")
    common.add_argument("--solver", choices=SOLVERS)
    common.add_argument("--lower", choices=("exact", "inexact"))
    common.add_argument("--runs", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--iters", type=int)
    for name in SCHEDULE_FLAGS:
        flag = "--lambda" if name == "lam" else f"--{name.replace('_', '-')}"
        common.add_argument(flag, dest=name, type=float)
    common.add_argument("--saa-samples", type=int)
    common.add_argument("--residual-batch", type=int)
    common.add_argument("--jobs", type=int)
    common.add_argument("--out")

    parser = argparse.ArgumentParser(prog="smpec", description="Zeroth-order schemes for stochastic MPECs.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="seeded replicate runs to CSV")
    traj = sub.add_parser("trajectory", parents=[common], help="gap versus iteration for one run")
    traj.add_argument("--log-every", type=int, default=10)
    tab = sub.add_parser("table", parents=[common], help="regenerate an experiment table")
    tab.add_argument("name", choices=TABLES)
    tab.add_argument("--scale", choices=("full", "desk"), default="desk")
    sub.add_parser("oracle", parents=[common], help="reference optimum of a problem")
    return parser


def _coerce(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return {"true": True, "false": False}.get(text.lower(), text)


def spec_from_args(args) -> ExperimentSpec:
    data = {}
    if args.config:
        try:
            with open(args.config, "rb") as fh:
                data = tomli.load(fh)
        except (OSError, tomli.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    exp = dict(data.get("experiment", {}))
    schedule = dict(data.get("schedule", {}))
    params = dict(data.get("problem", {}))
    for item in args.param:
        if "=" not in item:
            raise ConfigError(f"--param expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        params[k.strip()] = _coerce(v.strip())
    for key in ("problem", "solver", "lower", "runs", "seed", "iters", "saa_samples", "residual_batch", "jobs", "out"):
        val = getattr(args, key, None)
        if val is not None:
            exp[key] = val
    for key in SCHEDULE_FLAGS:
        val = getattr(args, key, None)
        if val is not None:
            schedule[key] = val
    env_seed = os.environ.get("SMPEC_SEED")
    if env_seed is not None:
        try:
            exp["seed"] = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"SMPEC_SEED must be an integer, got {env_seed!r}") from exc
    known = {f for f in ExperimentSpec.__dataclass_fields__}
    unknown = set(exp) - known
    if unknown:
        raise ConfigError(f"unknown experiment keys {sorted(unknown)}")
    try:
        spec = ExperimentSpec(**exp, schedule=schedule, params=params)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    if spec.problem in REGISTRY:
        try:
            make_problem(spec.problem, **spec.params)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid parameters for {spec.problem}: {exc}") from exc
    spec.validate()
    spec.build_schedule()
    return spec


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        spec = spec_from_args(args)
        if args.command == "run":
            return cmd_run(spec)
        if args.command == "trajectory":
            return cmd_trajectory(spec, args.log_every)
        if args.command == "table":
            return cmd_table(spec, args.name, args.scale)
        return cmd_oracle(spec)
    except ConfigError as exc:
        print(f"smpec: configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # solver failures carry run context from execute()
        print(f"smpec: solver failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
