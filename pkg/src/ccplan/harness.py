"""Experiment pipelines and violation metrics.

Each run plans against one noisy realization of the target's positions and
is scored against the target's mean trajectory: the margin at node ``i`` is
``d_min - K_i`` with ``K_i = |x_tgt - x + y_tgt - y|``, and a node violates
when its margin is positive.

Runs are grouped in *tasks*: one scenario plus one realization, solved by
every model under comparison, so paired models always consume identical
scenario and noise seeds.  Tasks run on a process pool; the seed of task
``k`` is ``seed_base + k`` and results are folded in task order, so output
does not depend on scheduling.
"""

from collections import Counter
from concurrent.futures import ProcessPoolExecutor
import csv
from dataclasses import dataclass, field
import json
import logging
import math
import os
import time

import numpy as np

from . import scenario as scn
from .errors import PlannerError, ShapeError
from .solve import SolveOptions, initial_guess, solve
from .transcribe import TimeGrid, build_continuous_nlp, build_discrete_nlp

log = logging.getLogger(__name__)

RUNS_HEADER = (
    "run_id", "model", "scenario_seed", "noise_seed", "status", "violations", "valid_proportion",
    "avg_speed", "avg_accel", "avg_ang_vel", "avg_gap", "wall_time_s",
)  # fmt: skip
MARGINS_HEADER = ("run_id", "node_index", "t", "margin_m")
CELLS_HEADER = ("v_r", "omega_max", "model", "n", "converged")
SWEEP_HEADER = ("ratio", "T", "n", "mean_wall_time_s", "mean_accel", "mean_ang_vel", "mean_speed", "mean_gap")

STATUS_ERROR = "Error"

DEFAULT_RATIOS = (
    (5, 1, 1, 1, 1, 1, 1),
    (1, 5, 1, 1, 1, 1, 1),
    (1, 1, 5, 1, 1, 1, 1),
    (1, 1, 1, 5, 1, 1, 1),
    (1, 1, 1, 1, 5, 1, 1),
    (1, 1, 1, 1, 1, 5, 1),
    (1, 1, 1, 1, 1, 1, 5),
    (1, 1, 1, 1, 1, 1, 1),
)
DEFAULT_HORIZONS = (50.0, 200.0, 400.0)


@dataclass(frozen=True, eq=False)
class ViolationReport:
    margins: np.ndarray
    violation_count: int
    valid_proportion: float
    avg_speed: float
    avg_accel_mag: float
    avg_ang_vel_mag: float
    avg_gap: float
    wall_time: float = 0.0


def count_violations(traj, target_xy, d_min, wall_time=0.0):
    """Score a trajectory against per-node target positions.

    ``avg_gap`` is the mean Euclidean ego-target distance; the margins use
    the signed-sum separation ``K``.
    """
    target_xy = np.asarray(target_xy, dtype=float)
    m = traj.grid.nodes_M
    if target_xy.shape != (m, 2):
        raise ShapeError(f"target positions have shape {target_xy.shape}, trajectory has {m} nodes")
    x, y, v = traj.states[:, 0], traj.states[:, 1], traj.states[:, 3]
    a, om = traj.controls[:, 0], traj.controls[:, 1]
    dx, dy = target_xy[:, 0] - x, target_xy[:, 1] - y
    margins = d_min - np.abs(dx + dy)
    count = int(np.count_nonzero(margins > 0.0))
    return ViolationReport(
        margins=margins,
        violation_count=count,
        valid_proportion=1.0 - count / m,
        avg_speed=float(np.mean(v)),
        avg_accel_mag=float(np.mean(np.abs(a))),
        avg_ang_vel_mag=float(np.mean(np.abs(om))),
        avg_gap=float(np.mean(np.hypot(dx, dy))),
        wall_time=float(wall_time),
    )


def refined_margins(traj, target, d_min, factor=10):
    """Margins on a grid ``factor`` times finer, positions interpolated linearly.

    A diagnostic only: the counted violations use the solver grid.
    """
    t = traj.grid.times
    tf = np.linspace(t[0], t[-1], (t.size - 1) * factor + 1)
    x = np.interp(tf, t, traj.states[:, 0])
    y = np.interp(tf, t, traj.states[:, 1])
    mx, my = target.mean_at(tf)
    return tf, d_min - np.abs(mx - x + my - y)


@dataclass(eq=False)
class RunRecord:
    run_id: int
    model: str
    scenario_seed: int
    noise_seed: int
    status: str
    violations: float
    valid_proportion: float
    avg_speed: float
    avg_accel: float
    avg_ang_vel: float
    avg_gap: float
    wall_time_s: float
    times: np.ndarray = field(default=None, repr=False)
    margins: np.ndarray = field(default=None, repr=False)

    @property
    def ok(self):
        return self.status != STATUS_ERROR

    @property
    def converged(self):
        return self.status == "Converged"


@dataclass(eq=False)
class ExperimentSummary:
    """Per-run records of one experiment, with derived aggregates."""

    name: str
    runs: list
    cells: list = field(default_factory=list)
    table: list = field(default_factory=list)
    params: dict = field(default_factory=dict)

    def models(self):
        return sorted({r.model for r in self.runs})

    def select(self, model):
        return [r for r in self.runs if r.model == model]

    def histogram(self, model):
        """Violation-count histogram; failed builds are keyed ``None``."""
        return dict(sorted(Counter(None if not r.ok else int(r.violations) for r in self.select(model)).items(),
                           key=lambda kv: (kv[0] is None, kv[0])))  # fmt: skip

    def mean_violations(self, model):
        vals = [r.violations for r in self.select(model) if r.ok]
        return float(np.mean(vals)) if vals else math.nan

    def fraction_with_at_most(self, model, k):
        runs = self.select(model)
        if not runs:
            return math.nan
        return sum(1 for r in runs if r.ok and r.violations <= k) / len(runs)

    def aggregates(self):
        out = {}
        for model in self.models():
            runs = self.select(model)
            ok = [r for r in runs if r.ok]
            out[model] = {
                "runs": len(runs),
                "converged": sum(r.converged for r in runs),
                "failed_builds": len(runs) - len(ok),
                "mean_violations": self.mean_violations(model),
                "zero_violation_fraction": self.fraction_with_at_most(model, 0),
                "at_most_one_fraction": self.fraction_with_at_most(model, 1),
                "mean_valid_proportion": float(np.mean([r.valid_proportion for r in ok])) if ok else math.nan,
                "mean_wall_time_s": float(np.mean([r.wall_time_s for r in ok])) if ok else math.nan,
                "histogram": {("error" if k is None else str(k)): v for k, v in self.histogram(model).items()},
            }
        return out


# -- run tasks --------------------------------------------------------------------


@dataclass(frozen=True)
class _Task:
    task_id: int
    family: str
    scenario_seed: int
    noise_seed: int
    models: tuple
    horizon_T: float
    nodes_M: int
    opts: SolveOptions
    family_args: tuple = ()
    sigma: float | None = None
    chance_mode: str | None = None
    alpha: float | None = None
    weights: tuple | None = None


def _make_scenario(task):
    if task.family == "risky":
        sc = scn.make_risky_scenario(task.scenario_seed, task.horizon_T)
    elif task.family == "urban":
        sc = scn.make_urban_scenario(task.scenario_seed, task.horizon_T)
    elif task.family == "mixed":
        sc = scn.make_mixed_scenario(task.scenario_seed, task.horizon_T)
    elif task.family == "highspeed":
        v_r, omega_max = task.family_args
        sc = scn.make_highspeed_scenario(v_r, omega_max, task.scenario_seed, task.horizon_T)
    elif task.family == "nominal":
        sc = scn.make_nominal_scenario(task.horizon_T)
    else:
        raise ValueError(f"unknown scenario family {task.family!r}")
    if task.sigma is not None:
        sc = sc.with_sigma(task.sigma)
    if task.chance_mode is not None or task.alpha is not None:
        changes = {}
        if task.chance_mode is not None:
            changes["mode"] = task.chance_mode
        if task.alpha is not None:
            changes["alpha"] = task.alpha
        sc = sc.with_chance(**changes)
    return sc


def solve_model(sc, grid, model, realization=None, opts=None):
    """Build and solve one model (e.g. ``"continuous-stochastic"``)."""
    kind, _, flavor = model.partition("-")
    if flavor not in ("stochastic", "deterministic"):
        raise ValueError(f"unknown model {model!r}")
    stochastic = flavor == "stochastic"
    if kind == "continuous":
        nlp = build_continuous_nlp(sc, grid, stochastic=stochastic, measurements=realization)
    elif kind == "discrete":
        nlp = build_discrete_nlp(sc, grid.nodes_M, grid.h, stochastic=stochastic, measurements=realization)
    else:
        raise ValueError(f"unknown model {model!r}")
    return solve(nlp, initial_guess(sc, grid), opts)


def _run_task(task):
    grid = TimeGrid(task.horizon_T, task.nodes_M)
    sc = _make_scenario(task)
    if task.weights is not None:
        sc = sc.with_weights(scn.Weights.from_ratio(task.weights))
    real = scn.realize_measurements(sc, grid, task.noise_seed)
    mx, my = sc.target.mean_at(grid.times)
    truth = np.column_stack((mx, my))
    records = []
    for j, model in enumerate(task.models):
        run_id = task.task_id * len(task.models) + j
        t0 = time.perf_counter()
        try:
            rep = solve_model(sc, grid, model, real, task.opts)
        except PlannerError as exc:
            log.info("run %d (%s) failed to build: %s", run_id, model, exc)
            nan = math.nan
            records.append(RunRecord(run_id, model, task.scenario_seed, task.noise_seed, STATUS_ERROR,
                                     nan, nan, nan, nan, nan, nan, time.perf_counter() - t0,
                                     grid.times, np.full(grid.nodes_M, nan)))  # fmt: skip
            continue
        vr = count_violations(rep.trajectory, truth, sc.limits.d_min, rep.wall_time)
        records.append(
            RunRecord(
                run_id, model, task.scenario_seed, task.noise_seed, rep.status.value,
                vr.violation_count, vr.valid_proportion, vr.avg_speed, vr.avg_accel_mag,
                vr.avg_ang_vel_mag, vr.avg_gap, rep.wall_time, grid.times, vr.margins,
            )
        )  # fmt: skip
    return records


def _map_tasks(tasks, parallel):
    if parallel <= 1 or len(tasks) <= 1:
        results = [_run_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_run_task, tasks))
    runs = [r for group in results for r in group]
    runs.sort(key=lambda r: r.run_id)
    return runs


def _default_grid(grid):
    return TimeGrid(scn.URBAN_T, 60) if grid is None else grid


STOCHASTIC_PAIR = ("continuous-stochastic", "discrete-stochastic")
DETERMINISTIC_PAIR = ("continuous-deterministic", "discrete-deterministic")


def run_experiment1(n_realizations, grid=None, seed_base=0, parallel=1, scenario_seed=0, opts=None, sigma=None):
    """Many noise realizations of one risky scenario, both stochastic models."""
    if n_realizations < 1:
        raise ValueError("n_realizations must be >= 1")
    grid = _default_grid(grid)
    opts = SolveOptions() if opts is None else opts
    tasks = [
        _Task(k, "risky", scenario_seed, seed_base + k, STOCHASTIC_PAIR, grid.horizon_T, grid.nodes_M, opts, sigma=sigma)
        for k in range(n_realizations)
    ]
    params = {"n": n_realizations, "seed_base": seed_base, "scenario_seed": scenario_seed, "T": grid.horizon_T, "M": grid.nodes_M}
    return ExperimentSummary("exp1", _map_tasks(tasks, parallel), params=params)


def run_experiment2(n_scenarios, grid=None, seed_base=0, parallel=1, opts=None, sigma=None):
    """One realization of each of ``n_scenarios`` urban scenarios, both stochastic models."""
    if n_scenarios < 1:
        raise ValueError("n_scenarios must be >= 1")
    grid = _default_grid(grid)
    opts = SolveOptions() if opts is None else opts
    tasks = [
        _Task(k, "urban", seed_base + k, seed_base + k, STOCHASTIC_PAIR, grid.horizon_T, grid.nodes_M, opts, sigma=sigma)
        for k in range(n_scenarios)
    ]
    params = {"n": n_scenarios, "seed_base": seed_base, "T": grid.horizon_T, "M": grid.nodes_M}
    return ExperimentSummary("exp2", _map_tasks(tasks, parallel), params=params)


def run_deterministic_study(n_scenarios, grid=None, seed_base=0, parallel=1, opts=None, sigma=None,
                            include_stochastic=True, family="mixed"):  # fmt: skip
    """Deterministic models (and, paired, the stochastic ones) on mixed-risk scenarios."""
    if n_scenarios < 1:
        raise ValueError("n_scenarios must be >= 1")
    grid = _default_grid(grid)
    opts = SolveOptions() if opts is None else opts
    models = DETERMINISTIC_PAIR + (STOCHASTIC_PAIR if include_stochastic else ())
    tasks = [
        _Task(k, family, seed_base + k, seed_base + k, models, grid.horizon_T, grid.nodes_M, opts, sigma=sigma)
        for k in range(n_scenarios)
    ]
    params = {"n": n_scenarios, "seed_base": seed_base, "T": grid.horizon_T, "M": grid.nodes_M, "family": family}
    return ExperimentSummary("det-study", _map_tasks(tasks, parallel), params=params)


def run_weight_sweep(ratios=DEFAULT_RATIOS, horizons=DEFAULT_HORIZONS, n_scenarios=10, seed_base=0,
                     parallel=1, opts=None, step=1.0, model="continuous-stochastic"):  # fmt: skip
    """Mean wall time, |a|, |omega|, speed and gap per (weight ratio, horizon)."""
    ratios = [tuple(float(w) for w in r) for r in ratios]
    if not ratios:
        raise ValueError("ratios must be nonempty")
    opts = SolveOptions() if opts is None else opts
    tasks, keys = [], []
    for ratio in ratios:
        for T in horizons:
            grid = TimeGrid.with_step(float(T), step)
            for k in range(n_scenarios):
                tasks.append(_Task(len(tasks), "urban", seed_base + k, seed_base + k, (model,), grid.horizon_T,
                                   grid.nodes_M, opts, weights=ratio))  # fmt: skip
                keys.append((ratio, float(T)))
    runs = _map_tasks(tasks, parallel)
    table = []
    for ratio in ratios:
        for T in horizons:
            sel = [r for r, key in zip(runs, keys) if key == (ratio, float(T)) and r.ok]
            row = {"ratio": ":".join(f"{w:g}" for w in ratio), "T": float(T), "n": len(sel)}
            for col, attr in (("mean_wall_time_s", "wall_time_s"), ("mean_accel", "avg_accel"),
                              ("mean_ang_vel", "avg_ang_vel"), ("mean_speed", "avg_speed"), ("mean_gap", "avg_gap")):  # fmt: skip
                row[col] = float(np.mean([getattr(r, attr) for r in sel])) if sel else math.nan
            table.append(row)
    params = {"n": n_scenarios, "seed_base": seed_base, "horizons": list(map(float, horizons)), "step": step}
    return ExperimentSummary("sweep", runs, table=table, params=params)


def run_feasibility_study(n_per_cell, seed_base=0, parallel=1, opts=None, horizon_T=scn.HIGHSPEED_T, step=1.0):
    """Converged counts per (v_r, omega_max, model) over high-speed scenarios."""
    if n_per_cell < 0:
        raise ValueError("n_per_cell must be >= 0")
    opts = SolveOptions() if opts is None else opts
    grid = TimeGrid.with_step(horizon_T, step)
    cells_def = [(v, om) for v in scn.HIGHSPEED_V_R for om in scn.HIGHSPEED_OMEGA]
    tasks = []
    for v_r, om in cells_def:
        for k in range(n_per_cell):
            tasks.append(_Task(len(tasks), "highspeed", seed_base + k, seed_base + k, STOCHASTIC_PAIR,
                               grid.horizon_T, grid.nodes_M, opts, family_args=(v_r, om)))  # fmt: skip
    runs = _map_tasks(tasks, parallel)
    cells = []
    if n_per_cell:
        per_task = len(STOCHASTIC_PAIR)
        for c, (v_r, om) in enumerate(cells_def):
            lo = c * n_per_cell * per_task
            chunk = runs[lo : lo + n_per_cell * per_task]
            for model in STOCHASTIC_PAIR:
                sel = [r for r in chunk if r.model == model]
                cells.append({"v_r": v_r, "omega_max": om, "model": model, "n": len(sel),
                              "converged": sum(r.converged for r in sel)})  # fmt: skip
    params = {"n": n_per_cell, "seed_base": seed_base, "T": grid.horizon_T, "M": grid.nodes_M}
    return ExperimentSummary("feasibility", runs, cells=cells, params=params)


@dataclass(frozen=True)
class AlphaResult:
    threshold: float
    model: str
    n_runs: int
    fraction_meeting: float
    mean_proportion: float
    min_proportion: float
    flags: tuple


def alpha_validation(summary, alpha, model="continuous-stochastic", converged_only=False):
    """Share of runs whose valid proportion reaches ``alpha``, and the mean proportion."""
    runs = [r for r in summary.select(model) if r.ok and (r.converged or not converged_only)]
    if not runs:
        raise ValueError(f"no usable {model} runs in summary {summary.name!r}")
    props = np.array([r.valid_proportion for r in runs])
    flags = tuple(bool(p >= alpha) for p in props)
    return AlphaResult(float(alpha), model, len(runs), float(np.mean(flags)), float(props.mean()),
                       float(props.min()), flags)  # fmt: skip


# -- CSV / JSON -----------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return ""
        if v.is_integer() and abs(v) < 2**53:
            return str(int(v))
        return repr(v)
    return str(v)


def _parse(v):
    if v == "":
        return math.nan
    try:
        return int(v)
    except ValueError:
        return float(v)


def write_runs_csv(path, summary, timing=True):
    """``timing=False`` leaves wall times blank so output is reproducible byte for byte."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUNS_HEADER)
        for r in summary.runs:
            row = [getattr(r, k) for k in RUNS_HEADER]
            if not timing:
                row[-1] = math.nan
            w.writerow([_fmt(v) for v in row])


def write_margins_csv(path, summary):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MARGINS_HEADER)
        for r in summary.runs:
            for i, (t, mg) in enumerate(zip(r.times, r.margins)):
                w.writerow([_fmt(r.run_id), _fmt(i), _fmt(float(t)), _fmt(float(mg))])


def write_cells_csv(path, summary):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CELLS_HEADER)
        for c in summary.cells:
            w.writerow([_fmt(c[k]) for k in CELLS_HEADER])


def write_sweep_csv(path, summary):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for row in summary.table:
            w.writerow([_fmt(row[k]) for k in SWEEP_HEADER])


def read_runs_csv(path, margins_path=None):
    """Read ``runs.csv`` (and optionally ``margins.csv``) back into run records."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    per_run = {}
    if margins_path is not None:
        with open(margins_path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                per_run.setdefault(int(row["run_id"]), []).append((float(_parse(row["t"])), float(_parse(row["margin_m"]))))
    runs = []
    for row in rows:
        rid = int(row["run_id"])
        vals = {k: _parse(row[k]) for k in RUNS_HEADER if k not in ("model", "status")}
        tm = per_run.get(rid)
        times = np.array([p[0] for p in tm]) if tm else None
        margins = np.array([p[1] for p in tm]) if tm else None
        runs.append(
            RunRecord(
                rid, row["model"], int(vals["scenario_seed"]), int(vals["noise_seed"]), row["status"],
                vals["violations"], float(vals["valid_proportion"]), float(vals["avg_speed"]),
                float(vals["avg_accel"]), float(vals["avg_ang_vel"]), float(vals["avg_gap"]),
                float(vals["wall_time_s"]), times, margins,
            )
        )  # fmt: skip
    return runs


def read_cells_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            {"v_r": float(r["v_r"]), "omega_max": float(r["omega_max"]), "model": r["model"],
             "n": int(r["n"]), "converged": int(r["converged"])}  # fmt: skip
            for r in csv.DictReader(fh)
        ]


def write_summary(out_dir, summary, timing=True, extra=None):
    """Write the experiment's CSV files and ``summary.json`` into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    write_runs_csv(os.path.join(out_dir, "runs.csv"), summary, timing)
    write_margins_csv(os.path.join(out_dir, "margins.csv"), summary)
    if summary.cells or summary.name == "feasibility":
        write_cells_csv(os.path.join(out_dir, "cells.csv"), summary)
    if summary.table or summary.name == "sweep":
        write_sweep_csv(os.path.join(out_dir, "sweep.csv"), summary)
    doc = {"experiment": summary.name, "params": summary.params, "models": summary.aggregates()}
    if summary.cells:
        doc["cells"] = summary.cells
    if summary.table:
        doc["table"] = summary.table
    if extra:
        doc.update(extra)
    if not timing:
        for agg in doc["models"].values():
            agg.pop("mean_wall_time_s", None)
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(_jsonable(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return None if math.isnan(obj) else float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj
