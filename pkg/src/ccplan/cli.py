"""Command-line interface: ``ccplan plan``, ``ccplan experiment`` and ``ccplan gen``.

Exit codes: 0 on success, 1 on bad input, 2 when a single plan does not
converge (infeasible, or an iteration or time limit was hit).
"""

import argparse
import csv
import json
import logging
import math
import os
import re
import sys

import numpy as np

from . import harness
from . import scenario as scn
from .errors import ConstructionError, DomainError, PlannerError, ScenarioError
from .solve import SolveOptions
from .transcribe import TimeGrid

log = logging.getLogger("ccplan")

EXPERIMENTS = ("det-study", "exp1", "exp2", "sweep", "feasibility", "alpha")
FAMILIES = ("urban", "risky", "highspeed")
PLAN_FAMILIES = FAMILIES + ("nominal", "mixed")

_PI_RE = re.compile(r"^\s*(?:(\d+(?:\.\d*)?)\s*\*?\s*)?pi\s*(?:/\s*(\d+(?:\.\d*)?))?\s*$")


class UsageError(Exception):
    """Bad command-line input; reported with exit code 1."""


def parse_angle(text):
    """Parse ``"pi/6"``, ``"2*pi/3"``, ``"pi"`` or a plain float (radians)."""
    m = _PI_RE.match(text.lower())
    if m:
        num = float(m.group(1)) if m.group(1) else 1.0
        den = float(m.group(2)) if m.group(2) else 1.0
        if den == 0:
            raise argparse.ArgumentTypeError(f"invalid angle {text!r}")
        return num * math.pi / den
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid angle {text!r}") from None


def parse_ratios(text):
    """``"default"`` or ``;``-separated ratios such as ``"5:1:1:1:1:1:1;1:1:1:1:1:1:1"``."""
    if text == "default":
        return harness.DEFAULT_RATIOS
    out = []
    for chunk in text.split(";"):
        parts = chunk.replace(",", ":").split(":")
        if len(parts) != 7:
            raise argparse.ArgumentTypeError(f"a weight ratio needs 7 entries, got {chunk!r}")
        try:
            out.append(tuple(float(p) for p in parts))
        except ValueError:
            raise argparse.ArgumentTypeError(f"non-numeric weight ratio {chunk!r}") from None
    return tuple(out)


def _float_list(text):
    try:
        return tuple(float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _default_seed():
    env = os.environ.get("PLANNER_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"PLANNER_SEED must be an integer, got {env!r}") from None


def build_parser():
    p = argparse.ArgumentParser(prog="ccplan", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--T", type=float, default=None, help="horizon in seconds")
        sp.add_argument("--M", type=int, default=60, help="number of grid nodes")
        sp.add_argument("--seed", type=int, default=None, help="seed (default: $PLANNER_SEED or 0)")
        sp.add_argument("--out", default=None, help="output directory")

    plan = sub.add_parser("plan", help="solve one scenario")
    src = plan.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", help="scenario JSON file")
    src.add_argument("--gen", choices=PLAN_FAMILIES, help="generate the scenario instead")
    common(plan)
    plan.add_argument("--model", choices=("continuous", "discrete"), default="continuous")
    det = plan.add_mutually_exclusive_group()
    det.add_argument("--stochastic", dest="stochastic", action="store_true", default=True)
    det.add_argument("--deterministic", dest="stochastic", action="store_false")
    plan.add_argument("--chance-mode", choices=("paper", "separation"), default=None)
    plan.add_argument("--alpha", type=float, default=None)
    plan.add_argument("--noisy", action="store_true", help="plan against measurements drawn with --seed")
    plan.add_argument("--v-r", type=float, default=22.0, help="reference speed (highspeed generator)")
    plan.add_argument("--omega-max", type=parse_angle, default=math.pi / 6, help="turn-rate limit (highspeed generator)")

    exp = sub.add_parser("experiment", help="run an experiment pipeline")
    exp.add_argument("name", help="one of " + ", ".join(EXPERIMENTS))
    common(exp)
    exp.add_argument("--n", type=int, default=None, help="runs (per cell for feasibility)")
    exp.add_argument("--parallel", type=int, default=1, help="worker processes")
    exp.add_argument("--alpha", type=float, default=0.95)
    exp.add_argument("--ratios", type=parse_ratios, default=harness.DEFAULT_RATIOS, help='"default" or "5:1:1:1:1:1:1;..."')
    exp.add_argument("--horizons", type=_float_list, default=harness.DEFAULT_HORIZONS, help="sweep horizons, e.g. 50,200,400")
    exp.add_argument("--no-timing", action="store_true", help="leave wall times out of the outputs")

    gen = sub.add_parser("gen", help="write a generated scenario as JSON")
    gen.add_argument("family", help="one of " + ", ".join(FAMILIES))
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--T", type=float, default=None)
    gen.add_argument("--v-r", type=float, default=22.0)
    gen.add_argument("--omega-max", type=parse_angle, default=math.pi / 6)
    gen.add_argument("--out", default=None, help="output directory (default: print to stdout)")
    return p


def _generate(family, seed, T=None, v_r=22.0, omega_max=math.pi / 6):
    kw = {} if T is None else {"horizon_T": T}
    if family == "highspeed":
        return scn.make_highspeed_scenario(v_r, omega_max, seed, **kw)
    if family == "nominal":
        return scn.make_nominal_scenario(**kw)
    return scn.GENERATORS[family](seed, **kw)


def _write_trajectory(path, traj):
    jerk = np.append(traj.jerks, math.nan)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("t", "x", "y", "theta", "v", "a", "omega", "jerk"))
        for i, t in enumerate(traj.grid.times):
            row = (t, *traj.states[i], *traj.controls[i], jerk[i])
            w.writerow([harness._fmt(float(v)) for v in row])


def cmd_plan(args):
    seed = _default_seed() if args.seed is None else args.seed
    if args.scenario:
        sc = scn.load(args.scenario)
        if args.T is not None and args.T != sc.horizon_T:
            raise UsageError(f"--T {args.T} conflicts with the scenario's horizon_T {sc.horizon_T}")
    else:
        sc = _generate(args.gen, seed, args.T, args.v_r, args.omega_max)
    changes = {}
    if args.chance_mode is not None:
        changes["mode"] = args.chance_mode
    if args.alpha is not None:
        changes["alpha"] = args.alpha
    if changes:
        sc = sc.with_chance(**changes)
    if args.M < 3:
        raise UsageError(f"--M must be >= 3, got {args.M}")
    grid = TimeGrid(sc.horizon_T, args.M)
    model = f"{args.model}-{'stochastic' if args.stochastic else 'deterministic'}"
    real = scn.realize_measurements(sc, grid, seed) if args.noisy else None

    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    try:
        rep = harness.solve_model(sc, grid, model, real, SolveOptions())
    except ConstructionError as exc:
        log.error("%s", exc)
        return 2
    mx, my = sc.target.mean_at(grid.times)
    vr = harness.count_violations(rep.trajectory, np.column_stack((mx, my)), sc.limits.d_min, rep.wall_time)

    _write_trajectory(os.path.join(out, "trajectory.csv"), rep.trajectory)
    run = harness.RunRecord(0, model, seed, seed if args.noisy else -1, rep.status.value, vr.violation_count,
                            vr.valid_proportion, vr.avg_speed, vr.avg_accel_mag, vr.avg_ang_vel_mag,
                            vr.avg_gap, rep.wall_time, grid.times, vr.margins)  # fmt: skip
    harness.write_margins_csv(os.path.join(out, "margins.csv"), harness.ExperimentSummary("plan", [run]))
    doc = rep.to_dict()
    doc.update(
        model=model,
        scenario=sc.name,
        chance_mode=sc.chance_mode.value,
        alpha=sc.chance.alpha,
        T=grid.horizon_T,
        M=grid.nodes_M,
        noisy=bool(args.noisy),
        violations=vr.violation_count,
        valid_proportion=vr.valid_proportion,
    )
    with open(os.path.join(out, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(harness._jsonable(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")
    log.info("%s: %s after %d outer iterations, %d violations", model, rep.status.value, rep.iterations, vr.violation_count)
    return 0 if rep.converged else 2


def cmd_experiment(args):
    if args.name not in EXPERIMENTS:
        raise UsageError(f"unknown experiment {args.name!r}; choose from {', '.join(EXPERIMENTS)}")
    if args.parallel < 1:
        raise UsageError("--parallel must be >= 1")
    seed = _default_seed() if args.seed is None else args.seed
    default_n = 20 if args.name == "feasibility" else 50
    n = default_n if args.n is None else args.n
    grid = TimeGrid(scn.URBAN_T if args.T is None else args.T, args.M)
    extra = None
    if args.name == "exp1":
        summary = harness.run_experiment1(n, grid, seed, args.parallel)
    elif args.name == "exp2":
        summary = harness.run_experiment2(n, grid, seed, args.parallel)
    elif args.name == "det-study":
        summary = harness.run_deterministic_study(n, grid, seed, args.parallel)
    elif args.name == "sweep":
        summary = harness.run_weight_sweep(args.ratios, args.horizons, n, seed, args.parallel)
    elif args.name == "feasibility":
        kw = {} if args.T is None else {"horizon_T": args.T}
        summary = harness.run_feasibility_study(n, seed, args.parallel, **kw)
    else:
        summary = harness.run_experiment2(n, grid, seed, args.parallel)
        res = harness.alpha_validation(summary, args.alpha)
        summary.name = "alpha"
        extra = {
            "alpha": {
                "threshold": res.threshold,
                "model": res.model,
                "n_runs": res.n_runs,
                "fraction_meeting": res.fraction_meeting,
                "mean_proportion": res.mean_proportion,
                "min_proportion": res.min_proportion,
            }
        }
    out = args.out or os.path.join("results", args.name)
    harness.write_summary(out, summary, timing=not args.no_timing, extra=extra)
    log.info("wrote %d runs to %s", len(summary.runs), out)
    return 0


def _gen_filename(args, seed):
    if args.family == "highspeed":
        om = f"{args.omega_max:.6f}".rstrip("0").rstrip(".")
        return f"highspeed_v{args.v_r:g}_w{om}_{seed}.json"
    return f"{args.family}_{seed}.json"


def cmd_gen(args):
    if args.family not in FAMILIES:
        raise UsageError(f"unknown scenario family {args.family!r}; choose from {', '.join(FAMILIES)}")
    seed = _default_seed() if args.seed is None else args.seed
    sc = _generate(args.family, seed, args.T, args.v_r, args.omega_max)
    text = scn.to_json(sc)
    if args.out is None:
        sys.stdout.write(text + "\n")
        return 0
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, _gen_filename(args, seed))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")
    log.info("wrote %s", path)
    return 0


COMMANDS = {"plan": cmd_plan, "experiment": cmd_experiment, "gen": cmd_gen}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors; bad input is 1 here
        return 0 if exc.code in (0, None) else 1
    level = logging.WARNING - 10 * min(args.verbose, 2) if args.verbose else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ScenarioError as exc:
        log.error("invalid scenario: %s", exc)
        return 1
    except (UsageError, DomainError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return 1
    except PlannerError as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
