"""Time the numba kernels against their numpy counterparts.

Usage::

    python3 benchmarks/bench_kernels.py --sizes 60 200 1000 --repeat 200

Both variants are imported from the same module regardless of
``CCPLAN_NUMBA``; the numba ones are warmed up before timing.  Each row also
reports the largest absolute difference between the two outputs.
"""

import argparse
import logging
import timeit

import numpy as np

from ccplan import _kernels as K

log = logging.getLogger("bench_kernels")


def make_inputs(m, seed=0):
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 50.0, m)
    h = t[1] - t[0]
    z = np.empty((m, 6))
    z[:, 0] = 10.0 + 11.0 * t + rng.normal(0, 0.5, m)
    z[:, 1] = 10.0 + 4.0 * t + rng.normal(0, 0.5, m)
    z[:, 2] = 0.35 + rng.normal(0, 0.05, m)
    z[:, 3] = 12.0 + rng.normal(0, 0.5, m)
    z[:, 4] = rng.normal(0, 0.3, m)
    z[:, 5] = rng.normal(0, 0.02, m)
    q = np.full(m, h)
    q[[0, -1]] *= 0.5
    obj = (z.reshape(-1), z[:, 0] + 0.3, z[:, 1] - 0.2, np.full(m, 0.35), z[:, 0] + 25.0, z[:, 1] + 9.0,
           q, np.full(m - 1, h), h, np.ones(7), 12.0, 1.0)  # fmt: skip

    knots = np.linspace(0.0, 600.0, max(m, 4))
    cx = rng.normal(0, 1, (4, knots.size - 1))
    cy = rng.normal(0, 1, (4, knots.size - 1))
    s = rng.uniform(0.0, 600.0, m)
    px, py = rng.normal(0, 5, m), rng.normal(0, 5, m)

    n = 6 * m
    mem = 10
    S, Y = rng.normal(size=(mem, n)), rng.normal(size=(mem, n))
    Y = S + 0.1 * Y  # keep s'y > 0
    rho = 1.0 / np.einsum("ij,ij->i", S, Y)
    order = np.arange(mem, dtype=np.int64)
    g = rng.normal(size=n)
    _, alpha = K.lbfgs_backward_np(g, S, Y, rho, order)

    return {
        "objective": (K.objective_np, K.objective_nb, obj),
        "defects": (K.defects_np, K.defects_nb, (z.reshape(-1), h, True)),
        "defect_jac": (K.defect_jac_np, K.defect_jac_nb, (z.reshape(-1), h, True)),
        "spline_eval": (K.spline_eval_np, K.spline_eval_nb, (knots, cx, cy, s)),
        "spline_project": (K.spline_project_np, K.spline_project_nb, (knots, cx, cy, px, py, s)),
        "lbfgs_backward": (K.lbfgs_backward_np, K.lbfgs_backward_nb, (g, S, Y, rho, order)),
        "lbfgs_forward": (K.lbfgs_forward_np, K.lbfgs_forward_nb, (g, S, Y, rho, order, alpha)),
    }


def _flat(out):
    if isinstance(out, tuple):
        return np.concatenate([np.atleast_1d(np.asarray(o, dtype=float)).ravel() for o in out])
    return np.atleast_1d(np.asarray(out, dtype=float)).ravel()


def bench(sizes, repeat):
    rows = []
    for m in sizes:
        for name, (f_np, f_nb, args) in make_inputs(m).items():
            diff = float(np.max(np.abs(_flat(f_np(*args)) - _flat(f_nb(*args)))))
            t_np = min(timeit.repeat(lambda: f_np(*args), number=repeat, repeat=3)) / repeat
            t_nb = min(timeit.repeat(lambda: f_nb(*args), number=repeat, repeat=3)) / repeat
            rows.append((name, m, t_np, t_nb, diff))
    return rows


def main(argv=None):
    p = argparse.ArgumentParser(description="numba vs numpy kernel timings")
    p.add_argument("--sizes", type=int, nargs="+", default=[60, 200, 1000], help="grid node counts")
    p.add_argument("--repeat", type=int, default=200, help="calls per timing sample")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    if not K.NUMBA_AVAILABLE:
        log.error("numba is not installed; nothing to compare")
        return 1
    rows = bench(args.sizes, args.repeat)
    print(f"{'kernel':<16}{'M':>6}{'numpy [us]':>13}{'numba [us]':>13}{'speedup':>9}{'max |diff|':>13}")
    for name, m, t_np, t_nb, diff in rows:
        print(f"{name:<16}{m:>6}{t_np * 1e6:>13.2f}{t_nb * 1e6:>13.2f}{t_np / t_nb:>9.2f}{diff:>13.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
