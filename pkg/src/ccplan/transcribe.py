"""Transcription of the trajectory problem into a finite-dimensional NLP.

Two transcriptions share one variable layout (node-major, six variables per
node: ``x, y, theta, v, a, omega``):

* :func:`build_continuous_nlp` - trapezoidal direct collocation on a uniform
  grid, trapezoidal quadrature of the running cost;
* :func:`build_discrete_nlp` - forward-Euler steps and a ``dt``-weighted sum.

Equalities are the dynamics defects followed by four initial-state pins.
Inequalities (all ``<= 0``) come in blocks, in order: road corridor (2 per
node), speed, turn rate and acceleration bounds (2 per node each), jerk bound
(2 per interval) and the target-distance rows, whose form depends on the
mode (see :mod:`ccplan.chance`).
"""

from dataclasses import dataclass, field
import math
from typing import Callable

import numpy as np
from scipy import sparse

from . import _kernels
from .chance import ChanceMode, det_equiv_bounds, separation_bound
from .errors import ConstructionError, ShapeError
from .geometry import waypoint_track
from .vehicle import Weights

N_PER_NODE = 6
STATE_NAMES = ("x", "y", "theta", "v")
CONTROL_NAMES = ("a", "omega")


@dataclass(frozen=True)
class TimeGrid:
    horizon_T: float
    nodes_M: int

    def __post_init__(self):
        if not self.horizon_T > 0:
            raise ConstructionError(f"horizon must be positive, got {self.horizon_T}")
        if self.nodes_M < 3:
            raise ConstructionError(f"need at least 3 nodes, got {self.nodes_M}")

    @property
    def h(self):
        return self.horizon_T / (self.nodes_M - 1)

    @property
    def times(self):
        return np.arange(self.nodes_M) * self.h

    @classmethod
    def with_step(cls, horizon_T, step):
        """Grid whose spacing is as close as possible to ``step``."""
        return cls(horizon_T, max(3, int(round(horizon_T / step)) + 1))


@dataclass(frozen=True)
class NlpEvaluation:
    f: float
    grad: np.ndarray
    c_eq: np.ndarray
    c_in: np.ndarray
    jac_eq: sparse.csr_matrix
    jac_in: sparse.csr_matrix


@dataclass(eq=False)
class NlpProblem:
    """A smooth NLP ``min f(x) s.t. c_eq(x) = 0, c_in(x) <= 0, lb <= x <= ub``.

    ``values(x)`` returns ``(f, c_eq, c_in)``; ``derivatives(x)`` returns an
    :class:`NlpEvaluation`.  Trajectory problems also carry their grid,
    a per-kind constraint ``census`` and the data used to build them.
    """

    n_vars: int
    n_eq: int
    n_ineq: int
    values: Callable
    derivatives: Callable
    lb: np.ndarray
    ub: np.ndarray
    census: dict = field(default_factory=dict)
    grid: TimeGrid | None = None
    info: dict = field(default_factory=dict)
    curvature: sparse.spmatrix | None = None

    @classmethod
    def from_functions(cls, n, f, grad, eq=None, eq_jac=None, ineq=None, ineq_jac=None, lb=None, ub=None, curvature=None):
        """Wrap plain callables (dense Jacobians are fine) as an NLP.

        ``curvature`` is optional: a constant PSD matrix approximating the
        objective Hessian, which the solver uses to seed its quasi-Newton
        model.  Trajectory problems supply the Gauss-Newton part of their
        least-squares cost terms.
        """
        n_eq = 0 if eq is None else len(np.atleast_1d(eq(np.zeros(n))))
        n_in = 0 if ineq is None else len(np.atleast_1d(ineq(np.zeros(n))))

        def _c(fun, x, k):
            return np.zeros(0) if k == 0 else np.asarray(fun(x), dtype=float).reshape(k)

        def _j(fun, x, k):
            if k == 0:
                return sparse.csr_matrix((0, n))
            return sparse.csr_matrix(np.asarray(fun(x), dtype=float).reshape(k, n))

        def values(x):
            return float(f(x)), _c(eq, x, n_eq), _c(ineq, x, n_in)

        def derivatives(x):
            return NlpEvaluation(
                float(f(x)),
                np.asarray(grad(x), dtype=float),
                _c(eq, x, n_eq),
                _c(ineq, x, n_in),
                _j(eq_jac, x, n_eq),
                _j(ineq_jac, x, n_in),
            )

        lb = np.full(n, -np.inf) if lb is None else np.asarray(lb, dtype=float)
        ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float)
        if curvature is not None:
            curvature = sparse.csc_matrix(curvature)
        return cls(n, n_eq, n_in, values, derivatives, lb, ub, curvature=curvature)

    def index(self, node, name):
        """Position of variable ``name`` of ``node`` in the decision vector."""
        return N_PER_NODE * node + (STATE_NAMES + CONTROL_NAMES).index(name)


@dataclass(frozen=True, eq=False)
class EgoTrajectory:
    """Ego states ``(M, 4)`` and controls ``(M, 2)`` on a time grid."""

    grid: TimeGrid
    states: np.ndarray
    controls: np.ndarray

    def __post_init__(self):
        m = self.grid.nodes_M
        if self.states.shape != (m, 4) or self.controls.shape != (m, 2):
            raise ShapeError(f"trajectory arrays must be ({m}, 4) and ({m}, 2)")

    @property
    def jerks(self):
        a = self.controls[:, 0]
        return np.diff(a) / self.grid.h

    def column(self, name):
        if name in STATE_NAMES:
            return self.states[:, STATE_NAMES.index(name)]
        return self.controls[:, CONTROL_NAMES.index(name)]


def _check_x(nlp, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (nlp.n_vars,):
        raise ShapeError(f"decision vector has shape {x.shape}, expected ({nlp.n_vars},)")
    return x


def evaluate(nlp, x):
    """Objective, constraints and their analytic derivatives at ``x``."""
    return nlp.derivatives(_check_x(nlp, x))


def unpack(nlp, x):
    x = _check_x(nlp, x)
    if nlp.grid is None:
        raise ShapeError("problem has no trajectory layout")
    Z = x.reshape(nlp.grid.nodes_M, N_PER_NODE)
    return EgoTrajectory(nlp.grid, Z[:, :4].copy(), Z[:, 4:].copy())


def pack(traj):
    return np.hstack((traj.states, traj.controls)).reshape(-1)


class _CsrAssembler:
    """Fixed-pattern sparse matrix; refills data in COO order each call."""

    def __init__(self, rows, cols, shape):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        tag = sparse.coo_matrix((np.arange(1, rows.size + 1, dtype=float), (rows, cols)), shape=shape).tocsr()
        if tag.nnz != rows.size:
            raise ConstructionError("duplicate entries in Jacobian pattern")
        self.perm = tag.data.astype(np.int64) - 1
        self.indices = tag.indices
        self.indptr = tag.indptr
        self.shape = shape

    def build(self, data):
        return sparse.csr_matrix((data[self.perm], self.indices, self.indptr), shape=self.shape)


class _TrajectoryProblem:
    """Evaluator shared by both transcriptions."""

    def __init__(self, sc, grid, weights, stochastic, implicit, target_xy):
        m = grid.nodes_M
        h = grid.h
        t = grid.times
        lim = sc.limits
        lane = sc.lane
        if lim.v_max * grid.horizon_T > lane.length + 1e-9:
            raise ConstructionError(
                f"lane length {lane.length:g} m is shorter than v_max * T = {lim.v_max * grid.horizon_T:g} m"
            )
        self.m, self.h, self.implicit = m, h, implicit
        self.lane = lane
        self.usable = sc.bounds.usable
        self.lim = lim
        self.w = weights.as_array()
        self.p_eps = sc.p_eps
        self.v_r = lim.v_r
        self.wx, self.wy, self.th_lane, _ = waypoint_track(lane, t, lim.v_r)
        self.xt = np.ascontiguousarray(target_xy[:, 0], dtype=float)
        self.yt = np.ascontiguousarray(target_xy[:, 1], dtype=float)
        if implicit:
            self.q = np.full(m, h)
            self.q[[0, -1]] = 0.5 * h
        else:
            self.q = np.full(m, h)
        self.jq = np.full(m - 1, h)
        self.z_init = sc.z_init.as_array()

        # distance rows
        mu_sum = self.xt + self.yt
        sx, sy = sc.target.sigma_x, sc.target.sigma_y
        self.stochastic = stochastic
        self.mode = sc.chance.mode
        if not stochastic:
            self.dist_kind = "distance"
            self.n_dist = m
            self.mu_sum = mu_sum
        elif self.mode is ChanceMode.PAPER:
            self.dist_kind = "chance"
            self.n_dist = 2 * m
            self.lower, self.upper = det_equiv_bounds(self.xt, self.yt, sx, sy, sc.chance)
        else:
            self.dist_kind = "chance"
            self.n_dist = m
            trailing = mu_sum[0] - (self.z_init[0] + self.z_init[1]) >= 0
            self.trailing = bool(trailing)
            self.sep = separation_bound(self.xt, self.yt, sx, sy, sc.chance, trailing=self.trailing)

        self.n_vars = N_PER_NODE * m
        self.n_eq = 4 * (m - 1) + 4
        self.n_in = 8 * m + 2 * (m - 1) + self.n_dist
        self.census = {
            "collocation" if implicit else "euler": 4 * (m - 1),
            "initial_pin": 4,
            "road": 2 * m,
            "speed": 2 * m,
            "turn_rate": 2 * m,
            "accel": 2 * m,
            "jerk": 2 * (m - 1),
            self.dist_kind: self.n_dist,
        }

        # equality pattern: defects then pins
        dr, dc = _kernels.defect_pattern(m)
        pin_r = 4 * (m - 1) + np.arange(4)
        pin_c = np.arange(4)
        self.eq_asm = _CsrAssembler(
            np.concatenate((dr, pin_r)), np.concatenate((dc, pin_c)), (self.n_eq, self.n_vars)
        )
        self.n_defect_nz = dr.size

        # inequality pattern
        nodes = np.arange(m)
        col = lambda k: N_PER_NODE * nodes + k  # noqa: E731
        rows, cols, data = [], [], []
        r0 = 0

        def add(r, c, d):
            rows.append(np.asarray(r))
            cols.append(np.asarray(c))
            data.append(np.asarray(d, dtype=float) * np.ones(np.size(r)))

        # road: +off - c (rows r0..r0+m), -off - c (next m); x and y entries filled per call
        self.road_rows = r0
        for sgn in (0, 1):
            add(r0 + sgn * m + nodes, col(0), 0.0)
            add(r0 + sgn * m + nodes, col(1), 0.0)
        r0 += 2 * m
        for k in (3, 5, 4):  # speed, turn rate, accel
            add(r0 + nodes, col(k), 1.0)
            add(r0 + m + nodes, col(k), -1.0)
            r0 += 2 * m
        iv = np.arange(m - 1)
        add(r0 + iv, N_PER_NODE * iv + 4, -1.0 / h)
        add(r0 + iv, N_PER_NODE * (iv + 1) + 4, 1.0 / h)
        add(r0 + m - 1 + iv, N_PER_NODE * iv + 4, 1.0 / h)
        add(r0 + m - 1 + iv, N_PER_NODE * (iv + 1) + 4, -1.0 / h)
        r0 += 2 * (m - 1)
        self.dist_rows = r0
        if not stochastic:
            add(r0 + nodes, col(0), 0.0)
            add(r0 + nodes, col(1), 0.0)
        elif self.mode is ChanceMode.PAPER:
            add(r0 + nodes, col(0), 1.0)
            add(r0 + nodes, col(1), 1.0)
            add(r0 + m + nodes, col(0), -1.0)
            add(r0 + m + nodes, col(1), -1.0)
        else:
            sgn = 1.0 if self.trailing else -1.0
            add(r0 + nodes, col(0), sgn)
            add(r0 + nodes, col(1), sgn)
        self.in_rows = np.concatenate(rows)
        self.in_cols = np.concatenate(cols)
        self.in_data = np.concatenate(data)
        self.in_asm = _CsrAssembler(self.in_rows, self.in_cols, (self.n_in, self.n_vars))
        # deterministic distance rows carry x-dependent signs in the last 2m slots
        self.dist_slots = np.arange(self.in_rows.size - 2 * m, self.in_rows.size)

        lb = np.full((m, N_PER_NODE), -np.inf)
        ub = np.full((m, N_PER_NODE), np.inf)
        lb[:, 0] = lb[:, 1] = lb[:, 3] = 0.0
        lb[:, 2], ub[:, 2] = -math.pi, math.pi
        lb[:, 5], ub[:, 5] = -math.pi, math.pi
        self.lb, self.ub = lb.reshape(-1), ub.reshape(-1)
        self._check_pin(sc)

    def _check_pin(self, sc):
        z = self.z_init
        x = np.zeros(self.n_vars)
        x[:4] = z
        bad = []
        if np.any(z < self.lb[:4]) or np.any(z > self.ub[:4]):
            bad.append("variable bounds")
        cin = self._ineq(x)
        node0 = [self.road_rows, self.road_rows + self.m, 2 * self.m, 3 * self.m, self.dist_rows]
        if self.dist_kind == "chance" and self.mode is ChanceMode.PAPER:
            node0.append(self.dist_rows + self.m)
        for r in node0:
            if cin[r] > 1e-9:
                bad.append(f"inequality row {r} (residual {cin[r]:.4g})")
        if bad:
            raise ConstructionError("initial state violates " + ", ".join(bad))

    def curvature(self):
        """Gauss-Newton Hessian of the quadratic cost terms (constant)."""
        m, w = self.m, self.w
        diag = np.empty((m, N_PER_NODE))
        for k, wk in enumerate((w[0], w[0], w[5], w[1], w[2], w[3])):
            diag[:, k] = 2.0 * wk * self.q
        H = sparse.diags(diag.reshape(-1))
        ia = N_PER_NODE * np.arange(m - 1) + 4
        c = 2.0 * w[4] * self.jq / self.h**2
        rows = np.concatenate((ia, ia + N_PER_NODE, ia, ia + N_PER_NODE))
        cols = np.concatenate((ia, ia + N_PER_NODE, ia + N_PER_NODE, ia))
        J = sparse.coo_matrix((np.concatenate((c, c, -c, -c)), (rows, cols)), shape=H.shape)
        return (H + J).tocsc()

    # -- evaluation ---------------------------------------------------------

    def _objective(self, x):
        return _kernels.objective(
            x, self.wx, self.wy, self.th_lane, self.xt, self.yt, self.q, self.jq, self.h, self.w, self.v_r, self.p_eps
        )

    def _eq(self, x):
        d = _kernels.defects(x, self.h, self.implicit)
        return np.concatenate((d, x[:4] - self.z_init))

    def _ineq(self, x, proj=None):
        Z = x.reshape(self.m, N_PER_NODE)
        px, py, v, a, om = Z[:, 0], Z[:, 1], Z[:, 3], Z[:, 4], Z[:, 5]
        if proj is None:
            proj = self.lane.project(px, py)
        off = proj[1]
        lim = self.lim
        jerk = np.diff(a) / self.h
        ssum = px + py
        if not self.stochastic:
            dist = (lim.d_min - np.abs(self.mu_sum - ssum),)
        elif self.mode is ChanceMode.PAPER:
            dist = (ssum - self.upper, self.lower - ssum)
        elif self.trailing:
            dist = (ssum - self.sep,)
        else:
            dist = (self.sep - ssum,)
        return np.concatenate(
            (
                off - self.usable, -off - self.usable,
                v - lim.v_max, -v - lim.v_max,
                om - lim.omega_max, -om - lim.omega_max,
                a - lim.a_max, -a - lim.a_max,
                jerk - lim.j_max, -jerk - lim.j_max,
                *dist,
            )
        )  # fmt: skip

    def values(self, x):
        f, _ = self._objective(x)
        return f, self._eq(x), self._ineq(x)

    def derivatives(self, x):
        f, g = self._objective(x)
        ceq = self._eq(x)
        eq_data = np.concatenate((_kernels.defect_jac(x, self.h, self.implicit), np.ones(4)))
        Z = x.reshape(self.m, N_PER_NODE)
        proj = self.lane.project(Z[:, 0], Z[:, 1])
        cin = self._ineq(x, proj)
        data = self.in_data.copy()
        nx, ny = proj[2], proj[3]
        m = self.m
        data[0:m] = nx
        data[m : 2 * m] = ny
        data[2 * m : 3 * m] = -nx
        data[3 * m : 4 * m] = -ny
        if not self.stochastic:
            sgn = np.where(self.mu_sum - Z[:, 0] - Z[:, 1] >= 0.0, 1.0, -1.0)
            data[self.dist_slots[:m]] = sgn
            data[self.dist_slots[m:]] = sgn
        return NlpEvaluation(f, g, ceq, cin, self.eq_asm.build(eq_data), self.in_asm.build(data))


def _target_xy(sc, grid, measurements):
    if measurements is not None:
        xy = np.asarray(measurements.samples if hasattr(measurements, "samples") else measurements, dtype=float)
        if xy.shape != (grid.nodes_M, 2):
            raise ShapeError(f"measurements must have shape ({grid.nodes_M}, 2), got {xy.shape}")
        return xy
    mx, my = sc.target.mean_at(grid.times)
    return np.column_stack((mx, my))


def _make(sc, grid, weights, stochastic, implicit, measurements, label):
    weights = sc.weights if weights is None else weights
    if not isinstance(weights, Weights):
        weights = Weights.from_ratio(weights)
    prob = _TrajectoryProblem(sc, grid, weights, stochastic, implicit, _target_xy(sc, grid, measurements))
    info = {
        "model": f"{label}-{'stochastic' if stochastic else 'deterministic'}",
        "target_xy": np.column_stack((prob.xt, prob.yt)),
        "waypoints": np.column_stack((prob.wx, prob.wy, prob.th_lane)),
        "weights": weights,
        "chance_mode": prob.mode.value if stochastic else None,
    }
    return NlpProblem(
        prob.n_vars, prob.n_eq, prob.n_in, prob.values, prob.derivatives,
        prob.lb, prob.ub, prob.census, grid, info, prob.curvature(),
    )  # fmt: skip


def build_continuous_nlp(sc, grid, w=None, stochastic=True, measurements=None):
    """Trapezoidal direct collocation of the scenario on ``grid``.

    ``measurements`` (a ``Realization`` or an ``(M, 2)`` array) replaces the
    target's mean positions at the nodes.
    """
    return _make(sc, grid, w, stochastic, True, measurements, "continuous")


def build_discrete_nlp(sc, steps_N, dt, w=None, stochastic=True, measurements=None):
    """Forward-Euler transcription over ``steps_N`` nodes spaced ``dt`` apart."""
    if steps_N < 2:
        raise ConstructionError(f"need N >= 2 steps, got {steps_N}")
    if not dt > 0:
        raise ConstructionError(f"dt must be positive, got {dt}")
    if steps_N < 3:
        raise ConstructionError("the shared layout needs at least 3 nodes")
    grid = TimeGrid(dt * (steps_N - 1), steps_N)
    return _make(sc, grid, w, stochastic, False, measurements, "discrete")
