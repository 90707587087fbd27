"""Augmented-Lagrangian NLP solver.

Outer loop: PHR augmented Lagrangian

    phi(x) = f + sum(lam*c + rho/2*c**2) + 1/(2 rho) sum(max(0, mu + rho*g)**2 - mu**2)

with first-order multiplier updates and a penalty increase whenever the
constraint violation fails to shrink by a factor 4.

Inner loop: L-BFGS (memory 10) with Armijo backtracking (``c = 1e-4``,
halving).  The initial inverse Hessian of the two-loop recursion is the
inverse of a sparse Gauss-Newton matrix ``C + rho*(Je'Je + Ja'Ja)``, where
``C`` is the problem's constant cost curvature (if it supplies one) and
``Ja`` holds the currently active inequality rows.  The limited-memory pairs
then correct for everything that matrix leaves out.

Finite variable bounds are handled as additional inequality rows.
"""

from dataclasses import dataclass, field
from enum import Enum
import logging
import math
import time

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from . import _kernels
from .errors import DomainError, GeometryError, NumericError, ShapeError
from .geometry import waypoint_track
from .transcribe import N_PER_NODE, unpack

log = logging.getLogger(__name__)

MEMORY = 10
SEED_REFRESH = 20
ARMIJO_C = 1e-4
MAX_HALVINGS = 40
PENALTY_MAX = 1e10


class Status(str, Enum):
    CONVERGED = "Converged"
    INFEASIBLE = "Infeasible"
    ITER_LIMIT = "IterLimit"
    TIME_LIMIT = "TimeLimit"


@dataclass(frozen=True)
class SolveOptions:
    max_outer_iters: int = 50
    max_inner_iters: int = 200
    kkt_tol: float = 1e-4
    feas_tol: float = 1e-6
    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    time_limit: float | None = None

    def __post_init__(self):
        if not (self.kkt_tol > 0 and self.feas_tol > 0 and self.penalty_init > 0):
            raise DomainError("tolerances and the initial penalty must be positive")
        if not self.penalty_growth > 1:
            raise DomainError(f"penalty_growth must exceed 1, got {self.penalty_growth}")
        if self.max_outer_iters < 1 or self.max_inner_iters < 1:
            raise DomainError("iteration limits must be >= 1")
        if self.time_limit is not None and not self.time_limit > 0:
            raise DomainError("time_limit must be positive")


@dataclass(frozen=True)
class OuterRecord:
    """Merit before and after one inner minimization, plus progress measures."""

    outer: int
    merit_start: float
    merit_end: float
    inner_iters: int
    max_violation: float
    kkt_residual: float
    penalty: float


@dataclass(eq=False)
class SolveReport:
    status: Status
    iterations: int
    kkt_residual: float
    max_violation: float
    objective: float
    wall_time: float
    trajectory: object
    x: np.ndarray
    inner_iterations: int = 0
    multipliers_eq: np.ndarray = field(default=None, repr=False)
    multipliers_in: np.ndarray = field(default=None, repr=False)
    history: list = field(default_factory=list, repr=False)

    @property
    def converged(self):
        return self.status is Status.CONVERGED

    def to_dict(self):
        return {
            "status": self.status.value,
            "iterations": self.iterations,
            "inner_iterations": self.inner_iterations,
            "kkt_residual": self.kkt_residual,
            "max_violation": self.max_violation,
            "objective": self.objective,
            "wall_time": self.wall_time,
        }


class _Problem:
    """NLP with bounds folded into the inequality rows."""

    def __init__(self, nlp):
        self.nlp = nlp
        self.fscale = 1.0
        n = nlp.n_vars
        self.lo = np.flatnonzero(np.isfinite(nlp.lb))
        self.up = np.flatnonzero(np.isfinite(nlp.ub))
        nb = self.lo.size + self.up.size
        rows = np.arange(nb)
        cols = np.concatenate((self.lo, self.up))
        vals = np.concatenate((-np.ones(self.lo.size), np.ones(self.up.size)))
        self.jb = sparse.csr_matrix((vals, (rows, cols)), shape=(nb, n))
        self.n_in = nlp.n_ineq + nb

    def _bounds(self, x):
        return np.concatenate((self.nlp.lb[self.lo] - x[self.lo], x[self.up] - self.nlp.ub[self.up]))

    def values(self, x):
        f, ce, ci = self.nlp.values(x)
        return self.fscale * f, np.asarray(ce, dtype=float), np.concatenate((ci, self._bounds(x)))

    def derivatives(self, x):
        ev = self.nlp.derivatives(x)
        ci = np.concatenate((ev.c_in, self._bounds(x)))
        ji = sparse.vstack((ev.jac_in, self.jb), format="csr")
        gf = self.fscale * np.asarray(ev.grad, dtype=float)
        return self.fscale * ev.f, gf, np.asarray(ev.c_eq, dtype=float), ci, ev.jac_eq.tocsr(), ji


def _check_finite(what, arr, offset=0):
    bad = np.flatnonzero(~np.isfinite(arr))
    if bad.size:
        raise NumericError(f"non-finite {what} at index {offset + bad[0]}", index=int(offset + bad[0]))


def _merit(f, ce, ci, lam, mu, rho):
    hinge = np.maximum(0.0, mu + rho * ci)
    return f + lam @ ce + 0.5 * rho * (ce @ ce) + (hinge @ hinge - mu @ mu) / (2.0 * rho)


def _violation(ce, ci):
    v = 0.0
    if ce.size:
        v = float(np.abs(ce).max())
    if ci.size:
        v = max(v, float(ci.max()))
    return max(v, 0.0)


class _Inner:
    """L-BFGS minimization of the augmented Lagrangian at fixed multipliers."""

    def __init__(self, prob, lam, mu, rho, curvature):
        self.prob = prob
        self.lam, self.mu, self.rho = lam, mu, rho
        self.curv = curvature

    def merit_at(self, x):
        try:
            with np.errstate(all="ignore"):
                f, ce, ci = self.prob.values(x)
        except (GeometryError, FloatingPointError, ValueError, ZeroDivisionError):
            return math.inf
        val = _merit(f, ce, ci, self.lam, self.mu, self.rho)
        return val if math.isfinite(val) else math.inf

    def grad_at(self, x):
        f, gf, ce, ci, je, ji = self.prob.derivatives(x)
        hinge = np.maximum(0.0, self.mu + self.rho * ci)
        g = gf + je.T @ (self.lam + self.rho * ce) + ji.T @ hinge
        state = {"f": f, "gf": gf, "ce": ce, "ci": ci, "je": je, "ji": ji, "hinge": hinge}
        state["merit"] = _merit(f, ce, ci, self.lam, self.mu, self.rho)
        return g, state

    def seed(self, st, gamma):
        """Factor the Gauss-Newton seed matrix at the current point."""
        n = st["gf"].size
        rho = self.rho
        act = st["hinge"] > 0.0
        B = rho * (st["je"].T @ st["je"]) if st["je"].shape[0] else sparse.csc_matrix((n, n))
        if act.any():
            ja = st["ji"][act]
            B = B + rho * (ja.T @ ja)
        if self.curv is not None:
            B = B + self.curv
            diag = np.abs(B.diagonal())
            reg = 1e-8 * diag.max() + 1e-10
            B = B + sparse.diags(np.maximum(reg, 1e-6 * diag) + 0.0 * diag)
        else:
            B = B + gamma * sparse.identity(n)
        return splu(sparse.csc_matrix(B))

    def run(self, x, max_iter, tol, gscale, deadline):
        S = np.zeros((MEMORY, x.size))
        Y = np.zeros((MEMORY, x.size))
        rho_pairs = np.zeros(MEMORY)
        order = []
        g, st = self.grad_at(x)
        phi = st["merit"]
        gamma = 1.0
        it = 0
        lu = act_prev = None
        for it in range(1, max_iter + 1):
            if np.abs(g).max() <= tol * gscale(st):
                it -= 1
                break
            if deadline is not None and time.perf_counter() > deadline:
                it -= 1
                break
            act = st["hinge"] > 0.0
            if lu is None or it % SEED_REFRESH == 0 or not np.array_equal(act, act_prev):
                # a new seed invalidates the stored pairs
                lu = self.seed(st, gamma)
                act_prev = act
                order.clear()
            o = np.asarray(order, dtype=np.int64)
            q, alpha = _kernels.lbfgs_backward(g, S, Y, rho_pairs, o)
            r = _kernels.lbfgs_forward(lu.solve(q), S, Y, rho_pairs, o, alpha)
            d = -r
            slope = g @ d
            if not slope < 0 or not math.isfinite(slope):
                order.clear()
                d = -lu.solve(g)
                slope = g @ d
            step = 1.0
            phi_new = self.merit_at(x + d)
            halvings = 0
            while not phi_new <= phi + ARMIJO_C * step * slope:
                halvings += 1
                if halvings > MAX_HALVINGS:
                    break
                step *= 0.5
                phi_new = self.merit_at(x + step * d)
            if halvings > MAX_HALVINGS:
                if order:
                    order.clear()
                    lu = None
                    continue
                break
            x_new = x + step * d
            g_new, st_new = self.grad_at(x_new)
            s_vec = x_new - x
            y_vec = g_new - g
            sy = s_vec @ y_vec
            if sy > 1e-12 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
                slot = order.pop(0) if len(order) == MEMORY else len(order)
                if len(order) < MEMORY and slot in order:
                    slot = next(k for k in range(MEMORY) if k not in order)
                S[slot], Y[slot], rho_pairs[slot] = s_vec, y_vec, 1.0 / sy
                order.append(slot)
                gamma = (y_vec @ y_vec) / sy
            x, g, st = x_new, g_new, st_new
            phi = st["merit"]
        return x, g, st, it


def solve(nlp, x0, opts=None):
    """Minimize ``nlp`` from ``x0``; see :class:`SolveReport` for the outcome."""
    opts = SolveOptions() if opts is None else opts
    t_start = time.perf_counter()
    deadline = None if opts.time_limit is None else t_start + opts.time_limit
    x = np.array(x0, dtype=float)
    if x.shape != (nlp.n_vars,):
        raise ShapeError(f"x0 has shape {x.shape}, expected ({nlp.n_vars},)")
    _check_finite("x0 entry", x)
    prob = _Problem(nlp)
    f, gf, ce, ci, _, _ = prob.derivatives(x)
    _check_finite("objective", np.array([f]))
    _check_finite("gradient entry", gf)
    _check_finite("equality residual", ce)
    _check_finite("inequality residual", ci)
    # objective scaling leaves the minimizer unchanged and keeps the penalty
    # comparable to the cost regardless of how the weights are scaled
    prob.fscale = 1.0 / max(1.0, float(np.abs(gf).max()))
    curvature = None if nlp.curvature is None else prob.fscale * nlp.curvature

    lam = np.zeros(ce.size)
    mu = np.zeros(ci.size)
    rho = float(opts.penalty_init)
    prev_viol = _violation(ce, ci)
    history = []
    status = Status.ITER_LIMIT
    total_inner = 0
    kkt = math.inf
    viol = prev_viol

    def gscale(st):
        return max(1.0, float(np.abs(st["gf"]).max()))

    outer = 0
    for outer in range(1, opts.max_outer_iters + 1):
        inner = _Inner(prob, lam, mu, rho, curvature)
        merit_start = inner.merit_at(x)
        inner_tol = max(0.5 * opts.kkt_tol, min(1e-2, prev_viol))
        x, g, st, n_in = inner.run(x, opts.max_inner_iters, inner_tol, gscale, deadline)
        total_inner += n_in
        ce, ci = st["ce"], st["ci"]
        viol = _violation(ce, ci)
        # first-order multiplier update; the Lagrangian gradient at the new
        # multipliers equals the merit gradient g
        lam = lam + rho * ce
        mu = st["hinge"]
        stat = float(np.abs(g).max()) / gscale(st)
        comp = float(np.abs(np.minimum(mu, -ci)).max()) if ci.size else 0.0
        kkt = max(stat, comp)
        history.append(OuterRecord(outer, merit_start, st["merit"], n_in, viol, kkt, rho))
        log.debug("outer %d: merit %.6g viol %.3g kkt %.3g rho %.3g", outer, st["merit"], viol, kkt, rho)
        if viol <= opts.feas_tol and kkt <= opts.kkt_tol:
            status = Status.CONVERGED
            break
        if deadline is not None and time.perf_counter() > deadline:
            status = Status.TIME_LIMIT
            break
        if viol > opts.feas_tol and viol > 0.25 * prev_viol:
            rho = min(rho * opts.penalty_growth, PENALTY_MAX * opts.penalty_growth)
        else:
            prev_viol = viol
        if rho > PENALTY_MAX and viol > 100.0 * opts.feas_tol:
            status = Status.INFEASIBLE
            break

    f, _, _ = nlp.values(x)
    traj = unpack(nlp, x) if nlp.grid is not None else None
    return SolveReport(
        status=status,
        iterations=outer,
        kkt_residual=kkt,
        max_violation=viol,
        objective=float(f),
        wall_time=time.perf_counter() - t_start,
        trajectory=traj,
        x=x,
        inner_iterations=total_inner,
        multipliers_eq=lam / prob.fscale,
        multipliers_in=mu[: nlp.n_ineq] / prob.fscale,
        history=history,
    )


def initial_guess(sc, grid, return_flag=False):
    """Constant-speed guess along the lane: station ``v_r * t``, lane heading, ``v = v_r``.

    Stations past the lane end are clamped; ``return_flag`` additionally
    returns whether that happened.
    """
    wx, wy, th, clamped = waypoint_track(sc.lane, grid.times, sc.limits.v_r)
    Z = np.zeros((grid.nodes_M, N_PER_NODE))
    Z[:, 0], Z[:, 1], Z[:, 2] = wx, wy, th
    Z[:, 3] = sc.limits.v_r
    flag = bool(np.any(clamped))
    if flag:
        log.warning("lane shorter than v_r * T; initial guess clamped at the lane end")
    x = Z.reshape(-1)
    return (x, flag) if return_flag else x
