"""Hot numeric kernels.

Every kernel exists twice: an explicit-loop version compiled with numba and a
vectorized numpy version.  ``CCPLAN_NUMBA=0`` in the environment (or numba
being unavailable) selects the numpy path at import time.  Both paths are
exercised by the test-suite and compared in ``benchmarks/bench_kernels.py``.

Decision vectors are node-major: node ``i`` occupies ``x[6*i:6*i+6]`` as
``(px, py, theta, v, a, omega)``.
"""

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

NUMBA_AVAILABLE = numba is not None
USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("CCPLAN_NUMBA", "1").strip().lower() not in {
    "0",
    "false",
    "no",
    "off",
}


def _njit(fn):
    if not NUMBA_AVAILABLE:
        return fn
    return numba.njit(cache=True, fastmath=False)(fn)


def _wrap_pi(a):
    # (-pi, pi]
    return np.pi - np.mod(np.pi - a, 2.0 * np.pi)


# --------------------------------------------------------------------------
# cubic spline evaluation / projection
# --------------------------------------------------------------------------


def spline_eval_np(breaks, cx, cy, s):
    """Evaluate a piecewise cubic (scipy ``PPoly`` coefficient layout).

    Returns ``(x, y, dx, dy, ddx, ddy)`` at arc lengths ``s``.
    """
    s = np.asarray(s, dtype=float)
    idx = np.clip(np.searchsorted(breaks, s, side="right") - 1, 0, breaks.size - 2)
    t = s - breaks[idx]
    a3, a2, a1, a0 = cx[0, idx], cx[1, idx], cx[2, idx], cx[3, idx]
    b3, b2, b1, b0 = cy[0, idx], cy[1, idx], cy[2, idx], cy[3, idx]
    x = ((a3 * t + a2) * t + a1) * t + a0
    y = ((b3 * t + b2) * t + b1) * t + b0
    dx = (3.0 * a3 * t + 2.0 * a2) * t + a1
    dy = (3.0 * b3 * t + 2.0 * b2) * t + b1
    ddx = 6.0 * a3 * t + 2.0 * a2
    ddy = 6.0 * b3 * t + 2.0 * b2
    return x, y, dx, dy, ddx, ddy


@_njit
def _spline_eval_nb(breaks, cx, cy, s):
    n = s.shape[0]
    nseg = breaks.shape[0] - 1
    x = np.empty(n)
    y = np.empty(n)
    dx = np.empty(n)
    dy = np.empty(n)
    ddx = np.empty(n)
    ddy = np.empty(n)
    for k in range(n):
        j = np.searchsorted(breaks, s[k], side="right") - 1
        if j < 0:
            j = 0
        elif j > nseg - 1:
            j = nseg - 1
        t = s[k] - breaks[j]
        a3, a2, a1, a0 = cx[0, j], cx[1, j], cx[2, j], cx[3, j]
        b3, b2, b1, b0 = cy[0, j], cy[1, j], cy[2, j], cy[3, j]
        x[k] = ((a3 * t + a2) * t + a1) * t + a0
        y[k] = ((b3 * t + b2) * t + b1) * t + b0
        dx[k] = (3.0 * a3 * t + 2.0 * a2) * t + a1
        dy[k] = (3.0 * b3 * t + 2.0 * b2) * t + b1
        ddx[k] = 6.0 * a3 * t + 2.0 * a2
        ddy[k] = 6.0 * b3 * t + 2.0 * b2
    return x, y, dx, dy, ddx, ddy


def spline_eval_nb(breaks, cx, cy, s):
    return _spline_eval_nb(breaks, cx, cy, np.ascontiguousarray(s, dtype=np.float64))


def spline_project_np(breaks, cx, cy, px, py, s0, n_iter=8):
    """Newton iterations for the nearest station on the spline, clamped to its range."""
    s = np.clip(np.asarray(s0, dtype=float).copy(), breaks[0], breaks[-1])
    for _ in range(n_iter):
        x, y, dx, dy, ddx, ddy = spline_eval_np(breaks, cx, cy, s)
        ex, ey = x - px, y - py
        g1 = ex * dx + ey * dy
        g2 = dx * dx + dy * dy + ex * ddx + ey * ddy
        g2 = np.where(g2 > 1e-12, g2, 1.0)
        s = np.clip(s - g1 / g2, breaks[0], breaks[-1])
    return s


@_njit
def _spline_project_nb(breaks, cx, cy, px, py, s0, n_iter):
    n = px.shape[0]
    lo = breaks[0]
    hi = breaks[-1]
    nseg = breaks.shape[0] - 1
    out = np.empty(n)
    for k in range(n):
        s = min(max(s0[k], lo), hi)
        for _ in range(n_iter):
            j = np.searchsorted(breaks, s, side="right") - 1
            if j < 0:
                j = 0
            elif j > nseg - 1:
                j = nseg - 1
            t = s - breaks[j]
            a3, a2, a1, a0 = cx[0, j], cx[1, j], cx[2, j], cx[3, j]
            b3, b2, b1, b0 = cy[0, j], cy[1, j], cy[2, j], cy[3, j]
            x = ((a3 * t + a2) * t + a1) * t + a0
            y = ((b3 * t + b2) * t + b1) * t + b0
            dx = (3.0 * a3 * t + 2.0 * a2) * t + a1
            dy = (3.0 * b3 * t + 2.0 * b2) * t + b1
            ddx = 6.0 * a3 * t + 2.0 * a2
            ddy = 6.0 * b3 * t + 2.0 * b2
            ex = x - px[k]
            ey = y - py[k]
            g1 = ex * dx + ey * dy
            g2 = dx * dx + dy * dy + ex * ddx + ey * ddy
            if g2 <= 1e-12:
                g2 = 1.0
            s = min(max(s - g1 / g2, lo), hi)
        out[k] = s
    return out


def spline_project_nb(breaks, cx, cy, px, py, s0, n_iter=8):
    return _spline_project_nb(
        breaks,
        cx,
        cy,
        np.ascontiguousarray(px, dtype=np.float64),
        np.ascontiguousarray(py, dtype=np.float64),
        np.ascontiguousarray(s0, dtype=np.float64),
        n_iter,
    )


# --------------------------------------------------------------------------
# objective: quadrature of the stage cost plus the jerk term
# --------------------------------------------------------------------------


def objective_np(z, wx, wy, th_lane, xt, yt, q, jq, h, w, v_r, p_eps):
    """Objective value and gradient of a node-major decision vector.

    ``q`` are per-node quadrature weights, ``jq`` per-interval weights of the
    squared jerk ``((a[i+1]-a[i])/h)**2``; ``w`` is the 7-vector of weights
    ``(g, v, a, omega, j, h, p)``.
    """
    Z = z.reshape(-1, 6)
    px, py, th, v, a, om = Z.T
    ex, ey = px - wx, py - wy
    hd = _wrap_pi(th - th_lane)
    gx, gy = xt - px, yt - py
    P = 1.0 / (gx * gx + gy * gy + p_eps)
    dv = v_r - v
    ell = (
        w[0] * (ex * ex + ey * ey)
        + w[1] * dv * dv
        + w[2] * a * a
        + w[3] * om * om
        + w[5] * hd * hd
        + w[6] * P
    )
    jerk = (a[1:] - a[:-1]) / h
    f = float(q @ ell + w[4] * (jq @ (jerk * jerk)))
    G = np.empty_like(Z)
    P2 = P * P
    G[:, 0] = q * (2.0 * w[0] * ex + 2.0 * w[6] * gx * P2)
    G[:, 1] = q * (2.0 * w[0] * ey + 2.0 * w[6] * gy * P2)
    G[:, 2] = q * (2.0 * w[5] * hd)
    G[:, 3] = q * (-2.0 * w[1] * dv)
    G[:, 4] = q * (2.0 * w[2] * a)
    G[:, 5] = q * (2.0 * w[3] * om)
    dj = 2.0 * w[4] * jq * jerk / h
    G[:-1, 4] -= dj
    G[1:, 4] += dj
    return f, G.reshape(-1)


@_njit
def _objective_nb(z, wx, wy, th_lane, xt, yt, q, jq, h, w, v_r, p_eps):
    m = wx.shape[0]
    g = np.zeros(6 * m)
    f = 0.0
    two_pi = 2.0 * np.pi
    for i in range(m):
        b = 6 * i
        px = z[b]
        py = z[b + 1]
        th = z[b + 2]
        v = z[b + 3]
        a = z[b + 4]
        om = z[b + 5]
        ex = px - wx[i]
        ey = py - wy[i]
        r = np.pi - th + th_lane[i]
        hd = np.pi - (r - two_pi * np.floor(r / two_pi))
        gx = xt[i] - px
        gy = yt[i] - py
        P = 1.0 / (gx * gx + gy * gy + p_eps)
        dv = v_r - v
        ell = (
            w[0] * (ex * ex + ey * ey)
            + w[1] * dv * dv
            + w[2] * a * a
            + w[3] * om * om
            + w[5] * hd * hd
            + w[6] * P
        )
        qi = q[i]
        f += qi * ell
        P2 = P * P
        g[b] = qi * (2.0 * w[0] * ex + 2.0 * w[6] * gx * P2)
        g[b + 1] = qi * (2.0 * w[0] * ey + 2.0 * w[6] * gy * P2)
        g[b + 2] = qi * (2.0 * w[5] * hd)
        g[b + 3] = qi * (-2.0 * w[1] * dv)
        g[b + 4] += qi * (2.0 * w[2] * a)
        g[b + 5] = qi * (2.0 * w[3] * om)
    for i in range(m - 1):
        jerk = (z[6 * (i + 1) + 4] - z[6 * i + 4]) / h
        f += w[4] * jq[i] * jerk * jerk
        dj = 2.0 * w[4] * jq[i] * jerk / h
        g[6 * i + 4] -= dj
        g[6 * (i + 1) + 4] += dj
    return f, g


def objective_nb(z, wx, wy, th_lane, xt, yt, q, jq, h, w, v_r, p_eps):
    return _objective_nb(z, wx, wy, th_lane, xt, yt, q, jq, float(h), w, float(v_r), float(p_eps))


# --------------------------------------------------------------------------
# dynamics defects
# --------------------------------------------------------------------------
#
# ``implicit`` = 1.0 gives trapezoidal collocation
#     d_i = z[i+1] - z[i] - h/2 (f(z_i, u_i) + f(z_{i+1}, u_{i+1}))
# ``implicit`` = 0.0 gives forward Euler
#     d_i = z[i+1] - z[i] - h f(z_i, u_i)
# Both share one sparsity pattern (20 entries per interval, see
# ``defect_pattern``); Euler simply stores zeros for the i+1 derivative terms.


def defect_pattern(m):
    """Row/column indices of the defect Jacobian in the kernel's data order."""
    rows = np.empty(20 * (m - 1), dtype=np.int64)
    cols = np.empty(20 * (m - 1), dtype=np.int64)
    k = 0
    for i in range(m - 1):
        b0, b1 = 6 * i, 6 * (i + 1)
        r = 4 * i
        entries = (
            (r, b0), (r, b1), (r, b0 + 2), (r, b0 + 3), (r, b1 + 2), (r, b1 + 3),
            (r + 1, b0 + 1), (r + 1, b1 + 1), (r + 1, b0 + 2), (r + 1, b0 + 3),
            (r + 1, b1 + 2), (r + 1, b1 + 3),
            (r + 2, b0 + 2), (r + 2, b1 + 2), (r + 2, b0 + 5), (r + 2, b1 + 5),
            (r + 3, b0 + 3), (r + 3, b1 + 3), (r + 3, b0 + 4), (r + 3, b1 + 4),
        )  # fmt: skip
        for rr, cc in entries:
            rows[k] = rr
            cols[k] = cc
            k += 1
    return rows, cols


def _defect_coeffs(h, implicit):
    c0 = h * (0.5 if implicit else 1.0)
    c1 = h * 0.5 if implicit else 0.0
    return c0, c1


def defects_np(z, h, implicit):
    Z = z.reshape(-1, 6)
    th, v = Z[:, 2], Z[:, 3]
    F = np.column_stack((v * np.cos(th), v * np.sin(th), Z[:, 5], Z[:, 4]))
    c0, c1 = _defect_coeffs(h, implicit)
    D = Z[1:, :4] - Z[:-1, :4] - c0 * F[:-1] - c1 * F[1:]
    return D.reshape(-1)


def defect_jac_np(z, h, implicit):
    Z = z.reshape(-1, 6)
    th, v = Z[:, 2], Z[:, 3]
    s, c = np.sin(th), np.cos(th)
    c0, c1 = _defect_coeffs(h, implicit)
    m = Z.shape[0]
    data = np.empty((m - 1, 20))
    one = np.ones(m - 1)
    data[:, 0] = -one
    data[:, 1] = one
    data[:, 2] = c0 * v[:-1] * s[:-1]
    data[:, 3] = -c0 * c[:-1]
    data[:, 4] = c1 * v[1:] * s[1:]
    data[:, 5] = -c1 * c[1:]
    data[:, 6] = -one
    data[:, 7] = one
    data[:, 8] = -c0 * v[:-1] * c[:-1]
    data[:, 9] = -c0 * s[:-1]
    data[:, 10] = -c1 * v[1:] * c[1:]
    data[:, 11] = -c1 * s[1:]
    data[:, 12] = -one
    data[:, 13] = one
    data[:, 14] = -c0
    data[:, 15] = -c1
    data[:, 16] = -one
    data[:, 17] = one
    data[:, 18] = -c0
    data[:, 19] = -c1
    return data.reshape(-1)


@_njit
def _defects_nb(z, h, implicit):
    m = z.shape[0] // 6
    if implicit:
        c0 = 0.5 * h
        c1 = 0.5 * h
    else:
        c0 = h
        c1 = 0.0
    out = np.empty(4 * (m - 1))
    for i in range(m - 1):
        b0 = 6 * i
        b1 = b0 + 6
        th0, v0 = z[b0 + 2], z[b0 + 3]
        th1, v1 = z[b1 + 2], z[b1 + 3]
        r = 4 * i
        out[r] = z[b1] - z[b0] - c0 * v0 * np.cos(th0) - c1 * v1 * np.cos(th1)
        out[r + 1] = z[b1 + 1] - z[b0 + 1] - c0 * v0 * np.sin(th0) - c1 * v1 * np.sin(th1)
        out[r + 2] = th1 - th0 - c0 * z[b0 + 5] - c1 * z[b1 + 5]
        out[r + 3] = v1 - v0 - c0 * z[b0 + 4] - c1 * z[b1 + 4]
    return out


@_njit
def _defect_jac_nb(z, h, implicit):
    m = z.shape[0] // 6
    if implicit:
        c0 = 0.5 * h
        c1 = 0.5 * h
    else:
        c0 = h
        c1 = 0.0
    data = np.empty(20 * (m - 1))
    for i in range(m - 1):
        b0 = 6 * i
        b1 = b0 + 6
        s0 = np.sin(z[b0 + 2])
        k0 = np.cos(z[b0 + 2])
        s1 = np.sin(z[b1 + 2])
        k1 = np.cos(z[b1 + 2])
        v0 = z[b0 + 3]
        v1 = z[b1 + 3]
        k = 20 * i
        data[k] = -1.0
        data[k + 1] = 1.0
        data[k + 2] = c0 * v0 * s0
        data[k + 3] = -c0 * k0
        data[k + 4] = c1 * v1 * s1
        data[k + 5] = -c1 * k1
        data[k + 6] = -1.0
        data[k + 7] = 1.0
        data[k + 8] = -c0 * v0 * k0
        data[k + 9] = -c0 * s0
        data[k + 10] = -c1 * v1 * k1
        data[k + 11] = -c1 * s1
        data[k + 12] = -1.0
        data[k + 13] = 1.0
        data[k + 14] = -c0
        data[k + 15] = -c1
        data[k + 16] = -1.0
        data[k + 17] = 1.0
        data[k + 18] = -c0
        data[k + 19] = -c1
    return data


def defects_nb(z, h, implicit):
    return _defects_nb(z, float(h), bool(implicit))


def defect_jac_nb(z, h, implicit):
    return _defect_jac_nb(z, float(h), bool(implicit))


# --------------------------------------------------------------------------
# L-BFGS two-loop recursion
# --------------------------------------------------------------------------


def lbfgs_backward_np(g, S, Y, rho, order):
    """First loop of the two-loop recursion.

    ``order`` lists stored pair slots oldest-first.  Returns the reduced
    vector ``q`` and the coefficients needed by :func:`lbfgs_forward_np`.
    """
    q = g.copy()
    alpha = np.empty(order.size)
    for k in range(order.size - 1, -1, -1):
        j = order[k]
        alpha[k] = rho[j] * (S[j] @ q)
        q -= alpha[k] * Y[j]
    return q, alpha


def lbfgs_forward_np(r, S, Y, rho, order, alpha):
    """Second loop; ``r`` is the initial inverse Hessian applied to ``q``."""
    r = r.copy()
    for k in range(order.size):
        j = order[k]
        beta = rho[j] * (Y[j] @ r)
        r += (alpha[k] - beta) * S[j]
    return r


@_njit
def _lbfgs_backward_nb(g, S, Y, rho, order):
    n = g.shape[0]
    q = g.copy()
    cnt = order.shape[0]
    alpha = np.empty(cnt)
    for k in range(cnt - 1, -1, -1):
        j = order[k]
        acc = 0.0
        for t in range(n):
            acc += S[j, t] * q[t]
        alpha[k] = rho[j] * acc
        for t in range(n):
            q[t] -= alpha[k] * Y[j, t]
    return q, alpha


@_njit
def _lbfgs_forward_nb(r0, S, Y, rho, order, alpha):
    n = r0.shape[0]
    r = r0.copy()
    for k in range(order.shape[0]):
        j = order[k]
        acc = 0.0
        for t in range(n):
            acc += Y[j, t] * r[t]
        c = alpha[k] - rho[j] * acc
        for t in range(n):
            r[t] += c * S[j, t]
    return r


def lbfgs_backward_nb(g, S, Y, rho, order):
    return _lbfgs_backward_nb(g, S, Y, rho, np.asarray(order, dtype=np.int64))


def lbfgs_forward_nb(r, S, Y, rho, order, alpha):
    return _lbfgs_forward_nb(r, S, Y, rho, np.asarray(order, dtype=np.int64), alpha)


if USE_NUMBA:
    spline_eval = spline_eval_nb
    spline_project = spline_project_nb
    objective = objective_nb
    defects = defects_nb
    defect_jac = defect_jac_nb
    lbfgs_backward = lbfgs_backward_nb
    lbfgs_forward = lbfgs_forward_nb
else:
    spline_eval = spline_eval_np
    spline_project = spline_project_np
    objective = objective_np
    defects = defects_np
    defect_jac = defect_jac_np
    lbfgs_backward = lbfgs_backward_np
    lbfgs_forward = lbfgs_forward_np

BACKEND = "numba" if USE_NUMBA else "numpy"
