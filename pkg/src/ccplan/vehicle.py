"""Unicycle ego model: dynamics, stage cost and pointwise constraint functions."""

from dataclasses import astuple, dataclass, fields
import math

import numpy as np

from .errors import DomainError
from .geometry import lane_heading, lateral_offset, wrap_angle


@dataclass(frozen=True)
class EgoState:
    x: float
    y: float
    theta: float
    v: float

    def __post_init__(self):
        vals = astuple(self)
        if not all(math.isfinite(c) for c in vals):
            raise DomainError(f"ego state must be finite, got {vals}")
        if self.v < 0 or self.x < 0 or self.y < 0:
            raise DomainError(f"ego state needs x, y, v >= 0, got {vals}")

    def as_array(self):
        return np.array(astuple(self))


@dataclass(frozen=True)
class ControlInput:
    a: float
    omega: float

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.omega)):
            raise DomainError("control input must be finite")
        if abs(self.omega) > math.pi:
            raise DomainError(f"|omega| must be <= pi, got {self.omega}")


@dataclass(frozen=True)
class Weights:
    """Objective weights, in order goal, speed, accel, omega, jerk, heading, potential."""

    w_g: float = 1.0
    w_v: float = 1.0
    w_a: float = 1.0
    w_omega: float = 1.0
    w_j: float = 1.0
    w_h: float = 1.0
    w_p: float = 1.0

    def __post_init__(self):
        vals = astuple(self)
        if any(not math.isfinite(w) or w < 0 for w in vals):
            raise DomainError(f"weights must be finite and >= 0, got {vals}")
        if not any(w > 0 for w in vals):
            raise DomainError("at least one weight must be positive")

    def as_array(self):
        return np.array(astuple(self), dtype=float)

    def scaled(self, c):
        return Weights(*(c * w for w in astuple(self)))

    @classmethod
    def from_ratio(cls, ratio):
        if len(ratio) != 7:
            raise DomainError(f"a weight ratio has 7 entries, got {len(ratio)}")
        return cls(*map(float, ratio))

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class Limits:
    """Kinematic limits and the reference speed (urban defaults)."""

    v_max: float = 40.0
    omega_max: float = math.pi / 6
    a_max: float = 3.0
    j_max: float = 0.6
    d_min: float = 5.0
    v_r: float = 12.0

    def __post_init__(self):
        for f in fields(self):
            val = getattr(self, f.name)
            if not (math.isfinite(val) and val > 0):
                raise DomainError(f"limits.{f.name} must be positive, got {val}")
        if self.v_r > self.v_max:
            raise DomainError(f"limits.v_r ({self.v_r}) exceeds limits.v_max ({self.v_max})")

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def dynamics(z, u):
    """Unicycle state derivative ``[v cos th, v sin th, omega, a]``."""
    return np.array([z.v * math.cos(z.theta), z.v * math.sin(z.theta), u.omega, u.a])


def k_distance(x_tgt, y_tgt, x, y):
    """Signed-sum separation ``|x_tgt - x + y_tgt - y|``."""
    return np.abs(x_tgt - x + y_tgt - y)


def heading_error(theta, lane, s):
    return wrap_angle(theta - lane_heading(lane, s))


def potential_field(x_tgt, y_tgt, x, y, p_eps=1.0):
    """Inverse-square repulsion ``1 / (dx^2 + dy^2 + p_eps)``."""
    if not p_eps > 0:
        raise DomainError(f"p_eps must be positive, got {p_eps}")
    dx, dy = x_tgt - x, y_tgt - y
    return 1.0 / (dx * dx + dy * dy + p_eps)


def road_constraint(p, lane, bounds):
    """``|offset| - (half_width - margin)``; feasible when <= 0."""
    return abs(lateral_offset(lane, p)) - bounds.usable


def limit_residuals(z, u, jerk, lim):
    """Residuals of the speed, turn-rate, acceleration and jerk bounds."""
    return np.array(
        [
            abs(z.v) - lim.v_max,
            abs(u.omega) - lim.omega_max,
            abs(u.a) - lim.a_max,
            abs(jerk) - lim.j_max,
        ]
    )


def _stage_terms(px, py, th, v, a, om, jerk, wx, wy, th_lane, xt, yt, w, v_r, p_eps):
    ex, ey = px - wx, py - wy
    hd = wrap_angle(th - th_lane)
    P = potential_field(xt, yt, px, py, p_eps)
    value = (
        w[0] * (ex * ex + ey * ey)
        + w[1] * (v_r - v) ** 2
        + w[2] * a * a
        + w[3] * om * om
        + w[4] * jerk * jerk
        + w[5] * hd * hd
        + w[6] * P
    )
    grad = np.array(
        [
            2 * w[0] * ex + 2 * w[6] * (xt - px) * P * P,
            2 * w[0] * ey + 2 * w[6] * (yt - py) * P * P,
            2 * w[5] * hd,
            -2 * w[1] * (v_r - v),
            2 * w[2] * a,
            2 * w[3] * om,
            2 * w[4] * jerk,
        ]
    )
    return value, grad


def stage_cost(z, u, jerk, wp, tgt, w, v_r, lane, s, p_eps=1.0):
    """Weighted running cost at one instant.

    ``wp`` is the waypoint, ``tgt`` the target's planar position and ``s``
    the lane station whose tangent defines the heading error.
    """
    value, _ = _stage_terms(
        z.x, z.y, z.theta, z.v, u.a, u.omega, jerk,
        wp.x, wp.y, lane_heading(lane, s), tgt[0], tgt[1],
        w.as_array(), v_r, p_eps,
    )  # fmt: skip
    return float(value)


def stage_cost_gradient(z, u, jerk, wp, tgt, w, v_r, lane, s, p_eps=1.0):
    """Gradient of :func:`stage_cost` w.r.t. ``(x, y, theta, v, a, omega, jerk)``."""
    _, grad = _stage_terms(
        z.x, z.y, z.theta, z.v, u.a, u.omega, jerk,
        wp.x, wp.y, lane_heading(lane, s), tgt[0], tgt[1],
        w.as_array(), v_r, p_eps,
    )  # fmt: skip
    return grad
