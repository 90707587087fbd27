"""Road geometry: center lane curves, road bounds and lane-derived waypoints.

Three lane kinds are supported, all parameterized by arc length ``s``:

* ``straight``: ``origin``, ``heading`` and ``length``;
* ``arc``: ``origin``, ``heading``, signed ``radius`` (positive turns left)
  and ``length``;
* ``spline``: ``knots``, a list of ``[s, x, y]`` triples sampled from an
  arc-length parameterized curve and interpolated with cubic splines.

Angles are wrapped to ``(-pi, pi]``.
"""

from dataclasses import dataclass, field
from enum import Enum
import math

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree

from . import _kernels
from .errors import DomainError, GeometryError

MIN_RADIUS = 10.0
_S_TOL = 1e-9


def wrap_angle(a):
    """Wrap angles to ``(-pi, pi]``; works on scalars and arrays."""
    out = np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2.0 * np.pi)
    if np.ndim(out) == 0:
        return float(out)
    return out


class LaneKind(str, Enum):
    STRAIGHT = "straight"
    ARC = "arc"
    SPLINE = "spline"


@dataclass(frozen=True, eq=False)
class CenterLane:
    """Center line of the road.

    Build with :meth:`straight`, :meth:`arc` or :meth:`spline` rather than
    the raw constructor.  Instances are immutable; derived tables needed by
    the spline kind are computed once at construction.
    """

    kind: LaneKind
    params: dict
    length: float = field(init=False)
    _cache: dict = field(init=False, repr=False)

    def __post_init__(self):
        kind = LaneKind(self.kind)
        object.__setattr__(self, "kind", kind)
        p = dict(self.params)
        cache = {}
        if kind is LaneKind.STRAIGHT:
            ox, oy = map(float, p["origin"])
            h = float(p["heading"])
            length = float(p["length"])
            p = {"origin": [ox, oy], "heading": h, "length": length}
            cache["o"] = np.array([ox, oy])
            cache["t"] = np.array([math.cos(h), math.sin(h)])
        elif kind is LaneKind.ARC:
            ox, oy = map(float, p["origin"])
            h = float(p["heading"])
            r = float(p["radius"])
            length = float(p["length"])
            if not abs(r) >= MIN_RADIUS:
                raise DomainError(f"arc radius magnitude must be >= {MIN_RADIUS} m, got {r}")
            p = {"origin": [ox, oy], "heading": h, "radius": r, "length": length}
            cache["c"] = np.array([ox - r * math.sin(h), oy + r * math.cos(h)])
        elif kind is LaneKind.SPLINE:
            knots = np.asarray(p["knots"], dtype=float)
            if knots.ndim != 2 or knots.shape[1] != 3 or knots.shape[0] < 4:
                raise DomainError("spline knots must be an (n >= 4, 3) array of [s, x, y]")
            s = knots[:, 0]
            if s[0] != 0.0 or np.any(np.diff(s) <= 0):
                raise DomainError("spline knot stations must start at 0 and increase strictly")
            p = {"knots": knots.tolist()}
            length = float(s[-1])
            spx = CubicSpline(s, knots[:, 1])
            spy = CubicSpline(s, knots[:, 2])
            cache["breaks"] = np.ascontiguousarray(spx.x)
            cache["cx"] = np.ascontiguousarray(spx.c)
            cache["cy"] = np.ascontiguousarray(spy.c)
            # dense table seeds the nearest-point search
            n_dense = max(int(math.ceil(length / 1.0)), 8) + 1
            sd = np.linspace(0.0, length, n_dense)
            xd, yd, dxd, dyd, ddx, ddy = _kernels.spline_eval(
                cache["breaks"], cache["cx"], cache["cy"], sd
            )
            cache["s_dense"] = sd
            cache["tree"] = cKDTree(np.column_stack((xd, yd)))
            speed = np.hypot(dxd, dyd)
            kappa = np.abs(dxd * ddy - dyd * ddx) / speed**3
            cache["kappa_max"] = float(kappa.max())
            if cache["kappa_max"] > 1.0 / MIN_RADIUS + 1e-9:
                raise DomainError(
                    f"spline curvature radius below {MIN_RADIUS} m "
                    f"(max curvature {cache['kappa_max']:.4g} 1/m)"
                )
        if not length > 0:
            raise DomainError(f"lane length must be positive, got {length}")
        object.__setattr__(self, "params", p)
        object.__setattr__(self, "length", length)
        object.__setattr__(self, "_cache", cache)

    # -- constructors -----------------------------------------------------

    @classmethod
    def straight(cls, origin=(0.0, 0.0), heading=0.0, length=1000.0):
        return cls(LaneKind.STRAIGHT, {"origin": list(origin), "heading": heading, "length": length})

    @classmethod
    def arc(cls, radius, origin=(0.0, 0.0), heading=0.0, length=None):
        if length is None:
            length = math.pi * abs(radius)
        return cls(
            LaneKind.ARC,
            {"origin": list(origin), "heading": heading, "radius": radius, "length": length},
        )

    @classmethod
    def spline(cls, knots):
        return cls(LaneKind.SPLINE, {"knots": knots})

    @classmethod
    def from_heading_profile(cls, heading_fn, length, origin=(0.0, 0.0), spacing=5.0):
        """Spline lane whose tangent angle at arc length ``s`` is ``heading_fn(s)``.

        The curve is integrated on a fine grid so the knots are arc-length
        parameterized to well below a millimetre.
        """
        n_fine = int(math.ceil(length / 0.25)) + 1
        sf = np.linspace(0.0, length, n_fine)
        th = heading_fn(sf)
        ds = np.diff(sf)
        thm = heading_fn(0.5 * (sf[1:] + sf[:-1]))
        # Simpson-like midpoint rule per fine step
        cx = (np.cos(th[:-1]) + 4.0 * np.cos(thm) + np.cos(th[1:])) / 6.0
        cy = (np.sin(th[:-1]) + 4.0 * np.sin(thm) + np.sin(th[1:])) / 6.0
        x = origin[0] + np.concatenate(([0.0], np.cumsum(cx * ds)))
        y = origin[1] + np.concatenate(([0.0], np.cumsum(cy * ds)))
        n_knots = int(math.ceil(length / spacing)) + 1
        sk = np.linspace(0.0, length, n_knots)
        knots = np.column_stack((sk, np.interp(sk, sf, x), np.interp(sk, sf, y)))
        # rounding keeps the JSON form compact
        return cls.spline(np.round(knots, 9))

    # -- serialization ----------------------------------------------------

    def to_dict(self):
        return {"kind": self.kind.value, "params": self.params}

    @classmethod
    def from_dict(cls, d):
        return cls(LaneKind(d["kind"]), d["params"])

    # -- queries ----------------------------------------------------------

    def _check_s(self, s):
        s_arr = np.asarray(s, dtype=float)
        if np.any(~np.isfinite(s_arr)) or np.any(s_arr < -_S_TOL) or np.any(s_arr > self.length + _S_TOL):
            raise DomainError(f"arc length must lie in [0, {self.length:g}] m, got {s}")
        return np.clip(s_arr, 0.0, self.length)

    def _point_heading(self, s):
        c = self._cache
        if self.kind is LaneKind.STRAIGHT:
            o, t = c["o"], c["t"]
            return o[0] + s * t[0], o[1] + s * t[1], np.full_like(s, self.params["heading"])
        if self.kind is LaneKind.ARC:
            r = self.params["radius"]
            phi = self.params["heading"] + s / r
            ctr = c["c"]
            return ctr[0] + r * np.sin(phi), ctr[1] - r * np.cos(phi), phi
        x, y, dx, dy, _, _ = _kernels.spline_eval(c["breaks"], c["cx"], c["cy"], np.atleast_1d(s))
        x, y, th = x.reshape(s.shape), y.reshape(s.shape), np.arctan2(dy, dx).reshape(s.shape)
        return x, y, th

    def points(self, s):
        """Vectorized :func:`lane_point`: arrays ``(x, y)``."""
        s = self._check_s(s)
        x, y, _ = self._point_heading(s)
        return x, y

    def headings(self, s):
        """Vectorized :func:`lane_heading`."""
        s = self._check_s(s)
        return wrap_angle(self._point_heading(s)[2])

    def project(self, px, py):
        """Nearest-point projection of planar points onto the lane.

        Returns ``(s, offset, nx, ny)``: the station, the signed lateral offset
        (positive to the left of travel) and the unit left normal, which is
        also the gradient of the offset with respect to the point.  Points
        projecting beyond either end are measured against the tangent line
        extended from that end.
        """
        px = np.atleast_1d(np.asarray(px, dtype=float))
        py = np.atleast_1d(np.asarray(py, dtype=float))
        c = self._cache
        if self.kind is LaneKind.STRAIGHT:
            o, t = c["o"], c["t"]
            dx, dy = px - o[0], py - o[1]
            s = dx * t[0] + dy * t[1]
            nx = np.full_like(px, -t[1])
            ny = np.full_like(px, t[0])
            return s, dx * nx + dy * ny, nx, ny
        if self.kind is LaneKind.ARC:
            r = self.params["radius"]
            ctr = c["c"]
            dx, dy = px - ctr[0], py - ctr[1]
            d = np.hypot(dx, dy)
            off = math.copysign(1.0, r) * (abs(r) - d)
            if np.any(d < 1e-9) or np.any(np.abs(off) >= abs(r)):
                raise GeometryError("ambiguous projection: point at or beyond the arc center")
            sign = math.copysign(1.0, r)
            nx, ny = -sign * dx / d, -sign * dy / d
            # polar angle of the radial vector relates to heading by phi = angle + pi/2 (left)
            ang = np.arctan2(dx, -dy) if r > 0 else np.arctan2(-dx, dy)
            s = r * wrap_angle(ang - self.params["heading"])
            return s, off, nx, ny
        _, idx = c["tree"].query(np.column_stack((px, py)))
        s0 = c["s_dense"][idx]
        s = _kernels.spline_project(c["breaks"], c["cx"], c["cy"], px, py, s0)
        x, y, dx, dy, ddx, ddy = _kernels.spline_eval(c["breaks"], c["cx"], c["cy"], s)
        sp = np.hypot(dx, dy)
        tx, ty = dx / sp, dy / sp
        nx, ny = -ty, tx
        ex, ey = px - x, py - y
        off = ex * nx + ey * ny
        kappa = (dx * ddy - dy * ddx) / sp**3
        if np.any(np.abs(off * kappa) >= 1.0):
            raise GeometryError("ambiguous projection: offset exceeds local radius of curvature")
        along = ex * tx + ey * ty
        s = s + along  # non-zero only beyond the lane ends
        return s, off, nx, ny


@dataclass(frozen=True)
class RoadBounds:
    """Constant-width corridor around the center lane."""

    half_width: float = 3.5
    safety_margin: float = 0.5

    def __post_init__(self):
        if not self.half_width > 0:
            raise DomainError(f"half_width must be positive, got {self.half_width}")
        if not 0 <= self.safety_margin < self.half_width:
            raise DomainError("safety_margin must satisfy 0 <= margin < half_width")

    @property
    def usable(self):
        return self.half_width - self.safety_margin


@dataclass(frozen=True)
class Waypoint:
    x: float
    y: float
    theta: float
    clamped: bool = False


def lane_point(lane, s):
    """Planar point of ``lane`` at arc length ``s``."""
    x, y = lane.points(s)
    return float(x), float(y)


def lane_heading(lane, s):
    """Tangent angle of ``lane`` at arc length ``s``, wrapped to (-pi, pi]."""
    return float(lane.headings(s))


def lateral_offset(lane, p):
    """Signed perpendicular distance from ``p`` to ``lane`` (left positive)."""
    _, off, _, _ = lane.project(p[0], p[1])
    return float(off[0])


def waypoint_at(lane, t, v_r):
    """Waypoint at time ``t`` for reference speed ``v_r``: station ``v_r * t``.

    Stations past the lane end are clamped to the end and flagged.
    """
    if t < 0:
        raise DomainError(f"time must be >= 0, got {t}")
    if not v_r > 0:
        raise DomainError(f"reference speed must be positive, got {v_r}")
    s = v_r * t
    clamped = s > lane.length
    s = min(s, lane.length)
    x, y = lane_point(lane, s)
    return Waypoint(x, y, lane_heading(lane, s), clamped)


def waypoint_track(lane, times, v_r):
    """Vectorized waypoints: ``(x, y, theta, clamped)`` arrays for node times."""
    s = np.asarray(times, dtype=float) * v_r
    clamped = s > lane.length
    s = np.minimum(s, lane.length)
    x, y = lane.points(s)
    return x, y, lane.headings(s), clamped
