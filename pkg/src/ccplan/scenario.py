"""Scenarios: problem instances, seeded generators and noisy measurements.

A :class:`Scenario` bundles the lane, road bounds, kinematic limits,
objective weights, the Gaussian target model, chance parameters, the ego's
initial state, the horizon and the potential-field softening constant.

Generators are pure functions of their seeds.  Targets drive along the lane
center with a piecewise-constant acceleration profile; their mean positions
are stored on a 0.25 s grid.
"""

from dataclasses import dataclass, field
import json
import math

import numpy as np

from .chance import ChanceMode, ChanceParams, TargetModel
from .errors import DomainError, GeometryError, PlannerError, ScenarioError, ShapeError
from .geometry import CenterLane, LaneKind, RoadBounds
from .vehicle import EgoState, Limits, Weights

TARGET_DT = 0.25
URBAN_T = 50.0
HIGHSPEED_T = 100.0
HIGHSPEED_V_R = (22.0, 36.0)
HIGHSPEED_OMEGA = (math.pi / 6, math.pi / 4, math.pi / 2)
_ORIGIN = (10.0, 10.0)
_CORRIDOR_SAMPLES = 200


@dataclass(frozen=True, eq=False)
class Scenario:
    lane: CenterLane
    bounds: RoadBounds
    limits: Limits
    weights: Weights
    target: TargetModel
    chance: ChanceParams
    z_init: EgoState
    horizon_T: float
    p_eps: float = 1.0
    name: str = field(default="", compare=False)

    def __post_init__(self):
        self.validate()

    @property
    def chance_mode(self):
        return self.chance.mode

    def validate(self):
        """Check corridor containment of the ego start and the target means."""
        if not self.horizon_T > 0:
            raise ScenarioError("horizon_T", f"must be positive, got {self.horizon_T}")
        if not self.p_eps > 0:
            raise ScenarioError("p_eps", f"must be positive, got {self.p_eps}")
        if self.chance.d_min != self.limits.d_min:
            raise ScenarioError("chance", "d_min must equal limits.d_min")
        tol = 1e-9
        try:
            _, off, _, _ = self.lane.project(self.z_init.x, self.z_init.y)
        except GeometryError as exc:
            raise ScenarioError("z_init", str(exc)) from exc
        if abs(off[0]) > self.bounds.usable + tol:
            raise ScenarioError("z_init", f"lies {off[0]:.3f} m off the lane, outside the corridor")
        t = np.linspace(0.0, self.horizon_T, _CORRIDOR_SAMPLES)
        mx, my = self.target.mean_at(t)
        try:
            _, off, _, _ = self.lane.project(mx, my)
        except GeometryError as exc:
            raise ScenarioError("target", str(exc)) from exc
        bad = np.flatnonzero(np.abs(off) > self.bounds.half_width + tol)
        if bad.size:
            raise ScenarioError(f"target.mu_x[{bad[0]}]", "target mean leaves the road corridor")

    def with_chance(self, **changes):
        cp = ChanceParams(**{**_chance_kwargs(self.chance), **changes})
        return _replace(self, chance=cp)

    def with_sigma(self, sigma_x, sigma_y=None):
        sigma_y = sigma_x if sigma_y is None else sigma_y
        tm = TargetModel(self.target.mu_x, self.target.mu_y, sigma_x, sigma_y, self.horizon_T)
        return _replace(self, target=tm)

    def with_weights(self, weights):
        return _replace(self, weights=weights)


def _replace(sc, **changes):
    kw = {k: getattr(sc, k) for k in ("lane", "bounds", "limits", "weights", "target", "chance", "z_init", "horizon_T", "p_eps", "name")}
    kw.update(changes)
    return Scenario(**kw)


def _chance_kwargs(cp):
    return {"alpha": cp.alpha, "d_min": cp.d_min, "mode": cp.mode}


@dataclass(frozen=True, eq=False)
class Realization:
    """Measured target positions at the grid nodes."""

    scenario_id: str
    seed: int
    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 2 or s.shape[1] != 2:
            raise ShapeError(f"samples must be an (M, 2) array, got {s.shape}")
        object.__setattr__(self, "samples", s)


def realize_measurements(sc, grid, seed):
    """Target positions ``mu + sigma * xi`` at the nodes of ``grid``, ``xi ~ N(0, I)``."""
    mx, my = sc.target.mean_at(grid.times)
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((grid.nodes_M, 2))
    samples = np.column_stack((mx + sc.target.sigma_x * xi[:, 0], my + sc.target.sigma_y * xi[:, 1]))
    return Realization(sc.name, int(seed), samples)


# -- JSON ---------------------------------------------------------------------


def to_dict(sc):
    return {
        "lane": sc.lane.to_dict(),
        "bounds": {"half_width": sc.bounds.half_width, "safety_margin": sc.bounds.safety_margin},
        "limits": {k: sc.limits.to_dict()[k] for k in ("v_r", "v_max", "omega_max", "a_max", "j_max", "d_min")},
        "weights": sc.weights.to_dict(),
        "target": {
            "mu_x": sc.target.mu_x.tolist(),
            "mu_y": sc.target.mu_y.tolist(),
            "sigma_x": sc.target.sigma_x,
            "sigma_y": sc.target.sigma_y,
        },
        "chance": {"alpha": sc.chance.alpha, "mode": sc.chance.mode.value},
        "z_init": sc.z_init.as_array().tolist(),
        "horizon_T": sc.horizon_T,
        "p_eps": sc.p_eps,
    }


def _floatify(obj):
    if isinstance(obj, dict):
        return {k: _floatify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_floatify(v) for v in obj]
    if isinstance(obj, (bool, str)) or obj is None:
        return obj
    return float(obj)


def to_json(sc):
    """Canonical JSON: fixed key order, compact separators, shortest round-trip floats."""
    return json.dumps(_floatify(to_dict(sc)), separators=(",", ":"), allow_nan=False)


def _get(d, key, path):
    if not isinstance(d, dict):
        raise ScenarioError(path, "expected an object")
    if key not in d:
        raise ScenarioError(f"{path}.{key}" if path else key, "missing field")
    return d[key]


def _num(d, key, path):
    val = _get(d, key, path)
    full = f"{path}.{key}" if path else key
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ScenarioError(full, f"expected a number, got {val!r}")
    if not math.isfinite(val):
        raise ScenarioError(full, "must be finite")
    return float(val)


def _build(path, ctor, *args, **kwargs):
    """Run a constructor, re-raising domain failures under a JSON path."""
    try:
        return ctor(*args, **kwargs)
    except ScenarioError:
        raise
    except (PlannerError, ValueError, TypeError, KeyError) as exc:
        msg = str(exc)
        sub = msg.split(" ", 1)[0]
        # errors that already name a sub-field (e.g. "limits.v_r ...") keep it
        if sub.startswith(path + ".") or sub.startswith(path.split(".")[0] + "."):
            raise ScenarioError(sub, msg.split(" ", 1)[1] if " " in msg else msg) from exc
        raise ScenarioError(path, msg) from exc


def from_dict(d, name=""):
    """Validate and build a scenario; errors carry the offending JSON path."""
    if not isinstance(d, dict):
        raise ScenarioError("$", "scenario must be a JSON object")
    lane_d = _get(d, "lane", "")
    kind = _get(lane_d, "kind", "lane")
    if kind not in {k.value for k in LaneKind}:
        raise ScenarioError("lane.kind", f"unknown lane kind {kind!r}")
    params = _get(lane_d, "params", "lane")
    lane = _build("lane.params", CenterLane, LaneKind(kind), params)

    bd = _get(d, "bounds", "")
    bounds = _build("bounds", RoadBounds, _num(bd, "half_width", "bounds"), _num(bd, "safety_margin", "bounds"))

    ld = _get(d, "limits", "")
    lim_kw = {k: _num(ld, k, "limits") for k in ("v_r", "v_max", "omega_max", "a_max", "j_max", "d_min")}
    limits = _build("limits", Limits, **lim_kw)

    wd = _get(d, "weights", "")
    w_kw = {k: _num(wd, k, "weights") for k in ("w_g", "w_v", "w_a", "w_omega", "w_j", "w_h", "w_p")}
    weights = _build("weights", Weights, **w_kw)

    horizon = _num(d, "horizon_T", "")
    p_eps = _num(d, "p_eps", "")

    td = _get(d, "target", "")
    mu = []
    for key in ("mu_x", "mu_y"):
        arr = _get(td, key, "target")
        if not isinstance(arr, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in arr):
            raise ScenarioError(f"target.{key}", "expected a list of numbers")
        mu.append(arr)
    target = _build(
        "target", TargetModel, np.array(mu[0], dtype=float), np.array(mu[1], dtype=float),
        _num(td, "sigma_x", "target"), _num(td, "sigma_y", "target"), horizon,
    )  # fmt: skip

    cd = _get(d, "chance", "")
    mode = _get(cd, "mode", "chance")
    if mode not in {m.value for m in ChanceMode}:
        raise ScenarioError("chance.mode", f"unknown mode {mode!r}")
    chance = _build("chance", ChanceParams, _num(cd, "alpha", "chance"), limits.d_min, ChanceMode(mode))

    z = _get(d, "z_init", "")
    if not isinstance(z, list) or len(z) != 4:
        raise ScenarioError("z_init", "expected [x, y, theta, v]")
    for k, v in enumerate(z):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ScenarioError(f"z_init[{k}]", f"expected a number, got {v!r}")
    z_init = _build("z_init", EgoState, *map(float, z))

    return Scenario(lane, bounds, limits, weights, target, chance, z_init, horizon, p_eps, name)


def from_json(text, name=""):
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError("$", f"invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    return from_dict(d, name)


def save(sc, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(to_json(sc))
        fh.write("\n")


def load(path):
    with open(path, encoding="utf-8") as fh:
        return from_json(fh.read(), name=str(path))


# -- generators -----------------------------------------------------------------


def _speed_profile(t, v0, events):
    """Speeds and stations under piecewise-constant acceleration.

    ``events`` holds ``(t_start, v_end, accel_magnitude)`` speed changes.
    """
    v = np.full_like(t, v0, dtype=float)
    for t0, v1, acc in events:
        vs = v[np.searchsorted(t, t0)] if t0 <= t[-1] else v[-1]
        dur = abs(v1 - vs) / acc
        ramp = np.clip((t - t0) / dur, 0.0, 1.0) if dur > 0 else (t >= t0).astype(float)
        after = t >= t0
        v = np.where(after, vs + (v1 - vs) * ramp, v)
    dt = np.diff(t)
    s = np.concatenate(([0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * dt)))
    return v, s


def _target_on_lane(lane, gap, v0, events, horizon):
    t = np.arange(0.0, horizon + 0.5 * TARGET_DT, TARGET_DT)
    t[-1] = horizon
    _, s = _speed_profile(t, v0, events)
    mx, my = lane.points(gap + s)
    return mx, my


def _ego_at_origin(lane, v0):
    x, y = lane.points(0.0)
    return EgoState(float(x), float(y), float(lane.headings(0.0)), float(v0))


def _round(v, nd=6):
    return float(round(float(v), nd))


def _urban_lane(rng, length):
    kind = int(rng.integers(3))
    if kind == 0:
        heading = _round(rng.uniform(0.0, math.pi / 4))
        return CenterLane.straight(_ORIGIN, heading, length), "straight"
    if kind == 1:
        radius = rng.uniform(50.0, 200.0)
        sweep = rng.uniform(math.pi / 12, math.pi / 3)
        left = bool(rng.integers(2))
        lead = rng.uniform(50.0, 200.0)
        if left:
            base = rng.uniform(0.0, math.pi / 2 - sweep)
        else:
            base = rng.uniform(sweep, math.pi / 2)
        sgn = 1.0 if left else -1.0
        arc_len = radius * sweep

        def heading(s):
            return base + sgn * np.clip(s - lead, 0.0, arc_len) / radius

        return CenterLane.from_heading_profile(heading, length, _ORIGIN), "arc"
    amp = rng.uniform(0.1, 0.3)
    wavelength = rng.uniform(300.0, 800.0)
    phase = rng.uniform(0.0, 2 * math.pi)

    def heading(s):
        return math.pi / 4 + amp * np.sin(2 * math.pi * s / wavelength + phase)

    return CenterLane.from_heading_profile(heading, length, _ORIGIN), "spline"


def _urban_limits(v_r=12.0):
    return Limits(v_max=40.0, omega_max=math.pi / 6, a_max=3.0, j_max=0.6, d_min=5.0, v_r=v_r)


def _assemble(name, lane, limits, target_xy, z_init, horizon, sigma=1.0):
    mx, my = target_xy
    tm = TargetModel(np.round(mx, 9), np.round(my, 9), sigma, sigma, horizon)
    chance = ChanceParams(0.95, limits.d_min, ChanceMode.SEPARATION)
    return Scenario(lane, RoadBounds(), limits, Weights(), tm, chance, z_init, horizon, 1.0, name)


def make_urban_scenario(variant_seed, horizon_T=URBAN_T):
    """Urban scenario: straight, arc-like or gently curving lane, lead target."""
    rng = np.random.default_rng([0x5EED, int(variant_seed)])
    limits = _urban_limits()
    length = limits.v_max * horizon_T + 200.0
    lane, kind = _urban_lane(rng, length)
    gap = _round(rng.uniform(10.0, 40.0))
    v0 = _round(rng.uniform(8.0, 14.0))
    v1 = _round(rng.uniform(8.0, 14.0))
    t_change = rng.uniform(0.2, 0.6) * horizon_T
    acc = rng.uniform(0.3, 1.0)
    target = _target_on_lane(lane, gap, v0, [(t_change, v1, acc)], horizon_T)
    z0 = _ego_at_origin(lane, v0)
    return _assemble(f"urban-{variant_seed}-{kind}", lane, limits, target, z0, horizon_T)


def make_risky_scenario(seed=0, horizon_T=URBAN_T):
    """Urban lane, ``v_r = 14``, 12 m gap, target braking 10 -> 6 m/s mid-horizon."""
    rng = np.random.default_rng([0x0815, int(seed)])
    limits = _urban_limits(v_r=14.0)
    length = limits.v_max * horizon_T + 200.0
    lane, kind = _urban_lane(rng, length)
    decel = 0.5
    t0 = 0.5 * horizon_T - 0.5 * (10.0 - 6.0) / decel
    target = _target_on_lane(lane, 12.0, 10.0, [(t0, 6.0, decel)], horizon_T)
    z0 = _ego_at_origin(lane, 10.0)
    return _assemble(f"risky-{seed}-{kind}", lane, limits, target, z0, horizon_T)


def make_nominal_scenario(horizon_T=URBAN_T):
    """Benign reference case: straight lane, target 25 m ahead at 12 m/s."""
    limits = _urban_limits()
    lane = CenterLane.straight(_ORIGIN, math.pi / 8, limits.v_max * horizon_T + 200.0)
    target = _target_on_lane(lane, 25.0, 12.0, [], horizon_T)
    return _assemble("nominal", lane, limits, target, _ego_at_origin(lane, 12.0), horizon_T)


def make_mixed_scenario(seed, horizon_T=URBAN_T):
    """Mixed-risk corpus member: even seeds urban, odd seeds risky."""
    if seed % 2 == 0:
        return make_urban_scenario(seed, horizon_T)
    return make_risky_scenario(seed, horizon_T)


def make_highspeed_scenario(v_r, omega_max, seed, horizon_T=HIGHSPEED_T):
    """Long-horizon road/highway scenario; lanes get curvier as ``omega_max`` grows."""
    if not any(math.isclose(v_r, c) for c in HIGHSPEED_V_R):
        raise DomainError(f"v_r must be one of {HIGHSPEED_V_R}, got {v_r}")
    if not any(math.isclose(omega_max, c) for c in HIGHSPEED_OMEGA):
        raise DomainError(f"omega_max must be one of pi/6, pi/4, pi/2, got {omega_max}")
    rng = np.random.default_rng([0xFA57, int(round(v_r)), int(round(math.pi / omega_max)), int(seed)])
    limits = Limits(v_max=40.0, omega_max=omega_max, a_max=3.0, j_max=0.6, d_min=5.0, v_r=float(v_r))
    length = limits.v_max * horizon_T + 400.0
    kappa = rng.uniform(0.25, 0.5) * omega_max / v_r
    wavelength = rng.uniform(4.0, 12.0) * v_r
    amp = min(0.6, kappa * wavelength / (2 * math.pi))
    phase = rng.uniform(0.0, 2 * math.pi)

    def heading(s):
        return math.pi / 4 + amp * np.sin(2 * math.pi * s / wavelength + phase)

    lane = CenterLane.from_heading_profile(heading, length, _ORIGIN)
    v0 = _round(rng.uniform(0.8, 1.2) * v_r)
    v1 = _round(rng.uniform(0.8, 1.2) * v_r)
    gap = _round(rng.uniform(1.5, 3.0) * v_r)
    t_change = rng.uniform(0.2, 0.6) * horizon_T
    target = _target_on_lane(lane, gap, v0, [(t_change, v1, rng.uniform(0.3, 1.0))], horizon_T)
    z0 = _ego_at_origin(lane, min(v0, 0.95 * limits.v_max))
    name = f"highspeed-{int(v_r)}-pi/{int(round(math.pi / omega_max))}-{seed}"
    return _assemble(name, lane, limits, target, z0, horizon_T)


GENERATORS = {
    "urban": make_urban_scenario,
    "risky": make_risky_scenario,
    "highspeed": make_highspeed_scenario,
    "nominal": make_nominal_scenario,
    "mixed": make_mixed_scenario,
}
