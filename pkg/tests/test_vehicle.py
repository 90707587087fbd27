import math

from hypothesis import given, strategies as st
import numpy as np
import pytest

from ccplan.errors import DomainError
from ccplan.geometry import CenterLane, RoadBounds, Waypoint
from ccplan.vehicle import (
    ControlInput,
    EgoState,
    Limits,
    Weights,
    dynamics,
    heading_error,
    k_distance,
    limit_residuals,
    potential_field,
    road_constraint,
    stage_cost,
    stage_cost_gradient,
)
from oracles import central_gradient, wrap

STRAIGHT = CenterLane.straight(length=2000.0)


@pytest.mark.parametrize(
    "z, u, expected",
    [
        ((0, 0, 0, 12), (2, 0.1), (12, 0, 0.1, 2)),
        ((1, 2, math.pi / 2, 3), (0, 0), (0, 3, 0, 0)),
        ((5, 5, math.pi, 4), (1, -0.2), (-4, 0, -0.2, 1)),
    ],
)
def test_dynamics(z, u, expected):
    np.testing.assert_allclose(dynamics(EgoState(*z), ControlInput(*u)), expected, atol=1e-12)


@given(st.floats(-3.0, 3.0), st.floats(0.0, 30.0))
def test_dynamics_periodic_in_heading(theta, v):
    u = ControlInput(0.5, 0.1)
    a = dynamics(EgoState(1.0, 1.0, theta, v), u)
    b = dynamics(EgoState(1.0, 1.0, wrap(theta + 2 * math.pi), v), u)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_k_distance_examples():
    assert k_distance(5, 0, 0, 0) == 5
    assert k_distance(1, 1, 1, 1) == 0
    # arguments are (x_tgt, y_tgt, x, y): |10 - 3 + 4 - 6|
    assert k_distance(10, 4, 3, 6) == 5
    assert k_distance(10, 6, 3, 4) == 9


def test_k_distance_random_tuples():
    rng = np.random.default_rng(0)
    t = rng.uniform(-100, 100, size=(1000, 4))
    direct = np.array([abs(xt - x + yt - y) for xt, yt, x, y in t])
    np.testing.assert_allclose(k_distance(*t.T), direct, rtol=0, atol=1e-12)


def test_heading_error():
    assert heading_error(0.0, STRAIGHT, 5.0) == 0.0
    assert heading_error(0.3, STRAIGHT, 5.0) == pytest.approx(0.3)
    lane = CenterLane.straight(heading=3.1)
    assert heading_error(-3.1, lane, 1.0) == pytest.approx(-6.2 + 2 * math.pi, abs=1e-12)


def test_potential_field():
    assert potential_field(0, 0, 0, 0, 1.0) == 1.0
    assert potential_field(3, 4, 0, 0, 1.0) == pytest.approx(1 / 26)
    assert potential_field(10, 0, 0, 0, 1.0) == pytest.approx(1 / 101)
    with pytest.raises(DomainError):
        potential_field(3, 4, 0, 0, 0.0)


@pytest.mark.parametrize("y, expected", [(0.0, -3.0), (3.0, 0.0), (-4.0, 1.0)])
def test_road_constraint(y, expected):
    assert road_constraint((50.0, y), STRAIGHT, RoadBounds(3.5, 0.5)) == pytest.approx(expected)


def test_limit_residuals():
    lim = Limits()
    r = limit_residuals(EgoState(0, 0, 0, 40.0), ControlInput(0.0, 0.0), 0.7, lim)
    assert r[0] == 0.0
    assert r[1] == pytest.approx(-math.pi / 6)
    assert r[3] == pytest.approx(0.1)


def test_limits_reject_v_r_above_v_max():
    with pytest.raises(DomainError, match="limits.v_r"):
        Limits(v_r=50.0)


def test_types_reject_bad_values():
    with pytest.raises(DomainError):
        EgoState(0, 0, 0, -1.0)
    with pytest.raises(DomainError):
        ControlInput(0.0, 4.0)
    with pytest.raises(DomainError):
        Weights(0, 0, 0, 0, 0, 0, 0)
    with pytest.raises(DomainError):
        Weights(w_g=-1.0)


def _cost(w, z=(0, 0, 0, 10), u=(0, 0), jerk=0.0, wp=(0, 0), tgt=(1e6, 0)):
    return stage_cost(EgoState(*z), ControlInput(*u), jerk, Waypoint(*wp, 0.0), tgt, w, 12.0, STRAIGHT, 0.0)


def test_stage_cost_examples():
    # a far-away target makes the potential negligible but not exactly zero
    zero = Weights(0, 0, 0, 0, 0, 0, 1e-300)
    assert _cost(zero) == pytest.approx(0.0, abs=1e-300)
    assert _cost(Weights(0, 1, 0, 0, 0, 0, 0)) == pytest.approx(4.0)
    assert _cost(Weights(1, 0, 0, 0, 0, 0, 0), z=(0, 0, 0, 12), wp=(3, 4)) == pytest.approx(25.0)


_finite = dict(allow_nan=False, allow_infinity=False)


@given(
    st.tuples(st.floats(0, 50), st.floats(0, 50), st.floats(-3, 3), st.floats(0, 40)),
    st.tuples(st.floats(-3, 3), st.floats(-1, 1)),
    st.floats(-1, 1),
    st.lists(st.floats(0, 5, **_finite), min_size=7, max_size=7),
)
def test_stage_cost_nonnegative(z, u, jerk, w):
    if not any(x > 0 for x in w):
        w[1] = 1.0
    val = stage_cost(EgoState(*z), ControlInput(*u), jerk, Waypoint(10, 10, 0), (30, 20), Weights(*w), 12.0, STRAIGHT, 5.0)
    assert val >= 0.0


def test_stage_cost_gradient_matches_central_differences():
    rng = np.random.default_rng(11)
    lane = CenterLane.straight(heading=0.3, length=2000.0)
    w = Weights(1.3, 0.7, 0.5, 2.0, 0.9, 1.1, 3.0)
    worst = 0.0
    for _ in range(100):
        p = np.concatenate((rng.uniform(5, 60, 2), [rng.uniform(-1, 1), rng.uniform(1, 30)],
                            rng.uniform(-2, 2, 2), [rng.uniform(-1, 1)]))  # fmt: skip
        wp = Waypoint(*rng.uniform(5, 60, 2), 0.3)
        tgt = tuple(p[:2] + rng.uniform(-4, 4, 2))

        def f(q):
            return stage_cost(EgoState(*q[:4]), ControlInput(*q[4:6]), q[6], wp, tgt, w, 12.0, lane, 10.0)

        g = stage_cost_gradient(EgoState(*p[:4]), ControlInput(*p[4:6]), p[6], wp, tgt, w, 12.0, lane, 10.0)
        fd = central_gradient(f, p, 1e-6)
        worst = max(worst, float(np.max(np.abs(g - fd)) / max(1.0, np.max(np.abs(fd)))))
    assert worst <= 1e-5


def test_weights_ratio_and_scaling():
    w = Weights.from_ratio((5, 1, 1, 1, 1, 1, 1))
    assert w.w_g == 5.0 and w.scaled(10.0).w_p == 10.0
    with pytest.raises(DomainError):
        Weights.from_ratio((1, 1))
