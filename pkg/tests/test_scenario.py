import json
import math

import numpy as np
import pytest

from ccplan.chance import ChanceMode
from ccplan.errors import DomainError, ScenarioError
from ccplan import scenario as scn
from ccplan.transcribe import TimeGrid


def test_urban_limits():
    for seed in range(5):
        lim = scn.make_urban_scenario(seed).limits
        assert (lim.v_r, lim.d_min, lim.v_max, lim.omega_max, lim.j_max) == (12.0, 5.0, 40.0, math.pi / 6, 0.6)


def test_urban_deterministic_per_seed():
    assert scn.to_json(scn.make_urban_scenario(7)) == scn.to_json(scn.make_urban_scenario(7))
    assert scn.to_json(scn.make_urban_scenario(7)) != scn.to_json(scn.make_urban_scenario(8))


def test_urban_gaps_distinct():
    gaps = set()
    for seed in range(200):
        sc = scn.make_urban_scenario(seed)
        gaps.add(round(math.hypot(sc.target.mu_x[0] - sc.z_init.x, sc.target.mu_y[0] - sc.z_init.y), 6))
    assert len(gaps) >= 195


def test_urban_lane_families_all_occur():
    kinds = {scn.make_urban_scenario(s).name.rsplit("-", 1)[1] for s in range(40)}
    assert len(kinds) == 3


def test_urban_gap_and_speeds_in_range():
    for seed in range(30):
        sc = scn.make_urban_scenario(seed)
        gap = math.hypot(sc.target.mu_x[0] - sc.z_init.x, sc.target.mu_y[0] - sc.z_init.y)
        assert 10.0 - 1e-6 <= gap <= 40.0 + 1e-6
        assert 8.0 <= sc.z_init.v <= 14.0
        dt = scn.TARGET_DT
        v = np.hypot(np.diff(sc.target.mu_x), np.diff(sc.target.mu_y)) / dt
        assert np.all(v[:-1] > 8.0 - 1e-3) and np.all(v[:-1] < 14.0 + 1e-3)


def test_risky_construction():
    sc = scn.make_risky_scenario()
    assert sc.limits.v_r == 14.0
    dt = scn.TARGET_DT
    v = np.hypot(np.diff(sc.target.mu_x), np.diff(sc.target.mu_y)) / dt
    assert v[0] == pytest.approx(10.0, abs=1e-3)
    assert v[-2] == pytest.approx(6.0, abs=1e-3)
    gap = math.hypot(sc.target.mu_x[0] - sc.z_init.x, sc.target.mu_y[0] - sc.z_init.y)
    assert gap == pytest.approx(12.0, abs=1e-6)


def test_risky_deterministic_plan_violates():
    from ccplan.harness import count_violations, solve_model

    sc = scn.make_risky_scenario()
    grid = TimeGrid(50.0, 60)
    real = scn.realize_measurements(sc, grid, 0)
    rep = solve_model(sc, grid, "continuous-deterministic", real)
    mx, my = sc.target.mean_at(grid.times)
    vr = count_violations(rep.trajectory, np.column_stack((mx, my)), sc.limits.d_min)
    assert vr.violation_count >= 1


@pytest.mark.parametrize("v_r", scn.HIGHSPEED_V_R)
@pytest.mark.parametrize("omega", scn.HIGHSPEED_OMEGA)
def test_highspeed_accepts_cells(v_r, omega):
    sc = scn.make_highspeed_scenario(v_r, omega, 0)
    assert sc.horizon_T >= 100.0
    assert sc.limits.v_r == v_r and sc.limits.omega_max == omega
    dt = scn.TARGET_DT
    v = np.hypot(np.diff(sc.target.mu_x), np.diff(sc.target.mu_y)) / dt
    assert np.all(v[:-1] >= 0.8 * v_r - 1e-3) and np.all(v[:-1] <= 1.2 * v_r + 1e-3)


def test_highspeed_rejects_other_values():
    with pytest.raises(DomainError):
        scn.make_highspeed_scenario(50.0, math.pi / 6, 0)
    with pytest.raises(DomainError):
        scn.make_highspeed_scenario(22.0, 1.0, 0)


def test_highspeed_curvier_with_omega():
    def mean_turn(omega):
        out = []
        for seed in range(8):
            lane = scn.make_highspeed_scenario(22.0, omega, seed).lane
            s = np.linspace(0, lane.length, 4000)
            out.append(np.mean(np.abs(np.diff(np.unwrap(lane.headings(s))))) / (s[1] - s[0]))
        return np.mean(out)

    k = [mean_turn(w) for w in scn.HIGHSPEED_OMEGA]
    assert k[0] < k[1] < k[2]


def test_generated_scenarios_valid():
    # construction runs the corridor check; revalidate explicitly for clarity
    for sc in [scn.make_urban_scenario(s) for s in range(10)] + [scn.make_risky_scenario(s) for s in range(5)]:
        sc.validate()
        assert sc.chance_mode is ChanceMode.SEPARATION


def test_realizations():
    sc = scn.make_urban_scenario(1)
    grid = TimeGrid(50.0, 60)
    a = scn.realize_measurements(sc, grid, 5)
    b = scn.realize_measurements(sc, grid, 5)
    np.testing.assert_array_equal(a.samples, b.samples)
    assert a.samples.shape == (60, 2)
    zero = scn.realize_measurements(sc.with_sigma(0.0), grid, 5)
    mx, my = sc.target.mean_at(grid.times)
    np.testing.assert_array_equal(zero.samples, np.column_stack((mx, my)))


def test_realization_mean_within_standard_error():
    sc = scn.make_urban_scenario(1)
    grid = TimeGrid(50.0, 5)
    samples = np.array([scn.realize_measurements(sc, grid, k).samples[2] for k in range(10_000)])
    mx, my = sc.target.mean_at(grid.times[2])
    bound = 3 * 1.0 / math.sqrt(10_000)
    assert abs(samples[:, 0].mean() - mx) <= bound and abs(samples[:, 1].mean() - my) <= bound


def test_json_roundtrip_is_canonical(tmp_path):
    sc = scn.make_highspeed_scenario(36.0, math.pi / 4, 3)
    text = scn.to_json(sc)
    again = scn.from_json(text)
    assert scn.to_json(again) == text
    path = tmp_path / "s.json"
    scn.save(sc, path)
    assert scn.to_json(scn.load(path)) == text
    d = json.loads(text)
    assert list(d) == ["lane", "bounds", "limits", "weights", "target", "chance", "z_init", "horizon_T", "p_eps"]


def _doc():
    return json.loads(scn.to_json(scn.make_urban_scenario(2)))


@pytest.mark.parametrize(
    "mutate, path",
    [
        (lambda d: d["limits"].__setitem__("v_r", 99.0), "limits.v_r"),
        (lambda d: d["limits"].pop("j_max"), "limits.j_max"),
        (lambda d: d["bounds"].__setitem__("half_width", "wide"), "bounds.half_width"),
        (lambda d: d["chance"].__setitem__("mode", "other"), "chance.mode"),
        (lambda d: d["chance"].__setitem__("alpha", 1.5), "chance.alpha"),
        (lambda d: d.__setitem__("z_init", [0, 0, 0]), "z_init"),
        (lambda d: d["z_init"].__setitem__(3, -4.0), "z_init"),
        (lambda d: d["target"].__setitem__("mu_x", d["target"]["mu_x"][:-1]), "target.mu_x"),
        (lambda d: d["lane"].__setitem__("kind", "clothoid"), "lane.kind"),
        (lambda d: d["weights"].__setitem__("w_g", -1), "weights"),
    ],
)
def test_invalid_json_names_path(mutate, path):
    d = _doc()
    mutate(d)
    with pytest.raises(ScenarioError) as err:
        scn.from_dict(d)
    assert err.value.path == path


def test_malformed_json():
    with pytest.raises(ScenarioError) as err:
        scn.from_json("{not json")
    assert err.value.path == "$"


def test_target_outside_corridor_rejected():
    d = _doc()
    d["target"]["mu_y"] = [v + 50.0 for v in d["target"]["mu_y"]]
    with pytest.raises(ScenarioError, match="target"):
        scn.from_dict(d)


def test_with_helpers_keep_validity():
    sc = scn.make_nominal_scenario()
    assert sc.with_chance(alpha=0.9).chance.alpha == 0.9
    assert sc.with_sigma(2.0).target.sigma_y == 2.0
    assert sc.with_weights(sc.weights.scaled(3.0)).weights.w_g == 3.0
