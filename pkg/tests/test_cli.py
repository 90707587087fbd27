import csv
import json
import logging
import math
import subprocess
import sys

import pytest

from ccplan import scenario as scn
from ccplan.cli import main, parse_angle, parse_ratios


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.mark.parametrize("text, value", [("pi/6", math.pi / 6), ("pi/4", math.pi / 4), ("2*pi/3", 2 * math.pi / 3),
                                         ("0.5", 0.5), ("pi", math.pi)])  # fmt: skip
def test_parse_angle(text, value):
    assert parse_angle(text) == value


def test_parse_angle_rejects_garbage():
    import argparse

    with pytest.raises(argparse.ArgumentTypeError):
        parse_angle("pi/zero")


def test_parse_ratios():
    assert parse_ratios("5:1:1:1:1:1:1;1:1:1:1:1:1:1") == ((5.0,) + (1.0,) * 6, (1.0,) * 7)
    assert len(parse_ratios("default")) == 8


def test_gen_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["gen", "urban", "--seed", "7", "--out", str(a)]) == 0
    assert main(["gen", "urban", "--seed", "7", "--out", str(b)]) == 0
    fa, fb = a / "urban_7.json", b / "urban_7.json"
    assert fa.read_bytes() == fb.read_bytes()


def test_gen_risky_stdout(capsys):
    assert main(["gen", "risky"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["limits"]["v_r"] == 14.0


def test_gen_highspeed_symbolic_omega(tmp_path):
    assert main(["gen", "highspeed", "--v-r", "36", "--omega-max", "pi/4", "--out", str(tmp_path)]) == 0
    (path,) = tmp_path.iterdir()
    doc = json.loads(path.read_text())
    assert doc["limits"]["v_r"] == 36.0 and doc["limits"]["omega_max"] == math.pi / 4


def test_gen_highspeed_bad_cell_exits_1():
    assert main(["gen", "highspeed", "--v-r", "30"]) == 1


def test_gen_unknown_family_exits_1():
    assert main(["gen", "suburban"]) == 1


def test_seed_from_environment(monkeypatch, capsys):
    monkeypatch.setenv("PLANNER_SEED", "3")
    main(["gen", "urban"])
    env = capsys.readouterr().out
    main(["gen", "urban", "--seed", "3"])
    assert capsys.readouterr().out == env


def test_plan_nominal(tmp_path):
    out = tmp_path / "plan"
    assert main(["plan", "--gen", "nominal", "--M", "40", "--out", str(out)]) == 0
    rows = _rows(out / "trajectory.csv")
    assert len(rows) == 40 and list(rows[0]) == ["t", "x", "y", "theta", "v", "a", "omega", "jerk"]
    assert rows[-1]["jerk"] == "" and rows[0]["jerk"] != ""
    report = json.loads((out / "report.json").read_text())
    assert report["status"] == "Converged" and report["model"] == "continuous-stochastic"
    assert report["violations"] == 0
    assert len(_rows(out / "margins.csv")) == 40


def test_plan_model_echo(tmp_path):
    rc = main(["plan", "--gen", "nominal", "--M", "30", "--model", "discrete", "--stochastic", "--out", str(tmp_path)])
    assert rc in (0, 2)
    assert json.loads((tmp_path / "report.json").read_text())["model"] == "discrete-stochastic"


def test_plan_from_file_and_bad_json(tmp_path, caplog):
    good = tmp_path / "good.json"
    scn.save(scn.make_nominal_scenario(), good)
    assert main(["plan", "--scenario", str(good), "--M", "30", "--out", str(tmp_path / "o")]) == 0
    doc = json.loads(good.read_text())
    doc["limits"]["v_r"] = doc["limits"]["v_max"] + 10.0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    with caplog.at_level(logging.ERROR):
        assert main(["plan", "--scenario", str(bad), "--out", str(tmp_path / "o2")]) == 1
    assert "limits.v_r" in caplog.text


def test_plan_missing_file_exits_1(tmp_path):
    assert main(["plan", "--scenario", str(tmp_path / "nope.json")]) == 1


def test_plan_requires_a_source():
    assert main(["plan"]) == 1


def test_experiment_exp1_rows(tmp_path):
    out = tmp_path / "e1"
    assert main(["experiment", "exp1", "--n", "2", "--M", "25", "--out", str(out)]) == 0
    rows = _rows(out / "runs.csv")
    assert len(rows) == 4
    assert sorted({r["model"] for r in rows}) == ["continuous-stochastic", "discrete-stochastic"]
    assert json.loads((out / "summary.json").read_text())["experiment"] == "exp1"


def test_experiment_alpha_threshold(tmp_path):
    out = tmp_path / "alpha"
    assert main(["experiment", "alpha", "--alpha", "0.95", "--n", "2", "--M", "25", "--out", str(out)]) == 0
    doc = json.loads((out / "summary.json").read_text())
    assert doc["alpha"]["threshold"] == 0.95 and doc["alpha"]["n_runs"] == 2


def test_experiment_sweep_default_ratio_blocks(tmp_path):
    out = tmp_path / "sweep"
    rc = main(["experiment", "sweep", "--ratios", "default", "--horizons", "10", "--n", "1", "--out", str(out),
               "--no-timing"])  # fmt: skip
    assert rc == 0
    rows = _rows(out / "sweep.csv")
    assert len({r["ratio"] for r in rows}) == 8 and len(rows) == 8


def test_experiment_unknown_exits_1(tmp_path):
    assert main(["experiment", "exp9", "--out", str(tmp_path)]) == 1


def test_experiment_rejects_bad_parallel(tmp_path):
    assert main(["experiment", "exp1", "--parallel", "0", "--out", str(tmp_path)]) == 1


def test_console_script_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "ccplan.cli", "gen", "risky"], capture_output=True, text=True)
    assert res.returncode == 0 and json.loads(res.stdout)["limits"]["v_r"] == 14.0
