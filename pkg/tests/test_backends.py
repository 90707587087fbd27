import json
import os
import pathlib
import subprocess
import sys

import numpy as np
import pytest

from ccplan import _kernels as K

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "benchmarks"))
from bench_kernels import _flat, make_inputs  # noqa: E402

needs_numba = pytest.mark.skipif(not K.NUMBA_AVAILABLE, reason="numba not installed")


@needs_numba
@pytest.mark.parametrize("m", [5, 60, 211])
@pytest.mark.parametrize("name", ["objective", "defects", "defect_jac", "spline_eval", "spline_project",
                                  "lbfgs_backward", "lbfgs_forward"])  # fmt: skip
def test_kernels_agree(name, m):
    f_np, f_nb, args = make_inputs(m, seed=m)[name]
    a, b = _flat(f_np(*args)), _flat(f_nb(*args))
    np.testing.assert_allclose(b, a, rtol=1e-10, atol=1e-10)


def test_defect_jacobian_pattern_matches_values():
    m = 9
    _, _, (z, h, implicit) = make_inputs(m)["defect_jac"]
    rows, cols = K.defect_pattern(m)
    vals = K.defect_jac_np(z, h, implicit)
    assert rows.shape == cols.shape == vals.shape
    assert rows.max() == 4 * (m - 1) - 1 and cols.max() == 6 * m - 1


_SOLVE = """
import json, sys
from ccplan import _kernels
from ccplan.scenario import make_nominal_scenario
from ccplan.solve import initial_guess, solve
from ccplan.transcribe import TimeGrid, build_continuous_nlp
sc = make_nominal_scenario()
grid = TimeGrid(50.0, 30)
rep = solve(build_continuous_nlp(sc, grid), initial_guess(sc, grid))
json.dump({"backend": _kernels.BACKEND, "status": rep.status.value, "x": rep.x.tolist()}, sys.stdout)
"""


def _solve_in_subprocess(flag):
    env = dict(os.environ, CCPLAN_NUMBA=flag)
    res = subprocess.run([sys.executable, "-c", _SOLVE], env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout)


def test_numpy_fallback_solves_like_default():
    plain = _solve_in_subprocess("0")
    assert plain["backend"] == "numpy" and plain["status"] == "Converged"
    if not K.NUMBA_AVAILABLE:
        pytest.skip("numba not installed")
    fast = _solve_in_subprocess("1")
    assert fast["backend"] == "numba" and fast["status"] == "Converged"
    np.testing.assert_allclose(fast["x"], plain["x"], atol=1e-6)
