import numpy as np
import pytest

from ccplan.errors import DomainError, NumericError, ShapeError
from ccplan.solve import SolveOptions, Status, initial_guess, solve
from ccplan.transcribe import NlpProblem, TimeGrid, build_continuous_nlp


def equality_qp():
    # min x^2 + y^2  s.t.  x + y = 1
    return NlpProblem.from_functions(
        2,
        lambda x: x @ x,
        lambda x: 2 * x,
        eq=lambda x: [x[0] + x[1] - 1.0],
        eq_jac=lambda x: [[1.0, 1.0]],
    )


def bound_qp():
    # min (x - 3)^2  s.t.  x <= 1
    return NlpProblem.from_functions(
        1,
        lambda x: (x[0] - 3.0) ** 2,
        lambda x: [2 * (x[0] - 3.0)],
        ineq=lambda x: [x[0] - 1.0],
        ineq_jac=lambda x: [[1.0]],
    )


def test_equality_qp():
    rep = solve(equality_qp(), np.array([3.0, -1.0]))
    assert rep.status is Status.CONVERGED
    np.testing.assert_allclose(rep.x, [0.5, 0.5], atol=1e-4)
    assert rep.objective == pytest.approx(0.5, abs=1e-4)
    assert rep.multipliers_eq[0] == pytest.approx(-1.0, abs=1e-3)


def test_active_bound_qp():
    rep = solve(bound_qp(), np.array([0.0]))
    assert rep.converged
    assert rep.x[0] == pytest.approx(1.0, abs=1e-4)
    assert rep.objective == pytest.approx(4.0, abs=1e-3)
    assert rep.multipliers_in[0] == pytest.approx(4.0, abs=1e-2)


def test_variable_bounds_are_enforced():
    nlp = NlpProblem.from_functions(2, lambda x: (x[0] + 2) ** 2 + (x[1] - 5) ** 2,
                                    lambda x: np.array([2 * (x[0] + 2), 2 * (x[1] - 5)]),
                                    lb=[0.0, -np.inf], ub=[np.inf, 4.0])  # fmt: skip
    rep = solve(nlp, np.array([1.0, 1.0]))
    assert rep.converged
    np.testing.assert_allclose(rep.x, [0.0, 4.0], atol=1e-4)


def random_qp(rng, n=8, n_eq=2, n_in=4, n_active=2):
    """Convex QP whose optimum is fixed by construction through its KKT conditions."""
    B = rng.normal(size=(n, n))
    Q = B @ B.T + 0.5 * np.eye(n)
    A = rng.normal(size=(n_eq, n))
    G = rng.normal(size=(n_in, n))
    x_star = rng.normal(size=n)
    lam = rng.normal(size=n_eq)
    mu = np.zeros(n_in)
    mu[:n_active] = rng.uniform(0.5, 2.0, n_active)
    b = A @ x_star
    slack = np.zeros(n_in)
    slack[n_active:] = rng.uniform(0.5, 2.0, n_in - n_active)
    h = G @ x_star + slack  # G x <= h, first n_active tight
    c = -(Q @ x_star + A.T @ lam + G.T @ mu)
    nlp = NlpProblem.from_functions(
        n,
        lambda x: 0.5 * x @ Q @ x + c @ x,
        lambda x: Q @ x + c,
        eq=lambda x: A @ x - b,
        eq_jac=lambda x: A,
        ineq=lambda x: G @ x - h,
        ineq_jac=lambda x: G,
    )
    return nlp, x_star


def test_random_convex_qps():
    # stationarity is measured relative to |grad f|, so the x-error of a
    # converged solve is about kkt_tol * |grad f| / lambda_min(Q); a tighter
    # KKT tolerance makes the 1e-4 solution-error target meaningful
    rng = np.random.default_rng(2024)
    opts = SolveOptions(kkt_tol=1e-7)
    worst = 0.0
    for _ in range(20):
        nlp, x_star = random_qp(rng)
        rep = solve(nlp, np.zeros(nlp.n_vars), opts)
        assert rep.converged
        worst = max(worst, float(np.max(np.abs(rep.x - x_star))))
    assert worst <= 1e-4


def test_permutation_invariance():
    rng = np.random.default_rng(7)
    nlp, x_star = random_qp(rng, n=6)
    perm = rng.permutation(6)
    inv = np.argsort(perm)
    ev = lambda x: nlp.derivatives(x)  # noqa: E731
    # y = x[perm]  <=>  x = y[inv]
    permuted = NlpProblem.from_functions(
        6,
        lambda y: nlp.values(y[inv])[0],
        lambda y: ev(y[inv]).grad[perm],
        eq=lambda y: nlp.values(y[inv])[1],
        eq_jac=lambda y: ev(y[inv]).jac_eq.toarray()[:, perm],
        ineq=lambda y: nlp.values(y[inv])[2],
        ineq_jac=lambda y: ev(y[inv]).jac_in.toarray()[:, perm],
    )
    x0 = rng.normal(size=6)
    a = solve(nlp, x0)
    b = solve(permuted, x0[perm])
    np.testing.assert_allclose(b.x[inv], a.x, atol=1e-8)
    assert a.status == b.status


def test_infeasible_problem_is_declared():
    nlp = NlpProblem.from_functions(
        1,
        lambda x: x[0] ** 2,
        lambda x: [2 * x[0]],
        ineq=lambda x: [1.0 - x[0], x[0]],
        ineq_jac=lambda x: [[-1.0], [1.0]],
    )
    rep = solve(nlp, np.array([0.3]))
    assert rep.status is Status.INFEASIBLE
    assert rep.max_violation > 100 * SolveOptions().feas_tol


def test_iteration_limit_status():
    rep = solve(bound_qp(), np.array([0.0]), SolveOptions(max_outer_iters=1, max_inner_iters=1))
    assert rep.status is Status.ITER_LIMIT


def test_non_finite_objective_reports_index():
    nlp = NlpProblem.from_functions(3, lambda x: float(x.sum()), lambda x: np.array([1.0, 1.0, np.nan]))
    with pytest.raises(NumericError) as err:
        solve(nlp, np.zeros(3))
    assert err.value.index == 2
    with pytest.raises(NumericError):
        solve(nlp, np.array([0.0, np.inf, 0.0]))


def test_shape_checked():
    with pytest.raises(ShapeError):
        solve(equality_qp(), np.zeros(3))


@pytest.mark.parametrize(
    "kw", [{"kkt_tol": 0.0}, {"feas_tol": -1.0}, {"penalty_growth": 1.0}, {"max_outer_iters": 0}, {"time_limit": 0.0}]
)
def test_options_validated(kw):
    with pytest.raises(DomainError):
        SolveOptions(**kw)


def test_nominal_contract(nominal_solution, nominal, grid60):
    nlp, rep = nominal_solution
    opts = SolveOptions()
    assert rep.status is Status.CONVERGED
    assert rep.kkt_residual <= opts.kkt_tol and rep.max_violation <= opts.feas_tol
    # independent re-evaluation at the returned point
    f, ce, ci = nlp.values(rep.x)
    assert abs(f - rep.objective) <= 1e-10
    assert max(np.abs(ce).max(), ci.max(), 0.0) <= opts.feas_tol
    assert np.all(rep.x >= nlp.lb - opts.feas_tol) and np.all(rep.x <= nlp.ub + opts.feas_tol)


def test_inner_loop_never_raises_merit(nominal_solution):
    _, rep = nominal_solution
    assert rep.history
    for rec in rep.history:
        assert rec.merit_end <= rec.merit_start + 1e-12 * max(1.0, abs(rec.merit_start))


def test_merit_monotone_on_qps():
    rng = np.random.default_rng(3)
    for _ in range(5):
        nlp, _ = random_qp(rng)
        rep = solve(nlp, np.zeros(nlp.n_vars))
        assert all(r.merit_end <= r.merit_start + 1e-12 * max(1.0, abs(r.merit_start)) for r in rep.history)


def test_solve_is_deterministic(nominal):
    grid = TimeGrid(50.0, 30)
    nlp = build_continuous_nlp(nominal, grid)
    a = solve(nlp, initial_guess(nominal, grid))
    b = solve(nlp, initial_guess(nominal, grid))
    np.testing.assert_array_equal(a.x, b.x)
    assert a.iterations == b.iterations and a.inner_iterations == b.inner_iterations


def test_time_limit_status():
    from ccplan.scenario import make_risky_scenario, realize_measurements

    sc = make_risky_scenario()
    grid = TimeGrid(50.0, 60)
    nlp = build_continuous_nlp(sc, grid, measurements=realize_measurements(sc, grid, 0))
    rep = solve(nlp, initial_guess(sc, grid), SolveOptions(time_limit=1e-6))
    assert rep.status is Status.TIME_LIMIT


def test_initial_guess_flags_short_lane(nominal):
    x, flag = initial_guess(nominal, TimeGrid(50.0, 20), return_flag=True)
    assert not flag and x.size == 120
    _, flag = initial_guess(nominal, TimeGrid(500.0, 20), return_flag=True)
    assert flag


def test_report_dict(nominal_solution):
    _, rep = nominal_solution
    d = rep.to_dict()
    assert d["status"] == "Converged" and set(d) >= {"iterations", "kkt_residual", "max_violation", "objective", "wall_time"}
