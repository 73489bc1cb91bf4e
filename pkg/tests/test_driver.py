import numpy as np
import pytest
from numpy.testing import assert_allclose

from pdqp import (GeneralQp, InvariantError, Partition, ProblemError,
                  QpProblem, Shifts, SolveConfig, check_optimality,
                  enumerate_solve, find_soc_basis, init_shifts, solve_pdqp,
                  solve_standard, standardize, temporary_bound_pass)
from pdqp.driver import TemporaryBoundRegistry

from conftest import random_instances


def general_p1():
    return GeneralQp(Hhat=np.eye(2), Ahat=np.array([[1.0, 1.0]]),
                     c=np.zeros(2),
                     lower=np.array([0.0, 0.0, 1.0]),
                     upper=np.array([np.inf, np.inf, 1.0]))


def temp_bound_fixture():
    """A free variable with a dependent column: deferred at discovery and
    handled through the temporary-bound machinery with a nonzero dual."""
    return GeneralQp(Hhat=np.diag([4.0, 0.0, 0.0]),
                     Ahat=np.array([[1.0, 1.0, 2.0], [0.0, 1.0, 2.0]]),
                     c=np.array([-4.0, 1.0, 4.0]),
                     lower=np.array([0.0, -np.inf, 0.0, 3.0, 2.0]),
                     upper=np.array([np.inf, np.inf, np.inf, 3.0, 2.0]))


def test_standardize_equality_row_structure():
    std = standardize(general_p1())
    p = std.problem
    assert p.n == 3 and p.m == 1
    assert_allclose(p.A, [[1.0, 1.0, -1.0]])
    assert sorted(p.fixed) == [2]
    assert not p.free
    # the fixed slack is anchored at its bound, so the row carries it
    assert_allclose(p.b, [1.0])


def test_standardize_dimension_arithmetic():
    g = GeneralQp(Hhat=np.eye(2), Ahat=np.array([[1.0, -1.0]]),
                  c=np.zeros(2),
                  lower=np.array([0.0, 0.0, -np.inf]),
                  upper=np.array([np.inf, np.inf, 2.0]))
    std = standardize(g)
    assert std.problem.n == 3 and std.problem.m == 1
    # the slack is anchored at its upper bound with a flipped column
    assert std.sign[2] == -1.0
    assert_allclose(std.problem.A, [[1.0, -1.0, 1.0]])


def test_standardize_boxed_component_adds_row():
    g = GeneralQp(Hhat=np.eye(1), Ahat=np.array([[1.0]]), c=np.zeros(1),
                  lower=np.array([0.0, 0.0]), upper=np.array([2.0, np.inf]))
    std = standardize(g)
    assert std.boxed == [0]
    assert std.problem.n == 3 and std.problem.m == 2
    assert_allclose(std.problem.A[1], [1.0, 0.0, 1.0])
    assert_allclose(std.problem.b[1], 2.0)


def test_standardize_rejects_inconsistent_bounds():
    with pytest.raises(ProblemError, match="inconsistent bounds"):
        GeneralQp(Hhat=np.eye(1), Ahat=np.array([[1.0]]), c=np.zeros(1),
                  lower=np.array([1.0, 0.0]), upper=np.array([0.0, 0.0]))


def test_init_shifts_p2_fixture(p2):
    part = Partition(basic=[0], nonbasic=[1])
    shifts, it = init_shifts(p2, part)
    assert_allclose(it.x, [1.0, 0.0])
    assert_allclose(it.y, [3.0])
    assert_allclose(it.z, [0.0, -3.0])
    assert_allclose(shifts.q, [0.0, 0.0])
    assert_allclose(shifts.r, [0.0, 3.0])
    assert check_optimality(p2, shifts, it).optimal
    assert enumerate_solve(p2, shifts).status == "optimal"


def test_init_shifts_zero_when_already_optimal(p1):
    part = Partition(basic=[0, 1], nonbasic=[])
    shifts, it = init_shifts(p1, part)
    assert_allclose(shifts.q, 0.0)
    assert_allclose(shifts.r, 0.0)
    assert_allclose(it.x, [0.5, 0.5])


def test_init_shifts_optimal_on_random_instances():
    for p in random_instances(3, 30):
        part = find_soc_basis(p, prefer=sorted(p.free)).partition
        shifts, it = init_shifts(p, part)
        assert check_optimality(p, shifts, it).optimal
        assert np.all(shifts.q >= 0)


def test_solve_standard_p2_primal_first_from_injected_basis(p2):
    sol = solve_standard(p2, SolveConfig(initial_basis=[0],
                                         check_invariants=True))
    assert sol.status == "optimal"
    assert sol.strategy == "primal-first"
    assert_allclose(sol.iterate.x, [0.0, 1.0], atol=1e-12)
    assert sol.objective == pytest.approx(0.5)


def test_solve_standard_p1_trivial(p1):
    sol = solve_standard(p1)
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(0.25)
    assert sol.iterations == 0 or sol.iterations <= 2


def test_solve_standard_infeasible(p_infeasible):
    sol = solve_standard(p_infeasible)
    assert sol.status == "primal_infeasible"


def test_solve_standard_unbounded(p_unbounded):
    sol = solve_standard(p_unbounded)
    assert sol.status == "dual_infeasible"


def test_strategy_auto_selects_dual_first_when_dual_feasible(p1):
    sol = solve_standard(p1, SolveConfig(strategy="auto"))
    assert sol.strategy == "dual-first"


def test_strategy_auto_selects_primal_first_on_dual_violation(p2):
    sol = solve_standard(p2, SolveConfig(initial_basis=[0]))
    assert sol.strategy == "primal-first"


def test_stage_gap_identity(p2):
    sol = solve_standard(p2, SolveConfig(initial_basis=[0]))
    for lg in sol.stage_log:
        assert lg.status == "optimal"
        assert abs(lg.f_primal - lg.f_dual + lg.q_dot_r) \
            <= 1e-9 * (1 + abs(lg.f_primal))


def test_solve_pdqp_general_roundtrip():
    sol = solve_pdqp(general_p1())
    assert sol.status == "optimal"
    assert_allclose(sol.x, [0.5, 0.5], atol=1e-10)
    assert sol.objective == pytest.approx(0.25)
    assert_allclose(sol.y, [0.5], atol=1e-10)


def test_solve_pdqp_boxed_variable():
    g = GeneralQp(Hhat=np.array([[2.0]]), Ahat=np.array([[1.0]]),
                  c=np.array([-2.0]),
                  lower=np.array([0.0, 0.0]), upper=np.array([0.4, 10.0]))
    sol = solve_pdqp(g, SolveConfig(check_invariants=True))
    assert sol.status == "optimal"
    assert sol.x[0] == pytest.approx(0.4)
    assert sol.objective == pytest.approx(0.16 - 0.8)


def test_solve_pdqp_flipped_upper_bound():
    g = GeneralQp(Hhat=np.array([[1.0]]), Ahat=np.array([[1.0]]),
                  c=np.array([1.0]),
                  lower=np.array([-np.inf, -np.inf]),
                  upper=np.array([-1.0, np.inf]))
    sol = solve_pdqp(g)
    assert sol.status == "optimal"
    assert sol.x[0] == pytest.approx(-1.0)
    assert sol.objective == pytest.approx(-0.5)


def test_solve_pdqp_free_variable_in_basis():
    g = GeneralQp(Hhat=np.eye(2), Ahat=np.array([[1.0, 1.0]]),
                  c=np.array([0.0, -1.0]),
                  lower=np.array([0.0, -np.inf, 1.0]),
                  upper=np.array([np.inf, np.inf, 1.0]))
    sol = solve_pdqp(g, SolveConfig(check_invariants=True))
    assert sol.status == "optimal"
    assert_allclose(sol.x, [0.0, 1.0], atol=1e-10)
    assert len(sol.standardized.registry) == 0


def test_temporary_bound_fixture_nonzero_dual():
    g = temp_bound_fixture()
    std = standardize(g)
    soc = find_soc_basis(std.problem, prefer=sorted(std.problem.free))
    assert soc.deferred == [1]       # the free variable stays nonbasic
    sol = solve_pdqp(g, SolveConfig(check_invariants=True))
    reg = sol.standardized.registry
    assert reg.indices() == [1]
    assert reg.entries[1].dual == pytest.approx(-1.0)
    assert sol.status == "optimal"
    assert_allclose(sol.x, [1.0, 2.0, 0.0], atol=1e-9)
    assert abs(sol.standardized.iterate.z[1]) < 1e-9
    # oracle agreement on the standardized problem
    o = enumerate_solve(std.problem, Shifts.zero(std.problem.n))
    assert o.status == "optimal"
    assert sol.standardized.objective == pytest.approx(o.objective, abs=1e-9)


def test_temporary_bound_fixture_dual_first_zero_step_rule():
    g = temp_bound_fixture()
    sol = solve_pdqp(g, SolveConfig(strategy="dual-first",
                                    check_invariants=True))
    assert sol.status == "optimal"
    assert_allclose(sol.x, [1.0, 2.0, 0.0], atol=1e-9)


def test_temporary_bound_decoupled_free_variable():
    g = GeneralQp(Hhat=np.diag([1.0, 0.0]), Ahat=np.array([[1.0, 0.0]]),
                  c=np.array([-1.0, 0.0]),
                  lower=np.array([0.0, -np.inf, 0.0]),
                  upper=np.array([np.inf, np.inf, 10.0]))
    sol = solve_pdqp(g, SolveConfig(check_invariants=True))
    assert sol.status == "optimal"
    assert sol.standardized.registry.indices() == [1]
    assert sol.x[0] == pytest.approx(1.0)


def test_temporary_bound_pass_flags_moved_dual():
    reg = TemporaryBoundRegistry()
    reg.register(0, 0.0, 2.0)
    from pdqp import Iterate
    it = Iterate(np.zeros(2), np.zeros(1), np.array([2.0, 0.0]))
    temporary_bound_pass(reg, "dual", it, {0: 2.0})   # unchanged: fine
    with pytest.raises(InvariantError):
        temporary_bound_pass(reg, "primal", it)       # nonzero after primal
    with pytest.raises(InvariantError):
        temporary_bound_pass(reg, "dual", it, {0: 0.5})


def test_pipeline_matches_oracle_with_mu_regularizer():
    for p in random_instances(57, 15, kinds=("feasible",)):
        sol = solve_standard(p)
        o = enumerate_solve(p, Shifts.zero(p.n))
        assert sol.status == o.status
        if o.status == "optimal":
            assert abs(sol.objective - o.objective) \
                <= 1e-7 * (1 + abs(o.objective))


def test_final_point_passes_unshifted_check(p2):
    sol = solve_standard(p2, SolveConfig(initial_basis=[0]))
    assert check_optimality(p2, Shifts.zero(2), sol.iterate).optimal


def test_solve_standard_without_rows():
    p = QpProblem(H=np.eye(2), M=np.zeros((0, 0)), A=np.zeros((0, 2)),
                  b=np.zeros(0), c=np.array([-1.0, 1.0]))
    sol = solve_standard(p, SolveConfig(check_invariants=True))
    assert sol.status == "optimal"
    assert_allclose(sol.iterate.x, [1.0, 0.0], atol=1e-12)
    o = enumerate_solve(p, Shifts.zero(2))
    assert o.objective == pytest.approx(sol.objective)


def test_primal_only_requires_primal_feasible_init(p2):
    with pytest.raises(ProblemError, match="primal-only"):
        solve_standard(p2, SolveConfig(strategy="primal-only"))


def test_dual_only_solves_dual_feasible_instance(p1):
    sol = solve_standard(p1, SolveConfig(strategy="dual-only"))
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(0.25)


def test_bland_mode_still_converges():
    # Force the least-index selection rule from the first zero step.
    p = QpProblem(H=np.eye(3), M=np.zeros((1, 1)),
                  A=np.array([[1.0, 1.0, 1.0]]), b=np.array([0.0]),
                  c=np.array([-1.0, 1.0, 0.0]))
    sol = solve_standard(p, SolveConfig(bland_after=1,
                                        check_invariants=True))
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(0.0)


def test_forced_strategies_agree_with_oracle():
    # Both stage orders must reach the oracle verdict; this seed once
    # produced a spurious singular basis when noise-level dual deltas
    # were treated as blocking in a dual-first run.
    for p in random_instances(31337, 45):
        o = enumerate_solve(p, Shifts.zero(p.n))
        for strategy in ("primal-first", "dual-first"):
            sol = solve_standard(p, SolveConfig(strategy=strategy,
                                                check_invariants=True))
            assert sol.status == o.status
            if o.status == "optimal":
                assert abs(sol.objective - o.objective) \
                    <= 1e-7 * (1 + abs(o.objective))


def test_pipeline_handles_extreme_data_scales():
    # The freed-component dichotomy must not misfire when the data scale
    # dwarfs legitimately small direction components.
    rng = np.random.default_rng(0)
    for scale in (1e-6, 1e6, 1e9):
        g = rng.normal(size=(4, 4))
        H = scale * (g.T @ g + 0.1 * np.eye(4))
        A = scale * rng.normal(size=(2, 4))
        x0 = np.abs(rng.normal(size=4))
        p = QpProblem(H=H, M=np.zeros((2, 2)), A=A, b=A @ x0,
                      c=scale * rng.normal(size=4))
        sol = solve_standard(p)
        o = enumerate_solve(p, Shifts.zero(4))
        assert sol.status == o.status == "optimal"
        assert abs(sol.objective - o.objective) \
            <= 1e-7 * (1 + abs(o.objective))


def test_dead_row_consistent_is_dropped():
    # Second row touches only the fixed variable x2 = 1 and is satisfied
    # by it: redundant, dropped, zero multiplier on the way back.
    g = GeneralQp(Hhat=np.eye(2), Ahat=np.array([[1.0, 1.0], [0.0, 2.0]]),
                  c=np.array([-2.0, 0.0]),
                  lower=np.array([0.0, 1.0, 0.0, 2.0]),
                  upper=np.array([np.inf, 1.0, np.inf, 2.0]))
    std = standardize(g)
    assert std.dead_rows == [1]
    assert std.problem.m == 1
    sol = solve_pdqp(g, SolveConfig(check_invariants=True))
    assert sol.status == "optimal"
    assert sol.x[1] == pytest.approx(1.0)
    assert sol.y[1] == 0.0
    o = enumerate_solve(std.problem, Shifts.zero(std.problem.n))
    assert abs(sol.standardized.objective - o.objective) <= 1e-9


def test_dead_row_inconsistent_is_primal_infeasible():
    # Same structure but the fixed value violates the second row.
    g = GeneralQp(Hhat=np.eye(2), Ahat=np.array([[1.0, 1.0], [0.0, 2.0]]),
                  c=np.zeros(2),
                  lower=np.array([0.0, 1.0, 0.0, 5.0]),
                  upper=np.array([np.inf, 1.0, np.inf, 5.0]))
    std = standardize(g)
    assert std.inconsistent_row == 1
    assert std.problem is None
    sol = solve_pdqp(g)
    assert sol.status == "primal_infeasible"
    assert sol.strategy == "presolve"


def test_pinned_rank_deficiency_rejected():
    # Two equality rows sharing a single live column leave an implied
    # equation among the non-fixed variables; rejected with a diagnostic.
    g = GeneralQp(Hhat=np.eye(2),
                  Ahat=np.array([[1.0, 1.0], [1.0, 2.0]]),
                  c=np.zeros(2),
                  lower=np.array([0.0, 1.0, 3.0, 4.0]),
                  upper=np.array([np.inf, 1.0, 3.0, 4.0]))
    with pytest.raises(ProblemError, match="fixed variables"):
        standardize(g)


def test_initial_basis_rejects_fixed_variables():
    g = general_p1()
    std = standardize(g)
    with pytest.raises(ProblemError, match="fixed"):
        solve_standard(std.problem, SolveConfig(initial_basis=[0, 2]))
