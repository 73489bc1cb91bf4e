import numpy as np
import pytest
from numpy.testing import assert_allclose

from pdqp import (Iterate, Partition, ProblemError, QpProblem, Shifts,
                  check_optimality, dual_objective, enumerate_solve,
                  primal_objective, residuals)
from pdqp.model import effective_shifts

from conftest import random_instances


def it(x, y, z):
    return Iterate(np.asarray(x, float), np.asarray(y, float),
                   np.asarray(z, float))


def test_primal_objective_symmetric_point(p1):
    s = Shifts.zero(2)
    assert primal_objective(p1, s, it([0.5, 0.5], [0.5], [0, 0])) == 0.25


def test_primal_objective_zero_point(p2):
    s = Shifts.zero(2)
    assert primal_objective(p2, s, it([0, 0], [0], [0, 0])) == 0.0


def test_primal_objective_with_dual_shift(p2):
    s = Shifts(np.zeros(2), np.array([0.0, 3.0]))
    assert primal_objective(p2, s, it([1, 0], [3], [0, -3])) == 2.5


def test_dual_objective_at_p1_optimum(p1):
    s = Shifts.zero(2)
    assert dual_objective(p1, s, it([0.5, 0.5], [0.5], [0, 0])) == 0.25


def test_dual_objective_zero_point(p1):
    s = Shifts.zero(2)
    assert dual_objective(p1, s, it([0, 0], [0], [7.0, -3.0])) == 0.0


def test_gap_identity_on_shifted_pair(p1):
    s = Shifts(np.array([1.0, 0.0]), np.array([0.0, 2.0]))
    sol = enumerate_solve(p1, s)
    assert sol.status == "optimal"
    point = it(sol.x, sol.y, sol.z)
    gap = primal_objective(p1, s, point) - dual_objective(p1, s, point)
    assert abs(gap + s.q @ s.r) <= 1e-9 * (1 + abs(gap))


def test_residuals_at_optimum(p1):
    stat, eq = residuals(p1, it([0.5, 0.5], [0.5], [0, 0]))
    assert np.max(np.abs(stat)) < 1e-14
    assert np.max(np.abs(eq)) < 1e-14


def test_residuals_zero_data():
    p = QpProblem(H=np.zeros((2, 2)), M=np.zeros((1, 1)),
                  A=np.array([[1.0, 1.0]]), b=np.zeros(1), c=np.zeros(2))
    stat, eq = residuals(p, it([0, 0], [0], [0, 0]))
    assert np.all(stat == 0) and np.all(eq == 0)


def test_residuals_linear_evaluation(p1):
    stat, eq = residuals(p1, it([0, 0], [0], [0, 0]))
    assert_allclose(stat, p1.c)
    assert_allclose(eq, [-1.0])


def test_check_optimality_accepts_p1_optimum(p1):
    rep = check_optimality(p1, Shifts.zero(2), it([0.5, 0.5], [0.5], [0, 0]))
    assert rep.optimal
    assert rep.worst_dual_violation == 0.0


def test_check_optimality_flags_dual_violation(p1):
    rep = check_optimality(p1, Shifts.zero(2), it([0, 1], [1], [-1, 0]))
    assert not rep.optimal
    assert rep.worst_dual_violation == pytest.approx(1.0)


def test_check_optimality_flags_equality_residual(p1):
    shifted = QpProblem(H=p1.H, M=p1.M, A=p1.A, b=p1.b + 1.0, c=p1.c)
    rep = check_optimality(shifted, Shifts.zero(2),
                           it([0.5, 0.5], [0.5], [0, 0]))
    assert not rep.optimal
    assert rep.equality_residual == pytest.approx(1.0)


def test_check_optimality_rejects_bad_tolerances(p1):
    with pytest.raises(ValueError):
        check_optimality(p1, Shifts.zero(2), it([0, 0], [0], [0, 0]), -1.0, 1e-6)


def test_gap_identity_random_oracle_solutions():
    for p in random_instances(31, 25, kinds=("feasible",)):
        sol = enumerate_solve(p, Shifts.zero(p.n))
        if sol.status != "optimal":
            continue
        point = it(sol.x, sol.y, sol.z)
        fp = primal_objective(p, Shifts.zero(p.n), point)
        fd = dual_objective(p, Shifts.zero(p.n), point)
        assert abs(fp - fd) <= 1e-9 * (1 + abs(fp))


def test_rejects_indefinite_hessian():
    with pytest.raises(ProblemError, match="positive semidefinite"):
        QpProblem(H=np.array([[1.0, 0.0], [0.0, -1.0]]), M=np.zeros((1, 1)),
                  A=np.array([[1.0, 1.0]]), b=np.zeros(1), c=np.zeros(2))


def test_rejects_asymmetric_hessian():
    with pytest.raises(ProblemError, match="symmetric"):
        QpProblem(H=np.array([[1.0, 0.5], [0.0, 1.0]]), M=np.zeros((1, 1)),
                  A=np.array([[1.0, 1.0]]), b=np.zeros(1), c=np.zeros(2))


def test_rejects_rank_deficient_rows():
    with pytest.raises(ProblemError, match="rank deficient"):
        QpProblem(H=np.eye(2), M=np.zeros((2, 2)),
                  A=np.array([[1.0, 1.0], [2.0, 2.0]]),
                  b=np.zeros(2), c=np.zeros(2))


def test_accepts_semidefinite_with_regularizer():
    p = QpProblem(H=np.zeros((2, 2)), M=1e-2 * np.eye(1),
                  A=np.array([[0.0, 0.0]]), b=np.zeros(1), c=np.zeros(2))
    assert p.n == 2 and p.m == 1


def test_rejects_overlapping_kinds():
    with pytest.raises(ProblemError, match="both free and fixed"):
        QpProblem(H=np.eye(2), M=np.zeros((1, 1)), A=np.array([[1.0, 1.0]]),
                  b=np.zeros(1), c=np.zeros(2),
                  free=frozenset({0}), fixed=frozenset({0}))


def test_shifts_require_finite_entries():
    with pytest.raises(ProblemError):
        Shifts(np.array([np.inf, 0.0]), np.zeros(2))


def test_partition_validates_cover():
    part = Partition(basic=[0], nonbasic=[0, 1])
    with pytest.raises(Exception):
        part.validate(2)


def test_effective_shifts_align_relaxed_entries(p1):
    part = Partition(basic=[0], nonbasic=[1])
    point = it([1.0, -0.25], [1.0], [-0.5, 0.5])
    eff = effective_shifts(p1, Shifts.zero(2), part, point)
    assert eff.r[0] == 0.5
    assert eff.q[1] == 0.25
