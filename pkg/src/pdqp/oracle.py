"""Independent ground truth for small problems.

``enumerate_solve`` tries every candidate basic set, solves the boundary
equations, and tests the sign conditions; infeasibility is certified by
direct cone-membership tests on the primal and dual feasible sets,
enumerated over support subsets.  Nothing here shares step or direction
logic with the solver (only the K_B assembly and factorization are
reused, and a naive Gaussian elimination cross-checks those solves on
small instances).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .kkt import (KktFactorization, SingularReport, build_kb, build_kl,
                  factor_kb, solve_boundary_point)
from .model import (Direction, Iterate, Partition, QpProblem, Shifts,
                    dual_objective, primal_objective)

ENUMERATION_LIMIT = 16
OPTIMAL = "optimal"
PRIMAL_INFEASIBLE = "primal_infeasible"
DUAL_INFEASIBLE = "dual_infeasible"


class OracleBudgetError(ValueError):
    """Problem too large for exhaustive enumeration."""


class OracleInconsistencyError(RuntimeError):
    """The enumeration contradicted itself (distinct optimal values, or
    feasible sets nonempty with no optimal partition)."""


@dataclass
class OracleSolution:
    status: str
    x: np.ndarray | None
    y: np.ndarray | None
    z: np.ndarray | None
    objective: float | None
    witness: list[int] | None
    primal_feasible: bool
    dual_feasible: bool


def _gauss_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Plain Gaussian elimination with partial pivoting; the deliberate
    second opinion on the factorization solves."""
    a = np.array(a, dtype=float)
    x = np.array(b, dtype=float)
    n = a.shape[0]
    for k in range(n):
        piv = k + int(np.argmax(np.abs(a[k:, k])))
        if abs(a[piv, k]) == 0.0:
            raise np.linalg.LinAlgError("singular matrix in gauss solve")
        if piv != k:
            a[[k, piv]] = a[[piv, k]]
            x[[k, piv]] = x[[piv, k]]
        mult = a[k + 1:, k] / a[k, k]
        a[k + 1:, k:] -= np.outer(mult, a[k, k:])
        x[k + 1:] -= mult * x[k]
    for k in range(n - 1, -1, -1):
        x[k] = (x[k] - a[k, k + 1:] @ x[k + 1:]) / a[k, k]
    return x


def _in_cone(target: np.ndarray, cone_gens: np.ndarray,
             free_gens: np.ndarray, tol: float = 1e-9) -> bool:
    """Is target in cone(cone_gens) + span(free_gens)?

    Projects out the span, then enumerates independent support subsets of
    the projected cone generators (Caratheodory).
    """
    d = target.shape[0]
    if d == 0:
        return True
    scale = max(1.0, float(np.max(np.abs(target))),
                float(np.max(np.abs(cone_gens))) if cone_gens.size else 0.0,
                float(np.max(np.abs(free_gens))) if free_gens.size else 0.0)
    if free_gens.size:
        u, sv, _ = np.linalg.svd(free_gens, full_matrices=False)
        rank = int(np.sum(sv > 1e-12 * max(1.0, sv[0] if sv.size else 0.0)))
        basis = u[:, :rank]
        proj = lambda v: v - basis @ (basis.T @ v)
    else:
        proj = lambda v: v
    t = proj(target)
    if float(np.max(np.abs(t), initial=0.0)) <= tol * scale:
        return True
    if cone_gens.size == 0:
        return False
    g = np.column_stack([proj(cone_gens[:, j])
                         for j in range(cone_gens.shape[1])])
    k = g.shape[1]
    max_support = min(k, d)
    for size in range(1, max_support + 1):
        for subset in itertools.combinations(range(k), size):
            gs = g[:, subset]
            lam, *_ = np.linalg.lstsq(gs, t, rcond=None)
            if np.any(lam < -tol * scale):
                continue
            if float(np.max(np.abs(gs @ lam - t))) <= tol * scale:
                return True
    return False


def primal_set_nonempty(p: QpProblem, s: Shifts) -> bool:
    """Is {(x, y) : Ax + My = b, x >= -q (regular), x free/fixed per kind}
    nonempty?"""
    regular = [j for j in range(p.n) if j not in p.free and j not in p.fixed]
    free = sorted(p.free)
    fixed = sorted(p.fixed)
    target = p.b.copy()
    if regular:
        target = target + p.A[:, regular] @ s.q[regular]
    if fixed:
        target = target + p.A[:, fixed] @ s.q[fixed]
    cone = p.A[:, regular] if regular else np.zeros((p.m, 0))
    free_cols = [p.A[:, free]] if free else []
    free_cols.append(p.M)
    return _in_cone(target, cone, np.hstack(free_cols))


def dual_set_nonempty(p: QpProblem, s: Shifts) -> bool:
    """Is {(x, y, z) : -Hx + A'y + z = c, z >= -r (regular), z free for
    fixed variables, z = -r for free variables} nonempty?"""
    regular = [j for j in range(p.n) if j not in p.free and j not in p.fixed]
    fixed = sorted(p.fixed)
    eye = np.eye(p.n)
    target = p.c + s.r
    cone = eye[:, regular] if regular else np.zeros((p.n, 0))
    free_cols = [-p.H, p.A.T]
    if fixed:
        free_cols.append(eye[:, fixed])
    return _in_cone(target, cone, np.hstack(free_cols))


def enumerate_solve(p: QpProblem, s: Shifts, tol: float = 1e-8
                    ) -> OracleSolution:
    """Exhaustive solve by enumerating candidate basic sets.

    Every subset of the non-fixed indices is tried; subsets whose K_B
    factors get their boundary point computed and sign-tested.  All
    optimal witnesses must agree on the objective.  When none passes, the
    two feasible sets decide between primal and dual infeasibility.
    """
    if p.n > ENUMERATION_LIMIT:
        raise OracleBudgetError(
            f"enumeration supports n <= {ENUMERATION_LIMIT}, got {p.n}")
    candidates = [j for j in range(p.n) if j not in p.fixed]
    crosscheck = p.n <= 8
    best: OracleSolution | None = None
    found: list[tuple[list[int], float]] = []
    for size in range(len(candidates) + 1):
        for subset in itertools.combinations(candidates, size):
            basic = list(subset)
            part = Partition(basic=basic,
                             nonbasic=[j for j in range(p.n)
                                       if j not in set(basic)])
            f = factor_kb(p, part)
            if isinstance(f, SingularReport):
                continue
            it = solve_boundary_point(p, s, part, f)
            if crosscheck:
                _crosscheck_solve(p, s, part, f, it, tol)
            # Per-family scales: the primal sign slack must not inflate
            # with the dual magnitudes or vice versa.
            x_scale = max(1.0, float(np.max(np.abs(it.x))),
                          float(np.max(np.abs(s.q))))
            z_scale = max(1.0, float(np.max(np.abs(it.z))),
                          float(np.max(np.abs(s.r))))
            ok = True
            for i in basic:
                if i in p.free:
                    continue
                if it.x[i] + s.q[i] < -tol * x_scale:
                    ok = False
                    break
            if ok:
                for j in part.nonbasic:
                    if j in p.fixed:
                        continue
                    v = it.z[j] + s.r[j]
                    if j in p.free:
                        if abs(v) > tol * z_scale:
                            ok = False
                            break
                    elif v < -tol * z_scale:
                        ok = False
                        break
            if not ok:
                continue
            obj = primal_objective(p, s, it)
            found.append((basic, obj))
            if best is None:
                best = OracleSolution(status=OPTIMAL, x=it.x, y=it.y, z=it.z,
                                      objective=obj, witness=basic,
                                      primal_feasible=True, dual_feasible=True)
    if best is not None:
        ref = best.objective
        # Witnesses accepted at the sign slack may sit off the optimal
        # face by up to that slack, which moves the objective by at most
        # slack times the gradient scale.
        x_big = max(1.0, float(np.max(np.abs(best.x))))
        grad = float(np.max(np.abs(p.c + s.r), initial=0.0)) \
            + p.kkt_scale() * x_big
        agree = 1e-10 * (1.0 + abs(ref)) + 4.0 * tol * x_big * grad
        for basic, obj in found:
            if abs(obj - ref) > agree:
                raise OracleInconsistencyError(
                    f"optimal witnesses disagree: {ref} vs {obj} at {basic}")
        return best

    p_ok = primal_set_nonempty(p, s)
    d_ok = dual_set_nonempty(p, s)
    if p_ok and d_ok:
        raise OracleInconsistencyError(
            "both feasible sets are nonempty but no partition is optimal")
    status = PRIMAL_INFEASIBLE if not p_ok else DUAL_INFEASIBLE
    return OracleSolution(status=status, x=None, y=None, z=None,
                          objective=None, witness=None,
                          primal_feasible=p_ok, dual_feasible=d_ok)


def _crosscheck_solve(p, s, part, f: KktFactorization, it, tol):
    basic = list(part.basic)
    nonbasic = list(part.nonbasic)
    qn = s.q[nonbasic]
    rhs = np.concatenate([
        p.H[np.ix_(basic, nonbasic)] @ qn - p.c[basic] - s.r[basic],
        p.A[:, nonbasic] @ qn + p.b,
    ])
    kb = build_kb(p, basic)
    if kb.shape[0] == 0:
        return
    try:
        w = _gauss_solve(kb, rhs)
    except np.linalg.LinAlgError:
        return
    scale = max(1.0, float(np.max(np.abs(w))))
    got = np.concatenate([it.x[basic], -it.y])
    if float(np.max(np.abs(got - w), initial=0.0)) > 1e-6 * scale:
        raise OracleInconsistencyError(
            f"factorization solve disagrees with Gaussian elimination "
            f"for basis {basic}")


def partition_for_direction(p: QpProblem, d: Direction) -> Partition:
    """Rebuild the partition a direction was solved against."""
    basic = list(d.basic)
    taken = set(basic) | {d.freed}
    nonbasic = [j for j in range(p.n) if j not in taken]
    return Partition(basic=basic, nonbasic=nonbasic, freed=d.freed)


@dataclass
class PropertyReport:
    checks: list[tuple[str, bool, str]] = field(default_factory=list)

    def add(self, name: str, passed: bool, detail: str = "") -> None:
        self.checks.append((name, passed, detail))

    @property
    def ok(self) -> bool:
        return all(passed for _, passed, _ in self.checks)

    def failures(self) -> list[str]:
        return [f"{name}: {detail}" for name, passed, detail in self.checks
                if not passed]


def check_direction_propositions(p: QpProblem, part: Partition,
                                 d: Direction) -> PropertyReport:
    """Verify a direction against the homogeneous equations, the inner
    product identity, and the nonsingular/singular case dichotomies."""
    rep = PropertyReport()
    n = p.n
    l = d.freed
    scale = max(1.0, p.kkt_scale(),
                float(np.max(np.abs(d.dx))), float(np.max(np.abs(d.dz))),
                float(np.max(np.abs(d.dy))) if d.dy.size else 0.0)
    tol = 1e-8 * scale

    res1 = p.H @ d.dx - p.A.T @ d.dy - d.dz
    res2 = p.A @ d.dx + p.M @ d.dy
    rep.add("stationarity_homogeneous",
            float(np.max(np.abs(res1), initial=0.0)) <= tol,
            f"residual {float(np.max(np.abs(res1), initial=0.0)):.3e}")
    rep.add("equality_homogeneous",
            float(np.max(np.abs(res2), initial=0.0)) <= tol,
            f"residual {float(np.max(np.abs(res2), initial=0.0)):.3e}")
    nb = [j for j in part.nonbasic if j != l]
    rep.add("dx_nonbasic_zero",
            all(d.dx[j] == 0.0 for j in nb), "")
    rep.add("dz_basic_zero",
            all(d.dz[i] == 0.0 for i in part.basic), "")

    lhs = float(d.dx @ d.dz)
    rhs = float(d.dx @ p.H @ d.dx + d.dy @ p.M @ d.dy)
    rep.add("inner_product_identity", abs(lhs - rhs) <= tol,
            f"dx'dz {lhs:.6e} vs curvature {rhs:.6e}")
    rep.add("dxl_dzl_nonnegative", d.dx_l * d.dz_l >= -tol,
            f"product {d.dx_l * d.dz_l:.3e}")

    basic = list(part.basic)
    kb = build_kb(p, basic)
    kl = build_kl(p, basic, l)
    kb_rank = np.linalg.matrix_rank(kb, tol=1e-9 * scale) if kb.size else 0
    kl_rank = np.linalg.matrix_rank(kl, tol=1e-9 * scale)
    kb_nonsing = kb_rank == kb.shape[0] if kb.size else True
    kl_nonsing = kl_rank == kl.shape[0]

    if abs(abs(d.dx_l) - 1.0) <= 1e-12:
        # Base-type direction: dz_l > 0 iff K_l nonsingular.
        dzl = d.dz_l * np.sign(d.dx_l)
        if dzl > 0:
            rep.add("case_kl_nonsingular", kl_nonsing,
                    f"dz_l {dzl:.3e} > 0 but K_l rank {kl_rank}/{kl.shape[0]}")
        else:
            rep.add("case_kl_singular", not kl_nonsing,
                    "dz_l = 0 but K_l nonsingular")
            null = np.concatenate([[d.dx_l], d.dx[basic], np.zeros(p.m)])
            resid = float(np.max(np.abs(kl @ null)))
            rep.add("kl_null_vector", resid <= tol, f"residual {resid:.3e}")
            rep.add("kl_null_dimension", kl_rank == kl.shape[0] - 1,
                    f"rank {kl_rank} of {kl.shape[0]}")
            rep.add("dy_zero_when_dzl_zero",
                    float(np.max(np.abs(d.dy), initial=0.0)) <= tol, "")
            dzn = [abs(d.dz[j]) for j in nb]
            rep.add("dzn_zero_when_dzl_zero",
                    max(dzn, default=0.0) <= tol, "")
    elif abs(abs(d.dz_l) - 1.0) <= 1e-12:
        # Intermediate-type direction: dx_l > 0 iff K_B nonsingular.
        dxl = d.dx_l * np.sign(d.dz_l)
        if dxl > 0:
            rep.add("case_kb_nonsingular", kb_nonsing,
                    f"dx_l {dxl:.3e} > 0 but K_B rank {kb_rank}/{kb.shape[0]}")
        else:
            rep.add("case_kb_singular", not kb_nonsing,
                    "dx_l = 0 but K_B nonsingular")
            dxb = [abs(d.dx[i]) for i in basic]
            rep.add("dxb_zero_when_dxl_zero",
                    max(dxb, default=0.0) <= tol, "")
            if kb.size:
                null = np.concatenate([np.zeros(len(basic)), d.dy])
                resid = float(np.max(np.abs(kb @ null), initial=0.0))
                rep.add("kb_null_vector", resid <= tol, f"residual {resid:.3e}")
                rep.add("kb_null_dimension", kb_rank == kb.shape[0] - 1,
                        f"rank {kb_rank} of {kb.shape[0]}")
    return rep


def check_objective_identity(p: QpProblem, s: Shifts, it: Iterate,
                             d: Direction, alpha: float,
                             rel_tol: float = 1e-9) -> PropertyReport:
    """Compare the objective change along a step with the closed-form
    prediction from the freed components."""
    rep = PropertyReport()
    l = d.freed
    moved = Iterate(it.x + alpha * d.dx, it.y + alpha * d.dy,
                    it.z + alpha * d.dz)
    fp0 = primal_objective(p, s, it)
    fp1 = primal_objective(p, s, moved)
    fd0 = dual_objective(p, s, it)
    fd1 = dual_objective(p, s, moved)
    pred_p = d.dx_l * (it.z[l] + s.r[l]) * alpha \
        + 0.5 * d.dx_l * d.dz_l * alpha ** 2
    pred_d = -d.dz_l * (it.x[l] + s.q[l]) * alpha \
        - 0.5 * d.dx_l * d.dz_l * alpha ** 2
    tol_p = rel_tol * (1.0 + abs(fp0) + abs(pred_p))
    tol_d = rel_tol * (1.0 + abs(fd0) + abs(pred_d))
    rep.add("primal_objective_identity", abs((fp1 - fp0) - pred_p) <= tol_p,
            f"actual {fp1 - fp0:.6e} predicted {pred_p:.6e}")
    rep.add("dual_objective_identity", abs((fd1 - fd0) - pred_d) <= tol_d,
            f"actual {fd1 - fd0:.6e} predicted {pred_d:.6e}")
    return rep
