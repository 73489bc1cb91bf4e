"""Combined solve pipeline: general-format conversion, initial basis and
shift construction, and the primal-first / dual-first strategies.

A general problem

    minimize 0.5 x'Hx + c'x   subject to  lower <= (x; Ahat x) <= upper

is converted to standard form by introducing slacks (Ahat x - s = 0) and
anchoring every bounded component at one of its bounds.  Components with
two finite bounds get an extra balance row and slack; components with no
bounds become free variables, and equal bounds mark fixed variables.

The pipeline then finds a second-order consistent basis, builds minimal
shifts making that basis optimal for the shifted pair, and removes the
shifts with two consecutive solves (primal then dual, or dual then
primal).  Free variables left outside the initial basis receive the
temporary-bound treatment: a dual shift freezes them, the primal solve
drives their duals to zero, and the dual solve never moves them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dual import solve_dual
from .kkt import factor_kb_or_raise, find_soc_basis, solve_boundary_point
from .model import (InvariantError, Iterate, Partition, ProblemError,
                    QpProblem, Shifts, check_optimality, dual_objective,
                    primal_objective)
from .primal import OPTIMAL, PRIMAL_INFEASIBLE, PrimalOutcome, solve_primal
from .steps import SolveLimits, TraceSink


@dataclass(frozen=True)
class GeneralQp:
    """General-format problem data.

    ``lower`` and ``upper`` have length n + m: bounds on the variables
    first, then on the constraint rows.  Infinities mark absent bounds;
    equal bounds mark a fixed variable or an equality row.
    """

    Hhat: np.ndarray
    Ahat: np.ndarray
    c: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    name: str = "qp"

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.Hhat, dtype=float))
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        n = c.shape[0]
        A = np.asarray(self.Ahat, dtype=float)
        if A.size == 0:
            A = A.reshape(0, n)
        A = np.atleast_2d(A)
        m = A.shape[0]
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        up = np.asarray(self.upper, dtype=float).reshape(-1)
        if H.shape != (n, n):
            raise ProblemError(f"Hhat must be {n}x{n}, got {H.shape}")
        if A.shape != (m, n):
            raise ProblemError(f"Ahat must be {m}x{n}, got {A.shape}")
        if lo.shape != (n + m,) or up.shape != (n + m,):
            raise ProblemError(f"bounds must have length {n + m}")
        if np.any(np.isnan(lo)) or np.any(np.isnan(up)):
            raise ProblemError("bounds may not be NaN")
        if np.any(lo > up):
            j = int(np.nonzero(lo > up)[0][0])
            raise ProblemError(f"inconsistent bounds at component {j}: "
                               f"lower {lo[j]} > upper {up[j]}")
        object.__setattr__(self, "Hhat", H)
        object.__setattr__(self, "Ahat", A)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @property
    def m(self) -> int:
        return self.Ahat.shape[0]


@dataclass
class TempBoundEntry:
    index: int
    value: float        # the temporary fixing x_j = value
    dual: float = 0.0   # the dual recorded when the shifts were built


class TemporaryBoundRegistry:
    """Bookkeeping for free variables left nonbasic at basis discovery."""

    def __init__(self):
        self.entries: dict[int, TempBoundEntry] = {}
        self._basic: set[int] = set()

    def register(self, index: int, value: float, dual: float) -> None:
        self.entries[index] = TempBoundEntry(index, value, dual)

    def mark_basic(self, index: int) -> None:
        if index in self.entries:
            self._basic.add(index)

    def unreleased_nonbasic(self) -> list[int]:
        return sorted(j for j in self.entries if j not in self._basic)

    def indices(self) -> list[int]:
        return sorted(self.entries)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class Standardized:
    """Standard-form problem plus the data needed to map results back.

    ``problem`` is None when a row supported only by fixed components is
    inconsistent with their values, in which case ``inconsistent_row``
    names the offending original row and the problem is primal
    infeasible outright.  Rows that are consistent but carried by fixed
    components alone are redundant and dropped (``dead_rows``).
    """

    problem: QpProblem | None
    lower: np.ndarray
    upper: np.ndarray
    registry: TemporaryBoundRegistry
    anchor: np.ndarray        # v0: bound each original component is anchored at
    sign: np.ndarray          # +1, or -1 for components anchored at an upper bound
    objective_offset: float
    n_orig: int
    m_orig: int
    boxed: list[int]          # original component ids that got a balance row
    kept_rows: list[int]      # standardized row ids surviving the dead-row drop
    dead_rows: list[int]
    inconsistent_row: int | None = None

    def recover(self, it: Iterate, g: GeneralQp
                ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Map a standardized iterate to (x, y, z) in original coordinates.

        z holds the reduced costs Hhat x + c - Ahat' y of the original
        variables, the combined multiplier of their bounds.  Dropped
        redundant rows carry a zero multiplier.
        """
        nm = self.n_orig + self.m_orig
        v = self.anchor + self.sign * it.x[:nm]
        x = v[:self.n_orig]
        y = np.zeros(self.m_orig)
        for pos, i in enumerate(self.kept_rows):
            if i < self.m_orig:
                y[i] = it.y[pos]
        z = g.Hhat @ x + g.c - g.Ahat.T @ y
        return x, y, z


def standardize(g: GeneralQp) -> Standardized:
    """Convert a general-format problem to shifted standard form.

    Returns the standard-form problem (variables ordered: originals,
    row slacks, then balance slacks for two-sided components), the bound
    vectors, a fresh temporary-bound registry, and the back-map data.
    """
    n, m = g.n, g.m
    nm = n + m
    lo, up = g.lower, g.upper
    anchor = np.zeros(nm)
    sign = np.ones(nm)
    free: set[int] = set()
    fixed: set[int] = set()
    boxed: list[int] = []
    for j in range(nm):
        lo_fin = math.isfinite(lo[j])
        up_fin = math.isfinite(up[j])
        if lo_fin and up_fin:
            anchor[j] = lo[j]
            if lo[j] == up[j]:
                fixed.add(j)
            else:
                boxed.append(j)
        elif lo_fin:
            anchor[j] = lo[j]
        elif up_fin:
            anchor[j] = up[j]
            sign[j] = -1.0
        else:
            free.add(j)

    nb = len(boxed)
    n_std = nm + nb
    m_std = m + nb

    hbar = np.zeros((n_std, n_std))
    hbar[:n, :n] = g.Hhat
    dfull = np.ones(n_std)
    dfull[:nm] = sign
    h_std = hbar * np.outer(dfull, dfull)

    grad = g.Hhat @ anchor[:n] + g.c
    c_std = np.zeros(n_std)
    c_std[:n] = sign[:n] * grad
    offset = float(0.5 * anchor[:n] @ g.Hhat @ anchor[:n] + g.c @ anchor[:n])

    cv = np.hstack([g.Ahat, -np.eye(m)])
    a_std = np.zeros((m_std, n_std))
    a_std[:m, :nm] = cv * sign
    b_std = np.zeros(m_std)
    b_std[:m] = -cv @ anchor
    for k, j in enumerate(boxed):
        a_std[m + k, j] = 1.0
        a_std[m + k, nm + k] = 1.0
        b_std[m + k] = up[j] - lo[j]

    # A row whose every live (non-fixed) coefficient vanishes pins nothing:
    # it is redundant when the fixed values satisfy it and a proof of
    # primal infeasibility otherwise.
    live = [j for j in range(n_std) if j not in fixed]
    kept_rows = list(range(m_std))
    dead_rows: list[int] = []
    inconsistent = None
    for i in range(m):
        row_live = np.max(np.abs(a_std[i, live])) if live else 0.0
        if row_live > 1e-12 * max(1.0, float(np.max(np.abs(a_std[i])))):
            continue
        slack = 1e-9 * (1.0 + float(np.abs(a_std[i, :nm]) @ np.abs(anchor))
                        + abs(b_std[i]))
        if abs(b_std[i]) > slack:
            inconsistent = i
            break
        dead_rows.append(i)

    base = Standardized(problem=None, lower=lo.copy(), upper=up.copy(),
                        registry=TemporaryBoundRegistry(), anchor=anchor,
                        sign=sign, objective_offset=offset,
                        n_orig=n, m_orig=m, boxed=boxed,
                        kept_rows=kept_rows, dead_rows=dead_rows,
                        inconsistent_row=inconsistent)
    if inconsistent is not None:
        return base
    if dead_rows:
        kept_rows = [i for i in range(m_std) if i not in set(dead_rows)]
        a_std = a_std[kept_rows]
        b_std = b_std[kept_rows]
        m_std = len(kept_rows)
        base.kept_rows = kept_rows
    base.problem = QpProblem(H=h_std, M=np.zeros((m_std, m_std)), A=a_std,
                             b=b_std, c=c_std,
                             free=frozenset(free), fixed=frozenset(fixed))
    return base


def init_shifts(p: QpProblem, part: Partition,
                registry: TemporaryBoundRegistry | None = None
                ) -> tuple[Shifts, Iterate]:
    """Minimal shifts making the given basis optimal for the shifted pair.

    With q_N = 0 and r_B = 0 the boundary system determines (x_B, y) and
    z_N; taking q_B = max(-x_B, 0) and r_N = max(-z_N, 0) componentwise
    makes the point jointly optimal.  Free variables get no primal shift;
    a free nonbasic variable j is registered as a temporary bound with
    dual shift r_j = -z_j.
    """
    f = factor_kb_or_raise(p, part)
    it = solve_boundary_point(p, Shifts.zero(p.n), part, f)
    q0 = np.zeros(p.n)
    r0 = np.zeros(p.n)
    for i in part.basic:
        if i in p.free:
            continue
        q0[i] = max(-float(it.x[i]), 0.0)
    for j in part.nonbasic:
        if j in p.fixed:
            continue
        if j in p.free:
            r0[j] = -float(it.z[j])
            if registry is not None:
                registry.register(j, 0.0, float(it.z[j]))
        else:
            r0[j] = max(-float(it.z[j]), 0.0)
    return Shifts(q0, r0), it


def temporary_bound_pass(registry: TemporaryBoundRegistry, stage: str,
                         it: Iterate, reference: dict[int, float] | None = None,
                         tol: float = 1e-7) -> None:
    """Verify the temporary-bound contract after a stage.

    After a primal stage every registered dual must be zero; after a dual
    stage every registered dual must be unchanged from the stage start
    (pass the start values as ``reference``).
    """
    if not registry.entries:
        return
    scale = max(1.0, float(np.max(np.abs(it.z))) if it.z.size else 0.0)
    for j in registry.indices():
        if stage == "primal":
            if abs(it.z[j]) > tol * scale:
                raise InvariantError(
                    f"temporary-bound dual z[{j}] = {it.z[j]:.3e} nonzero "
                    f"after a primal stage")
        elif stage == "dual":
            want = reference.get(j, 0.0) if reference else 0.0
            if abs(it.z[j] - want) > tol * scale:
                raise InvariantError(
                    f"temporary-bound dual z[{j}] moved during a dual stage")
        else:
            raise ValueError(f"unknown stage {stage!r}")


@dataclass
class SolveConfig:
    opt_tol: float = 1e-6
    fea_tol: float = 1e-6
    max_iterations: int = 0
    bland_after: int = 50
    strategy: str = "auto"   # auto | primal-first | dual-first | primal-only | dual-only
    trace: TraceSink | None = None
    check_invariants: bool = False
    initial_basis: list[int] | None = None

    def limits(self) -> SolveLimits:
        return SolveLimits(max_iterations=self.max_iterations,
                           bland_after=self.bland_after)


@dataclass
class StageLog:
    method: str
    status: str
    iterations: int
    subiterations: int
    f_primal: float
    f_dual: float
    q_dot_r: float


@dataclass
class StandardSolution:
    """Result of the combined pipeline on a standard-form problem."""

    status: str
    iterate: Iterate
    partition: Partition
    objective: float
    strategy: str
    stage_log: list[StageLog]
    shifts_initial: Shifts
    registry: TemporaryBoundRegistry
    iterations: int
    subiterations: int


@dataclass
class PdqpSolution:
    """Result of solve_pdqp in original coordinates."""

    status: str
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    objective: float
    strategy: str
    stage_log: list[StageLog]
    standardized: StandardSolution | None


def _is_dual_feasible_start(p: QpProblem, part: Partition, it: Iterate,
                            registry: TemporaryBoundRegistry,
                            fea_tol: float) -> bool:
    y_scale = max(1.0, float(np.max(np.abs(it.y))) if it.y.size else 0.0)
    for j in part.nonbasic:
        if j in p.fixed or j in p.free:
            continue
        if it.z[j] < -fea_tol * y_scale:
            return False
    for j in registry.unreleased_nonbasic():
        if abs(registry.entries[j].dual) > fea_tol:
            return False
    return True


def _stage_log(p: QpProblem, s: Shifts, out) -> StageLog:
    method = "primal" if isinstance(out, PrimalOutcome) else "dual"
    return StageLog(method=method, status=out.status,
                    iterations=out.iterations,
                    subiterations=out.subiterations,
                    f_primal=primal_objective(p, s, out.iterate),
                    f_dual=dual_objective(p, s, out.iterate),
                    q_dot_r=float(s.q @ s.r))


def solve_standard(p: QpProblem, config: SolveConfig | None = None,
                   registry: TemporaryBoundRegistry | None = None
                   ) -> StandardSolution:
    """Run the combined strategy on a standard-form problem."""
    config = config or SolveConfig()
    if config.initial_basis is not None:
        chosen = set(config.initial_basis)
        if chosen & p.fixed:
            raise ProblemError("fixed variables cannot be basic")
        part = Partition(basic=sorted(chosen),
                         nonbasic=[j for j in range(p.n) if j not in chosen])
        factor_kb_or_raise(p, part)
    else:
        part = find_soc_basis(p, prefer=sorted(p.free)).partition
    registry = registry if registry is not None else TemporaryBoundRegistry()
    shifts0, it = init_shifts(p, part, registry)
    report = check_optimality(p, shifts0, it, config.fea_tol, config.opt_tol)
    if not report.optimal:
        raise InvariantError("initial shifted point failed the optimality "
                             f"check: {report}")

    strategy = config.strategy
    if strategy == "auto":
        strategy = ("dual-first"
                    if _is_dual_feasible_start(p, part, it, registry,
                                               config.fea_tol)
                    else "primal-first")

    zero = Shifts.zero(p.n)
    limits = config.limits()
    kw = dict(opt_tol=config.opt_tol, fea_tol=config.fea_tol,
              temp_bounds=registry, trace=config.trace,
              check_invariants=config.check_invariants)
    logs: list[StageLog] = []

    def finish(out) -> StandardSolution:
        iters = sum(lg.iterations for lg in logs)
        subs = sum(lg.subiterations for lg in logs)
        obj = primal_objective(p, zero, out.iterate)
        if out.status == OPTIMAL:
            rep = check_optimality(p, zero, out.iterate,
                                   config.fea_tol, config.opt_tol)
            if not rep.optimal:
                raise InvariantError(f"final point failed the optimality "
                                     f"check: {rep}")
            for j in registry.indices():
                if abs(out.iterate.z[j]) > 1e-7 * max(1.0, float(np.max(np.abs(out.iterate.z)))):
                    raise InvariantError(
                        f"temporary-bound dual z[{j}] nonzero at completion")
        return StandardSolution(status=out.status, iterate=out.iterate,
                                partition=out.partition, objective=obj,
                                strategy=strategy, stage_log=logs,
                                shifts_initial=shifts0, registry=registry,
                                iterations=iters, subiterations=subs)

    if strategy == "primal-first":
        s1 = shifts0.with_r(np.zeros(p.n))
        out1 = solve_primal(p, s1, (it, part), limits, **kw)
        logs.append(_stage_log(p, s1, out1))
        if out1.status != OPTIMAL:
            return finish(out1)
        temporary_bound_pass(registry, "primal", out1.iterate)
        ref = {j: float(out1.iterate.z[j]) for j in registry.indices()}
        out2 = solve_dual(p, zero, (out1.iterate, out1.partition), limits, **kw)
        logs.append(_stage_log(p, zero, out2))
        if out2.status == OPTIMAL:
            temporary_bound_pass(registry, "dual", out2.iterate, ref)
        return finish(out2)

    if strategy == "dual-first":
        s1 = shifts0.with_q(np.zeros(p.n))
        ref = {j: float(it.z[j]) for j in registry.indices()}
        out1 = solve_dual(p, s1, (it, part), limits, **kw)
        logs.append(_stage_log(p, s1, out1))
        if out1.status != OPTIMAL:
            return finish(out1)
        temporary_bound_pass(registry, "dual", out1.iterate, ref)
        out2 = solve_primal(p, zero, (out1.iterate, out1.partition), limits, **kw)
        logs.append(_stage_log(p, zero, out2))
        if out2.status == OPTIMAL:
            temporary_bound_pass(registry, "primal", out2.iterate)
        return finish(out2)

    if strategy == "primal-only":
        if float(np.max(shifts0.q, initial=0.0)) > config.fea_tol:
            raise ProblemError("primal-only requires a primal-feasible "
                               "initial basis (zero primal shifts)")
        out = solve_primal(p, zero, (it, part), limits, **kw)
        logs.append(_stage_log(p, zero, out))
        if out.status == OPTIMAL:
            temporary_bound_pass(registry, "primal", out.iterate)
        return finish(out)

    if strategy == "dual-only":
        if float(np.max(np.abs(shifts0.r), initial=0.0)) > config.opt_tol:
            raise ProblemError("dual-only requires a dual-feasible initial "
                               "basis (zero dual shifts)")
        out = solve_dual(p, zero, (it, part), limits, **kw)
        logs.append(_stage_log(p, zero, out))
        return finish(out)

    raise ValueError(f"unknown strategy {config.strategy!r}")


def solve_pdqp(g: GeneralQp, config: SolveConfig | None = None) -> PdqpSolution:
    """Standardize a general-format problem, solve it, and map the
    solution back to the original coordinates."""
    std = standardize(g)
    if std.inconsistent_row is not None:
        x = std.anchor[:g.n]
        y = np.zeros(g.m)
        z = g.Hhat @ x + g.c - g.Ahat.T @ y
        return PdqpSolution(status=PRIMAL_INFEASIBLE, x=x, y=y, z=z,
                            objective=float(0.5 * x @ g.Hhat @ x + g.c @ x),
                            strategy="presolve", stage_log=[],
                            standardized=None)
    sol = solve_standard(std.problem, config, registry=std.registry)
    x, y, z = std.recover(sol.iterate, g)
    objective = float(0.5 * x @ g.Hhat @ x + g.c @ x)
    return PdqpSolution(status=sol.status, x=x, y=y, z=z,
                        objective=objective, strategy=sol.strategy,
                        stage_log=sol.stage_log, standardized=sol)
