"""Problem data, solver state, and optimality measures.

The solver works on a convex quadratic program in shifted standard form:

    minimize    0.5 x'Hx + 0.5 y'My + c'x + r'x
    subject to  Ax + My = b,   x >= -q,

together with its dual

    maximize    -0.5 x'Hx - 0.5 y'My + b'y - q'z
    subject to  Hx + c - A'y - z = 0,   z >= -r,

where H and M are symmetric positive semidefinite and the shift vectors
(q, r) relax the primal and dual bounds.  A triple (x, y, z) is jointly
optimal for the pair iff

    (a) Hx + c - A'y - z = 0
    (b) Ax + My - b = 0
    (c) x + q >= 0
    (d) z + r >= 0
    (e) (x + q)'(z + r) = 0.

Variables may additionally be marked *free* (no bound exists on x_j, so
condition (c) is void and (d) sharpens to z_j + r_j = 0) or *fixed*
(x_j is pinned at its bound, its dual is unrestricted, so (d) is void).
Plain problems leave both sets empty.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


class ProblemError(ValueError):
    """Raised for invalid problem data: bad shapes, indefinite H or M,
    or a rank-deficient [A M] block."""


class StartConditionError(ValueError):
    """Raised when a solve is started from a state that violates the
    method's entry conditions."""


class InvariantError(RuntimeError):
    """Raised when an internal solver invariant fails at runtime."""


PSD_PIVOT_TOL = 1e-10
RANK_TOL = 1e-10


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


def _check_psd(s: np.ndarray, name: str, tol: float = PSD_PIVOT_TOL) -> None:
    """Pivoted-Cholesky style semidefiniteness test.

    Greedily eliminates the largest remaining diagonal; a diagonal pivot
    below -tol * max-diagonal rejects the matrix.
    """
    k = s.shape[0]
    if k == 0:
        return
    w = np.array(s, dtype=float)
    scale = max(float(np.max(np.diag(w))), 0.0)
    cutoff = tol * max(1.0, scale)
    active = np.ones(k, dtype=bool)
    for _ in range(k):
        d = np.where(active, np.diag(w), -np.inf)
        j = int(np.argmax(d))
        piv = d[j]
        if piv <= cutoff:
            rest = np.diag(w)[active]
            if rest.size and float(np.min(rest)) < -cutoff:
                raise ProblemError(f"{name} is not positive semidefinite "
                                   f"(pivot {float(np.min(rest)):.3e})")
            return
        col = np.where(active, w[:, j], 0.0)
        w -= np.outer(col, col) / piv
        active[j] = False


def _check_row_rank(a: np.ndarray, m: int) -> None:
    """Full-row-rank test via column-pivoted QR of the transpose."""
    if m == 0:
        return
    r = scipy.linalg.qr(a.T, mode="r", pivoting=True)[0]
    diag = np.abs(np.diag(r))
    scale = diag[0] if diag.size else 0.0
    rank = int(np.sum(diag > RANK_TOL * max(1.0, scale)))
    if rank < m:
        raise ProblemError(
            f"[A M] is rank deficient: rank {rank} < {m} rows; remove "
            f"dependent equality rows before constructing the problem")


@dataclass(frozen=True)
class QpProblem:
    """Immutable problem data (H, M, A, b, c) plus bound-existence markers.

    ``free`` lists variables with no bound at all; ``fixed`` lists
    variables pinned at their bound with an unrestricted dual.  Both are
    empty for a plain standard-form problem.
    """

    H: np.ndarray
    M: np.ndarray
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    free: frozenset[int] = frozenset()
    fixed: frozenset[int] = frozenset()

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        A = np.asarray(self.A, dtype=float)
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        n = c.shape[0]
        m = b.shape[0]
        if A.size == 0:
            A = A.reshape(m, n)
        if M.size == 0:
            M = M.reshape(m, m)
        if H.shape != (n, n):
            raise ProblemError(f"H must be {n}x{n}, got {H.shape}")
        if M.shape != (m, m):
            raise ProblemError(f"M must be {m}x{m}, got {M.shape}")
        if A.shape != (m, n):
            raise ProblemError(f"A must be {m}x{n}, got {A.shape}")
        for s, name in ((H, "H"), (M, "M")):
            scale = max(1.0, float(np.max(np.abs(s))) if s.size else 0.0)
            if s.size and float(np.max(np.abs(s - s.T))) > 1e-12 * scale:
                raise ProblemError(f"{name} is not symmetric")
        # The lower triangle is authoritative.
        H = np.tril(H) + np.tril(H, -1).T
        M = np.tril(M) + np.tril(M, -1).T
        _check_psd(H, "H")
        _check_psd(M, "M")
        _check_row_rank(np.hstack([A, M]), m)
        if self.fixed:
            live = [j for j in range(n) if j not in self.fixed]
            try:
                _check_row_rank(np.hstack([A[:, live], M]), m)
            except ProblemError:
                raise ProblemError(
                    "[A M] loses full row rank once fixed variables are "
                    "pinned; rows supported only by fixed variables must be "
                    "dropped or resolved before constructing the problem"
                ) from None
        bad = (self.free | self.fixed) - set(range(n))
        if bad:
            raise ProblemError(f"free/fixed indices out of range: {sorted(bad)}")
        if self.free & self.fixed:
            raise ProblemError("an index cannot be both free and fixed")
        object.__setattr__(self, "H", _readonly(H))
        object.__setattr__(self, "M", _readonly(M))
        object.__setattr__(self, "A", _readonly(A))
        object.__setattr__(self, "b", _readonly(b))
        object.__setattr__(self, "c", _readonly(c))
        object.__setattr__(self, "free", frozenset(self.free))
        object.__setattr__(self, "fixed", frozenset(self.fixed))

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[0]

    def kkt_scale(self) -> float:
        """Infinity-norm scale of the full KKT matrix data."""
        parts = [np.max(np.abs(x)) if x.size else 0.0
                 for x in (self.H, self.M, self.A)]
        return max(1.0, float(max(parts)))


@dataclass(frozen=True)
class Shifts:
    """Primal (q) and dual (r) bound shifts."""

    q: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        r = np.atleast_1d(np.asarray(self.r, dtype=float))
        if q.shape != r.shape:
            raise ProblemError("q and r must have the same length")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(r))):
            raise ProblemError("shift entries must be finite")
        object.__setattr__(self, "q", _readonly(q))
        object.__setattr__(self, "r", _readonly(r))

    @classmethod
    def zero(cls, n: int) -> "Shifts":
        return cls(np.zeros(n), np.zeros(n))

    def with_q(self, q) -> "Shifts":
        return Shifts(q, self.r)

    def with_r(self, r) -> "Shifts":
        return Shifts(self.q, r)


@dataclass
class Partition:
    """Index sets driving the active-set state machine.

    ``basic`` and ``nonbasic`` partition {0..n-1} except for at most one
    ``freed`` index which belongs to neither while a direction is being
    followed.  Both lists are kept sorted ascending.
    """

    basic: list[int]
    nonbasic: list[int]
    freed: int | None = None

    def __post_init__(self):
        self.basic = sorted(int(i) for i in self.basic)
        self.nonbasic = sorted(int(i) for i in self.nonbasic)

    def validate(self, n: int) -> None:
        groups = [self.basic, self.nonbasic]
        if self.freed is not None:
            groups.append([self.freed])
        seen: set[int] = set()
        for g in groups:
            for i in g:
                if i in seen:
                    raise InvariantError(f"index {i} appears twice in partition")
                seen.add(i)
        if seen != set(range(n)):
            raise InvariantError("partition does not cover 0..n-1")

    def copy(self) -> "Partition":
        return Partition(list(self.basic), list(self.nonbasic), self.freed)

    def free_index(self, l: int) -> None:
        """Remove l from whichever set holds it and mark it freed."""
        if self.freed is not None:
            raise InvariantError("a freed index is already pending")
        if l in self.basic:
            self.basic.remove(l)
        elif l in self.nonbasic:
            self.nonbasic.remove(l)
        else:
            raise InvariantError(f"index {l} not in partition")
        self.freed = l

    def bind_freed_basic(self) -> None:
        self.basic = sorted(self.basic + [self.freed])
        self.freed = None

    def bind_freed_nonbasic(self) -> None:
        self.nonbasic = sorted(self.nonbasic + [self.freed])
        self.freed = None

    def move_basic_to_nonbasic(self, k: int) -> None:
        self.basic.remove(k)
        self.nonbasic = sorted(self.nonbasic + [k])

    def move_nonbasic_to_basic(self, k: int) -> None:
        self.nonbasic.remove(k)
        self.basic = sorted(self.basic + [k])


@dataclass
class Iterate:
    """The point (x, y, z).  Mutable; owned by a single solve."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_1d(np.asarray(self.x, dtype=float)).copy()
        self.y = np.asarray(self.y, dtype=float).reshape(-1).copy()
        self.z = np.atleast_1d(np.asarray(self.z, dtype=float)).copy()

    def copy(self) -> "Iterate":
        return Iterate(self.x.copy(), self.y.copy(), self.z.copy())


@dataclass
class Direction:
    """A search direction (dx, dy, dz) with the freed components singled out.

    dx vanishes on the nonbasic set and dz on the basic set; only the
    freed index l carries both a primal and a dual component.  ``basic``
    records the basic set the direction was solved against.
    """

    dx: np.ndarray
    dy: np.ndarray
    dz: np.ndarray
    freed: int
    dx_l: float
    dz_l: float
    basic: tuple[int, ...] = ()

    def negated(self) -> "Direction":
        return Direction(-self.dx, -self.dy, -self.dz, self.freed,
                         -self.dx_l, -self.dz_l, self.basic)


@dataclass(frozen=True)
class OptimalityReport:
    """The five joint optimality measures and the verdict."""

    stationarity_residual: float
    equality_residual: float
    worst_primal_violation: float
    worst_dual_violation: float
    complementarity: float
    optimal: bool


def primal_objective(p: QpProblem, s: Shifts, it: Iterate) -> float:
    """0.5 x'Hx + 0.5 y'My + c'x + r'x."""
    x, y = it.x, it.y
    return float(0.5 * x @ p.H @ x + 0.5 * y @ p.M @ y + p.c @ x + s.r @ x)


def dual_objective(p: QpProblem, s: Shifts, it: Iterate) -> float:
    """-0.5 x'Hx - 0.5 y'My + b'y - q'z."""
    x, y, z = it.x, it.y, it.z
    return float(-0.5 * x @ p.H @ x - 0.5 * y @ p.M @ y + p.b @ y - s.q @ z)


def residuals(p: QpProblem, it: Iterate) -> tuple[np.ndarray, np.ndarray]:
    """Stationarity residual Hx + c - A'y - z and equality residual
    Ax + My - b."""
    stat = p.H @ it.x + p.c - p.A.T @ it.y - it.z
    eq = p.A @ it.x + p.M @ it.y - p.b
    return stat, eq


def check_optimality(p: QpProblem, s: Shifts, it: Iterate,
                     eps_fea: float = 1e-6,
                     eps_opt: float = 1e-6) -> OptimalityReport:
    """Evaluate the joint optimality conditions (a)-(e).

    The residual tests scale with the problem data, the primal bound test
    is absolute in eps_fea, and the dual sign test is scaled by
    max(1, ||y||_inf).  Free variables are exempt from the primal bound
    test but must satisfy |z_j + r_j| <= tolerance; fixed variables are
    exempt from the dual sign test.
    """
    if eps_fea <= 0 or eps_opt <= 0:
        raise ValueError("tolerances must be positive")
    stat, eq = residuals(p, it)
    stat_res = float(np.max(np.abs(stat))) if stat.size else 0.0
    eq_res = float(np.max(np.abs(eq))) if eq.size else 0.0

    xq = it.x + s.q
    zr = it.z + s.r
    n = p.n
    regular = [j for j in range(n) if j not in p.free and j not in p.fixed]

    bounded = [j for j in range(n) if j not in p.free]
    worst_primal = 0.0
    if bounded:
        worst_primal = max(0.0, float(np.max(-xq[bounded])))

    worst_dual = 0.0
    sign_tested = [j for j in range(n) if j not in p.fixed and j not in p.free]
    if sign_tested:
        worst_dual = max(worst_dual, float(np.max(-zr[sign_tested])))
    for j in sorted(p.free):
        worst_dual = max(worst_dual, abs(float(zr[j])))

    comp = 0.0
    if regular:
        comp = float(np.max(np.abs(xq[regular] * zr[regular])))

    data_scale = 1.0 + float(np.max(np.abs(p.c)) if p.c.size else 0.0) \
        + float(np.max(np.abs(p.b)) if p.b.size else 0.0)
    y_scale = max(1.0, float(np.max(np.abs(it.y))) if it.y.size else 0.0)
    x_scale = max(1.0, float(np.max(np.abs(xq))) if xq.size else 0.0)

    ok = (stat_res <= eps_fea * data_scale
          and eq_res <= eps_fea * data_scale
          and worst_primal <= eps_fea
          and worst_dual <= eps_opt * y_scale
          and comp <= eps_opt * y_scale * x_scale)
    return OptimalityReport(stat_res, eq_res, worst_primal, worst_dual,
                            comp, ok)


def effective_shifts(p: QpProblem, s: Shifts, part: Partition, it: Iterate,
                     tol: float = 1e-9) -> Shifts:
    """Shifts aligned with the current point on relaxed entries.

    A relaxed start can leave basic duals with z_i + r_i < 0 or nonbasic
    primals with x_j + q_j < 0.  Replacing those shift entries with -z_i
    (resp. -x_j) restores the boundary equalities, which is the shift
    vector under which the per-step objective identities hold.
    """
    q = np.array(s.q)
    r = np.array(s.r)
    for i in part.basic:
        if abs(it.z[i] + r[i]) > tol:
            r[i] = -it.z[i]
    for j in part.nonbasic:
        if abs(it.x[j] + q[j]) > tol:
            q[j] = -it.x[j]
    return Shifts(q, r)


def boundary_residuals(p: QpProblem, s: Shifts, part: Partition,
                       it: Iterate) -> float:
    """Largest violation of the boundary equalities x_N + q_N = 0 and
    z_B + r_B = 0 (ignoring relaxed-start entries is the caller's job)."""
    worst = 0.0
    if part.nonbasic:
        worst = max(worst, float(np.max(np.abs(it.x[part.nonbasic]
                                               + s.q[part.nonbasic]))))
    if part.basic:
        worst = max(worst, float(np.max(np.abs(it.z[part.basic]
                                               + s.r[part.basic]))))
    return worst
