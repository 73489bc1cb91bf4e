"""KKT linear algebra: symmetric indefinite factorization with deferred
pivots, basis discovery, and the direction solves.

For a basic set B the matrix

    K_B = [ H_BB  A_B' ]
          [ A_B   -M   ]

is factored as P' K_B P = L D L' with unit lower triangular L and block
diagonal D of 1x1 and 2x2 pivots.  Pivots whose magnitude falls below a
relative tolerance are deferred; a completed factorization certifies that
B is second-order consistent, and a deferral yields a singularity report
carrying a null vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .model import Direction, Iterate, Partition, QpProblem, Shifts

PIVOT_TOL = 1e-11


class KktInternalError(RuntimeError):
    """A KKT matrix that theory guarantees nonsingular came out singular,
    or a solved direction violates a sign guarantee."""


@dataclass
class _LdlData:
    """Raw output of the elimination engine (permuted coordinates)."""

    perm: np.ndarray          # perm[pos] = original index
    eliminated: int           # number of pivoted rows/columns
    lower: np.ndarray         # unit lower factor, eliminated block only
    dblocks: list[tuple[int, np.ndarray]]   # (start position, 1x1 or 2x2)
    deferred: np.ndarray      # original indices never pivoted
    matrix: np.ndarray        # copy of the input matrix
    scale: float

    def logabsdet(self) -> tuple[float, float]:
        """(sign, log|det|) over the pivot blocks."""
        sign = 1.0
        logabs = 0.0
        for _, block in self.dblocks:
            det = (block[0, 0] if block.shape[0] == 1
                   else block[0, 0] * block[1, 1] - block[0, 1] * block[1, 0])
            sign *= 1.0 if det > 0 else -1.0
            logabs += float(np.log(abs(det)))
        return sign, logabs


def _swap(w: np.ndarray, perm: np.ndarray, i: int, j: int) -> None:
    if i == j:
        return
    w[[i, j], :] = w[[j, i], :]
    w[:, [i, j]] = w[:, [j, i]]
    perm[[i, j]] = perm[[j, i]]


def _inv2(p: np.ndarray) -> np.ndarray:
    det = p[0, 0] * p[1, 1] - p[0, 1] * p[1, 0]
    return np.array([[p[1, 1], -p[0, 1]], [-p[1, 0], p[0, 0]]]) / det


def _factor_symmetric_indefinite(k: np.ndarray,
                                 forced_first: list[int] | None = None
                                 ) -> _LdlData:
    """Greedy LDL' elimination with 1x1 diagonal and 2x2 off-diagonal
    pivots.

    Pivot order: largest-magnitude eligible diagonal first, otherwise the
    largest off-diagonal 2x2; ties broken by least original index.  When
    the remaining block falls below the pivot tolerance, every remaining
    index is deferred.  ``forced_first`` indices are tried as leading 1x1
    pivots (in the given order) when their current diagonal is eligible.
    """
    dim = k.shape[0]
    w = np.array(k, dtype=float)
    perm = np.arange(dim)
    scale = float(np.max(np.abs(k))) if dim else 0.0
    tol = PIVOT_TOL * scale
    dblocks: list[tuple[int, np.ndarray]] = []
    pos = 0

    def eliminate_1x1(at: int) -> None:
        nonlocal pos
        _swap(w, perm, pos, at)
        piv = w[pos, pos]
        col = w[pos + 1:, pos].copy()
        mult = col / piv
        w[pos + 1:, pos + 1:] -= np.outer(mult, col)
        w[pos + 1:, pos] = mult
        w[pos, pos + 1:] = mult
        dblocks.append((pos, np.array([[piv]])))
        pos += 1

    def eliminate_2x2(at_i: int, at_j: int) -> None:
        nonlocal pos
        _swap(w, perm, pos, at_i)
        if at_j == pos:
            at_j = at_i
        _swap(w, perm, pos + 1, at_j)
        block = w[pos:pos + 2, pos:pos + 2].copy()
        u = w[pos + 2:, pos:pos + 2].copy()
        mult = u @ _inv2(block)
        w[pos + 2:, pos + 2:] -= mult @ u.T
        w[pos + 2:, pos:pos + 2] = mult
        w[pos:pos + 2, pos + 2:] = mult.T
        dblocks.append((pos, block))
        pos += 2

    for orig in forced_first or []:
        where = np.nonzero(perm[pos:] == orig)[0]
        if where.size == 0:
            continue
        at = pos + int(where[0])
        if abs(w[at, at]) > tol:
            eliminate_1x1(at)

    while pos < dim:
        diag = np.abs(np.diag(w)[pos:])
        dmax = float(np.max(diag))
        if dmax > tol:
            ties = pos + np.nonzero(diag == dmax)[0]
            at = int(ties[np.argmin(perm[ties])])
            eliminate_1x1(at)
            continue
        sub = np.tril(np.abs(w[pos:, pos:]), -1)
        omax = float(np.max(sub)) if sub.size else 0.0
        if omax <= tol:
            break
        pairs = []
        for a, b in zip(*np.nonzero(sub == omax)):
            pa, pb = pos + int(a), pos + int(b)
            if perm[pa] > perm[pb]:
                pa, pb = pb, pa
            pairs.append((perm[pa], perm[pb], pa, pb))
        _, _, at_i, at_j = min(pairs)
        eliminate_2x2(at_i, at_j)

    lower = np.tril(w[:pos, :pos], -1) + np.eye(pos)
    for start, block in dblocks:
        if block.shape[0] == 2:
            lower[start + 1, start] = 0.0
    return _LdlData(perm=perm, eliminated=pos, lower=lower, dblocks=dblocks,
                    deferred=perm[pos:].copy(), matrix=np.array(k, dtype=float),
                    scale=scale)


def _block_diag_solve(dblocks, rhs: np.ndarray) -> np.ndarray:
    out = rhs.copy()
    for start, block in dblocks:
        if block.shape[0] == 1:
            out[start] = rhs[start] / block[0, 0]
        else:
            out[start:start + 2] = _inv2(block) @ rhs[start:start + 2]
    return out


def _ldl_solve(data: _LdlData, rhs: np.ndarray) -> np.ndarray:
    """Solve with a completed factorization, one refinement step."""
    def once(r):
        pb = r[data.perm]
        t = scipy.linalg.solve_triangular(data.lower, pb, lower=True,
                                          unit_diagonal=True)
        t = _block_diag_solve(data.dblocks, t)
        t = scipy.linalg.solve_triangular(data.lower.T, t, lower=False,
                                          unit_diagonal=True)
        out = np.empty_like(t)
        out[data.perm] = t
        return out

    x = once(rhs)
    x += once(rhs - data.matrix @ x)
    return x


def _null_vector(data: _LdlData) -> np.ndarray:
    """A unit null vector of the (singular) input matrix, built from the
    first deferred column against the eliminated block."""
    dim = data.matrix.shape[0]
    ne = data.eliminated
    kp = data.matrix[np.ix_(data.perm, data.perm)]
    v = np.zeros(dim)
    v[ne] = 1.0
    if ne:
        rhs = kp[:ne, ne]
        t = scipy.linalg.solve_triangular(data.lower, rhs, lower=True,
                                          unit_diagonal=True)
        t = _block_diag_solve(data.dblocks, t)
        t = scipy.linalg.solve_triangular(data.lower.T, t, lower=False,
                                          unit_diagonal=True)
        v[:ne] = -t
    out = np.empty(dim)
    out[data.perm] = v
    return out / np.linalg.norm(out)


@dataclass
class KktFactorization:
    """A reusable factorization of K_B; existing means B is second-order
    consistent.  Immutable once built."""

    basis: tuple[int, ...]
    dim: int
    _data: _LdlData

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape != (self.dim,):
            raise ValueError(f"rhs must have length {self.dim}")
        return _ldl_solve(self._data, rhs)

    def matrix(self) -> np.ndarray:
        return self._data.matrix.copy()


@dataclass
class SingularReport:
    """Evidence that K_B is singular: a unit null vector of K_B."""

    basis: tuple[int, ...]
    dim: int
    null_vector: np.ndarray
    message: str = ""


@dataclass
class SocBasisResult:
    """A partition whose K_B factors, plus the columns deferred as
    singular pivots on the way."""

    partition: Partition
    deferred: list[int]


def build_kb(p: QpProblem, basic: list[int]) -> np.ndarray:
    """Assemble K_B = [[H_BB, A_B'], [A_B, -M]] for an ordered basic set."""
    hbb = p.H[np.ix_(basic, basic)]
    ab = p.A[:, basic]
    top = np.hstack([hbb, ab.T])
    bottom = np.hstack([ab, -p.M])
    return np.vstack([top, bottom])


def build_kl(p: QpProblem, basic: list[int], l: int) -> np.ndarray:
    """Assemble the bordered matrix K_l with the freed index leading."""
    return build_kb(p, [l] + list(basic))


def factor_kb(p: QpProblem, part: Partition) -> KktFactorization | SingularReport:
    """Factor K_B.  Returns a SingularReport instead of raising when K_B is
    singular within the pivot tolerance."""
    basic = list(part.basic)
    kb = build_kb(p, basic)
    data = _factor_symmetric_indefinite(kb)
    if data.deferred.size:
        return SingularReport(basis=tuple(basic), dim=kb.shape[0],
                              null_vector=_null_vector(data),
                              message=f"{data.deferred.size} deferred pivot(s)")
    return KktFactorization(basis=tuple(basic), dim=kb.shape[0], _data=data)


def factor_kb_or_raise(p: QpProblem, part: Partition) -> KktFactorization:
    f = factor_kb(p, part)
    if isinstance(f, SingularReport):
        raise KktInternalError(
            f"K_B unexpectedly singular for basis {f.basis}: {f.message}")
    return f


def refactor_after_swap(p: QpProblem, part: Partition,
                        old: KktFactorization | None = None,
                        removed: int | None = None,
                        added: int | None = None) -> KktFactorization:
    """Factorization of K_B after a basis change.

    Recomputes from scratch; the signature leaves room for incremental
    up/downdating later.  Singularity here contradicts the active-set
    update guarantees and is raised as an internal error.
    """
    if removed is not None and removed in part.basic:
        raise KktInternalError(f"removed index {removed} still basic")
    if added is not None and added not in part.basic:
        raise KktInternalError(f"added index {added} not basic")
    return factor_kb_or_raise(p, part)


def find_soc_basis(p: QpProblem, prefer: list[int] | None = None) -> SocBasisResult:
    """Find an initial second-order consistent basis.

    Runs the symmetric-indefinite elimination on the full KKT matrix over
    the non-fixed columns; the variable indices that get pivoted form B
    and the deferred ones form N.  ``prefer`` indices (typically free
    variables) are tried first as 1x1 pivots.  The multiplier rows must
    all be pivoted, which the full-row-rank load check guarantees.
    """
    n, m = p.n, p.m
    cand = [j for j in range(n) if j not in p.fixed]
    k_full = build_kb(p, cand)
    forced = None
    if prefer:
        pos = {j: i for i, j in enumerate(cand)}
        forced = [pos[j] for j in sorted(prefer) if j in pos]
    data = _factor_symmetric_indefinite(k_full, forced_first=forced)
    nc = len(cand)
    deferred = sorted(cand[i] for i in data.deferred if i < nc)
    if any(i >= nc for i in data.deferred):
        raise KktInternalError(
            "multiplier row deferred during basis discovery; "
            "[A M] should have full row rank")
    basic = sorted(set(cand) - set(deferred))
    part = Partition(basic=basic, nonbasic=sorted(deferred + sorted(p.fixed)))
    return SocBasisResult(partition=part, deferred=deferred)


def _freed_component(raw: float, noise: float, own: _LdlData | KktFactorization,
                     other: np.ndarray, what: str) -> float:
    """Resolve the freed component of a direction near zero.

    The dichotomy is exact: the component vanishes iff the counterpart
    matrix is singular.  When the straightforwardly computed value falls
    inside the cancellation noise band, factor the counterpart and either
    pin the component to zero or recompute it as a pivot-determinant
    ratio, which stays accurate at any data scale.
    """
    if raw > noise:
        return raw
    data = _factor_symmetric_indefinite(other)
    if data.deferred.size:
        return 0.0
    own_data = own._data if isinstance(own, KktFactorization) else own
    s_own, ld_own = own_data.logabsdet()
    s_oth, ld_oth = data.logabsdet()
    value = s_oth * s_own * float(np.exp(ld_oth - ld_own))
    if value <= 0.0:
        raise KktInternalError(
            f"{what} resolved nonpositive ({value:.3e}) against a "
            f"nonsingular counterpart matrix")
    return value


def solve_base_primal(p: QpProblem, part: Partition, f: KktFactorization,
                      l: int) -> Direction:
    """Direction with dx_l = 1 from the K_B system.

    Solves K_B [dx_B; -dy] = -[h_Bl; a_l], then recovers dz_l and dz_N.
    dz_l is nonnegative, and exactly zero iff the bordered matrix is
    singular; values lost in roundoff are settled by a determinant ratio
    against a factorization of the bordered matrix.
    """
    basic = list(part.basic)
    nb = len(basic)
    rhs = -np.concatenate([p.H[basic, l], p.A[:, l]])
    w = f.solve(rhs)
    dxb = w[:nb]
    dy = -w[nb:]
    dx = np.zeros(p.n)
    dx[l] = 1.0
    dx[basic] = dxb
    dzl = float(p.H[l, l] + p.H[basic, l] @ dxb - p.A[:, l] @ dy)
    noise = 1e-12 * float(abs(p.H[l, l])
                          + np.abs(p.H[basic, l]) @ np.abs(dxb)
                          + np.abs(p.A[:, l]) @ np.abs(dy) + 1.0)
    dzl = _freed_component(dzl, noise, f, build_kl(p, basic, l), "dz_l")
    nonbasic = list(part.nonbasic)
    dz = np.zeros(p.n)
    dz[l] = dzl
    if dzl == 0.0:
        # Singular bordered matrix: the direction is its null ray, whose
        # multiplier and dual parts vanish identically.  Zeroing them
        # discards pure cancellation noise.
        dy = np.zeros_like(dy)
    elif nonbasic:
        dz[nonbasic] = (p.H[nonbasic, l] + p.H[np.ix_(nonbasic, basic)] @ dxb
                        - p.A[:, nonbasic].T @ dy)
    return Direction(dx=dx, dy=dy, dz=dz, freed=l, dx_l=1.0, dz_l=dzl,
                     basic=tuple(basic))


def solve_intermediate_primal(p: QpProblem, part: Partition, l: int) -> Direction:
    """Direction with dz_l = 1 from the bordered K_l system.

    Solves K_l [dx_l; dx_B; -dy] = [1; 0; 0] and recovers dz_N.  K_l is
    nonsingular whenever this is called from a legal state; a singular
    K_l here is an internal invariant violation.
    """
    basic = list(part.basic)
    nb = len(basic)
    kl = build_kl(p, basic, l)
    data = _factor_symmetric_indefinite(kl)
    if data.deferred.size:
        raise KktInternalError(
            f"K_l unexpectedly singular for freed index {l}, basis {basic}")
    rhs = np.zeros(kl.shape[0])
    rhs[0] = 1.0
    w = _ldl_solve(data, rhs)
    dxl = float(w[0])
    dxb = w[1:1 + nb]
    dy = -w[1 + nb:]
    noise = 1e-12 * max(1.0, float(np.max(np.abs(w))) if w.size else 0.0)
    dxl = _freed_component(dxl, noise, data, build_kb(p, basic), "dx_l")
    if dxl == 0.0:
        # Singular K_B: every x-component of the direction vanishes and
        # only the multiplier part moves.
        dxb = np.zeros_like(dxb)
    dx = np.zeros(p.n)
    dx[l] = dxl
    dx[basic] = dxb
    nonbasic = list(part.nonbasic)
    dz = np.zeros(p.n)
    dz[l] = 1.0
    if nonbasic:
        dz[nonbasic] = (p.H[nonbasic, l] * dxl
                        + p.H[np.ix_(nonbasic, basic)] @ dxb
                        - p.A[:, nonbasic].T @ dy)
    return Direction(dx=dx, dy=dy, dz=dz, freed=l, dx_l=dxl, dz_l=1.0,
                     basic=tuple(basic))


def recover_z_nonbasic(p: QpProblem, part: Partition, it: Iterate,
                       s: Shifts) -> np.ndarray:
    """z_N = H_BN' x_B - H_NN q_N + c_N - A_N' y, the values making the
    stationarity equation hold exactly at the current (x_B, y)."""
    basic = list(part.basic)
    nonbasic = list(part.nonbasic)
    if not nonbasic:
        return np.zeros(0)
    qn = s.q[nonbasic]
    zn = (p.H[np.ix_(nonbasic, basic)] @ it.x[basic]
          - p.H[np.ix_(nonbasic, nonbasic)] @ qn
          + p.c[nonbasic] - p.A[:, nonbasic].T @ it.y)
    return zn


def solve_boundary_point(p: QpProblem, s: Shifts, part: Partition,
                         f: KktFactorization | None = None) -> Iterate:
    """Solve the boundary equations for a basis: x_N = -q_N, z_B = -r_B,
    K_B [x_B; -y] = [H_BN q_N - c_B - r_B; A_N q_N + b], then recover z_N."""
    if f is None:
        f = factor_kb_or_raise(p, part)
    basic = list(part.basic)
    nonbasic = list(part.nonbasic)
    nb = len(basic)
    qn = s.q[nonbasic]
    top = p.H[np.ix_(basic, nonbasic)] @ qn - p.c[basic] - s.r[basic]
    bottom = p.A[:, nonbasic] @ qn + p.b
    w = f.solve(np.concatenate([top, bottom]))
    x = np.zeros(p.n)
    x[basic] = w[:nb]
    x[nonbasic] = -qn
    y = -w[nb:]
    z = np.zeros(p.n)
    z[basic] = -s.r[basic]
    it = Iterate(x, y, z)
    it.z[nonbasic] = recover_z_nonbasic(p, part, it, s)
    return it
