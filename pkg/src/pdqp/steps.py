"""Step lengths, ratio tests, and trace records shared by the primal and
dual methods.  The two methods are exact mirrors of each other; the code
here is parameterized by which inequality family is being protected.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import Direction, Iterate, QpProblem, Shifts
from .model import dual_objective, primal_objective, residuals


@dataclass(frozen=True)
class StepResult:
    """Outcome of one ratio-tested step.

    alpha = min(alpha_star, alpha_max); blocking is set exactly when the
    bound ratio limited the step (alpha_max < alpha_star).
    """

    alpha: float
    alpha_star: float
    alpha_max: float
    blocking: int | None
    hit_target: bool


@dataclass
class TraceRecord:
    """One row per subiteration, enough to replay the objective identities."""

    method: str
    iteration: int
    subiteration: int
    kind: str
    l: int
    k: int | None
    alpha: float
    alpha_star: float
    alpha_max: float
    dx_l: float
    dz_l: float
    violation: float
    f_primal_before: float
    f_primal: float
    f_dual_before: float
    f_dual: float
    stationarity: float
    equality: float
    direction: Direction | None = None


TraceSink = Callable[[TraceRecord], None]


@dataclass
class SolveLimits:
    """Iteration limits and the anti-cycling switch.

    bland_after: consecutive zero-length steps before index selection
    falls back to the least-index rule.
    """

    max_iterations: int = 0
    bland_after: int = 50

    def cap(self, p: QpProblem) -> int:
        if self.max_iterations > 0:
            return self.max_iterations
        return 100 + 50 * (p.n + p.m)


def _dir_scale(d: Direction) -> float:
    return max(float(np.max(np.abs(d.dx))), float(np.max(np.abs(d.dz))),
               float(np.max(np.abs(d.dy))) if d.dy.size else 0.0)


def ratio_test(values: np.ndarray, deltas: np.ndarray, indices: list[int],
               fea_tol: float, scale_floor: float = 1.0
               ) -> tuple[float, int | None]:
    """Least-index minimum-ratio test.

    Over candidates with deltas < 0 returns min values/(-deltas) and the
    first index attaining it.  Values in [-fea_tol, 0) count as zero, so a
    slightly infeasible entry yields a zero step instead of a negative
    one.  ``scale_floor`` should carry the overall direction magnitude:
    deltas below the noise floor of that scale are not blockers (they are
    cancellation residue, often of components that vanish identically).
    """
    if not indices:
        return np.inf, None
    deltas = np.asarray(deltas, dtype=float)
    values = np.asarray(values, dtype=float)
    scale = max(1.0, scale_floor, float(np.max(np.abs(deltas))))
    mask = deltas < -1e-12 * scale
    if not np.any(mask):
        return np.inf, None
    vals = np.where((values < 0.0) & (values >= -fea_tol), 0.0, values)
    vals = np.maximum(vals, 0.0)
    ratios = np.full(len(indices), np.inf)
    ratios[mask] = vals[mask] / (-deltas[mask])
    pos = int(np.argmin(ratios))
    return float(ratios[pos]), indices[pos]


def advance(it: Iterate, d: Direction, alpha: float) -> None:
    it.x += alpha * d.dx
    it.y += alpha * d.dy
    it.z += alpha * d.dz


def make_trace_record(method: str, iteration: int, subiteration: int,
                      kind: str, l: int, step: StepResult, d: Direction,
                      violation: float, p: QpProblem, eff: Shifts,
                      it_before: Iterate, it_after: Iterate) -> TraceRecord:
    stat, eq = residuals(p, it_after)
    return TraceRecord(
        method=method, iteration=iteration, subiteration=subiteration,
        kind=kind, l=l, k=step.blocking,
        alpha=step.alpha, alpha_star=step.alpha_star, alpha_max=step.alpha_max,
        dx_l=d.dx_l, dz_l=d.dz_l, violation=violation,
        f_primal_before=primal_objective(p, eff, it_before),
        f_primal=primal_objective(p, eff, it_after),
        f_dual_before=dual_objective(p, eff, it_before),
        f_dual=dual_objective(p, eff, it_after),
        stationarity=float(np.max(np.abs(stat))) if stat.size else 0.0,
        equality=float(np.max(np.abs(eq))) if eq.size else 0.0,
        direction=d,
    )
