import numpy as np
import pytest

from pdqp import ProblemError, QpProblem, Shifts
from pdqp.oracle import dual_set_nonempty, primal_set_nonempty


@pytest.fixture
def p1():
    """min 0.5|x|^2 s.t. x1 + x2 = 1, x >= 0; optimum (0.5, 0.5)."""
    return QpProblem(H=np.eye(2), M=np.zeros((1, 1)), A=np.array([[1.0, 1.0]]),
                     b=np.array([1.0]), c=np.zeros(2))


@pytest.fixture
def p2():
    """p1 with c = (2, 0); optimum (0, 1) with objective 0.5."""
    return QpProblem(H=np.eye(2), M=np.zeros((1, 1)), A=np.array([[1.0, 1.0]]),
                     b=np.array([1.0]), c=np.array([2.0, 0.0]))


@pytest.fixture
def p_infeasible():
    """p1 with b = -1: x1 + x2 = -1 has no nonnegative solution."""
    return QpProblem(H=np.eye(2), M=np.zeros((1, 1)), A=np.array([[1.0, 1.0]]),
                     b=np.array([-1.0]), c=np.zeros(2))


@pytest.fixture
def p_unbounded():
    """min -x1 s.t. x1 - x2 = 0, x >= 0: unbounded along (1, 1)."""
    return QpProblem(H=np.zeros((2, 2)), M=np.zeros((1, 1)),
                     A=np.array([[1.0, -1.0]]), b=np.array([0.0]),
                     c=np.array([-1.0, 0.0]))


def random_psd(rng, n, kind):
    if kind == "pd":
        g = rng.normal(size=(n, n))
        return g.T @ g + 0.5 * np.eye(n)
    if kind == "psd":
        k = max(1, n - int(rng.integers(1, n)))
        g = rng.normal(size=(k, n))
        return g.T @ g
    return np.zeros((n, n))


def random_instance(rng, kinds=("feasible", "primal_inf", "unbounded")):
    """One random convex QP with a construction-time status guarantee.

    Feasible instances get b in the reachable set; primal-infeasible ones
    are certified by the primal feasibility cone; unbounded ones carry a
    nonnegative null ray of H and A with negative cost, certified by the
    dual feasibility cone.  Returns None when sampling fails.
    """
    n = int(rng.integers(2, 9))
    m = int(rng.integers(1, 4))
    hkind = rng.choice(["pd", "psd", "zero"])
    mkind = rng.choice(["zero", "mu"])
    M = np.zeros((m, m)) if mkind == "zero" else 1e-2 * np.eye(m)
    kind = rng.choice(list(kinds))
    for _ in range(60):
        H = random_psd(rng, n, hkind)
        A = rng.normal(size=(m, n))
        try:
            if kind == "feasible":
                x0 = np.abs(rng.normal(size=n))
                y0 = rng.normal(size=m)
                return QpProblem(H=H, M=M, A=A, b=A @ x0 + M @ y0,
                                 c=rng.normal(size=n))
            if kind == "primal_inf":
                if mkind != "zero":
                    kind = "feasible"
                    continue
                p = QpProblem(H=H, M=M, A=A, b=rng.normal(size=m),
                              c=rng.normal(size=n))
                if not primal_set_nonempty(p, Shifts.zero(n)):
                    return p
                continue
            ray = np.abs(rng.normal(size=n)) + 0.1
            A = A - np.outer(A @ ray, ray) / (ray @ ray)
            if hkind == "pd":
                hkind = "psd"
            H = random_psd(rng, n, hkind)
            H = H - np.outer(H @ ray, ray) / (ray @ ray)
            H = H - np.outer(ray, ray @ H) / (ray @ ray)
            H = 0.5 * (H + H.T)
            x0 = np.abs(rng.normal(size=n))
            y0 = rng.normal(size=m)
            c = rng.normal(size=n)
            if c @ ray >= -0.1:
                c = c - ((c @ ray) + 1.0) * ray / (ray @ ray)
            p = QpProblem(H=H, M=M, A=A, b=A @ x0 + M @ y0, c=c)
            if not dual_set_nonempty(p, Shifts.zero(n)):
                return p
        except ProblemError:
            continue
    return None


def random_instances(seed, count, **kw):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        p = random_instance(rng, **kw)
        if p is not None:
            out.append(p)
    return out
