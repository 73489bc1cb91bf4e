"""Problem files, batch runs, and performance-profile data.

Problem file grammar (version header "QPT 1"):

    QPT 1
    name <token>              # optional, defaults to the file stem
    dims <n> <m>
    H dense | H coord <nnz>   # omitted block means zero
    A dense | A coord <nnz>
    c <n values>
    lower <n+m values>        # "inf" / "-inf" allowed in bounds
    upper <n+m values>
    end

A dense block is followed by its rows, one line each (n rows for H, m
rows for A).  A coord block is followed by nnz lines "i j value" with
1-based indices; H triplets may name either triangle and are mirrored,
but the same cell given twice with different values is rejected.  Blank
lines and "#" comments are ignored everywhere.

Run logs are CSV with the fixed column schema
``name,n,m,status,objective,strategy,stage1_iters,stage2_iters,subiters,millis``.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .driver import GeneralQp, PdqpSolution, SolveConfig, solve_pdqp
from .model import ProblemError
from .steps import TraceRecord

RUNLOG_COLUMNS = ("name", "n", "m", "status", "objective", "strategy",
                  "stage1_iters", "stage2_iters", "subiters", "millis")
TERMINAL_STATUSES = {"optimal", "primal_infeasible", "dual_infeasible"}


class QptParseError(ValueError):
    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


def _parse_value(tok: str, path, line_no, allow_inf=False) -> float:
    if allow_inf and tok == "inf":
        return math.inf
    if allow_inf and tok == "-inf":
        return -math.inf
    try:
        v = float(tok)
    except ValueError:
        raise QptParseError(path, line_no, f"bad number {tok!r}") from None
    if not math.isfinite(v):
        raise QptParseError(path, line_no,
                            f"non-finite value {tok!r} outside a bounds line")
    return v


class _Lines:
    def __init__(self, path: Path):
        self.path = path
        raw = path.read_text().splitlines()
        self.rows = [(i + 1, line.split("#", 1)[0].strip())
                     for i, line in enumerate(raw)]
        self.rows = [(no, line) for no, line in self.rows if line]
        self.pos = 0

    def next(self, what: str) -> tuple[int, str]:
        if self.pos >= len(self.rows):
            last = self.rows[-1][0] if self.rows else 0
            raise QptParseError(self.path, last, f"unexpected end of file, "
                                                 f"expected {what}")
        row = self.rows[self.pos]
        self.pos += 1
        return row

    def peek(self) -> tuple[int, str] | None:
        return self.rows[self.pos] if self.pos < len(self.rows) else None


def _parse_matrix(lines: _Lines, tokens, nrows, ncols, symmetric, path, no):
    mat = np.zeros((nrows, ncols))
    if len(tokens) == 2 and tokens[1] == "dense":
        for i in range(nrows):
            rno, row = lines.next(f"row {i + 1} of a dense block")
            vals = row.split()
            if len(vals) != ncols:
                raise QptParseError(path, rno,
                                    f"expected {ncols} values, got {len(vals)}")
            mat[i] = [_parse_value(t, path, rno) for t in vals]
        if symmetric:
            scale = max(1.0, float(np.max(np.abs(mat))) if mat.size else 0.0)
            if float(np.max(np.abs(mat - mat.T), initial=0.0)) > 1e-12 * scale:
                raise QptParseError(path, no, "dense H block is not symmetric")
        return mat
    if len(tokens) == 3 and tokens[1] == "coord":
        try:
            nnz = int(tokens[2])
        except ValueError:
            raise QptParseError(path, no, f"bad entry count {tokens[2]!r}") \
                from None
        seen: dict[tuple[int, int], float] = {}
        for _ in range(nnz):
            rno, row = lines.next("a coordinate triplet")
            vals = row.split()
            if len(vals) != 3:
                raise QptParseError(path, rno,
                                    f"expected 'i j value', got {row!r}")
            try:
                i, j = int(vals[0]) - 1, int(vals[1]) - 1
            except ValueError:
                raise QptParseError(path, rno, "indices must be integers") \
                    from None
            if not (0 <= i < nrows and 0 <= j < ncols):
                raise QptParseError(path, rno,
                                    f"index ({i + 1}, {j + 1}) out of range")
            v = _parse_value(vals[2], path, rno)
            key = (min(i, j), max(i, j)) if symmetric else (i, j)
            if key in seen and seen[key] != v:
                raise QptParseError(path, rno,
                                    f"conflicting duplicate entry at "
                                    f"({i + 1}, {j + 1})")
            seen[key] = v
            mat[i, j] = v
            if symmetric:
                mat[j, i] = v
        return mat
    raise QptParseError(path, no, f"expected 'dense' or 'coord <nnz>' after "
                                  f"{tokens[0]}")


def parse_problem(path) -> GeneralQp:
    """Parse a QPT problem file into a GeneralQp."""
    path = Path(path)
    lines = _Lines(path)
    no, header = lines.next("the 'QPT 1' header")
    if header.split() != ["QPT", "1"]:
        raise QptParseError(path, no, f"bad header {header!r}, expected 'QPT 1'")
    name = path.stem
    n = m = None
    H = A = c = lower = upper = None
    while True:
        no, line = lines.next("a directive or 'end'")
        tokens = line.split()
        key = tokens[0]
        if key == "end":
            break
        if key == "name":
            if len(tokens) != 2:
                raise QptParseError(path, no, "name takes one token")
            name = tokens[1]
            continue
        if key == "dims":
            if len(tokens) != 3:
                raise QptParseError(path, no, "dims takes two integers")
            try:
                n, m = int(tokens[1]), int(tokens[2])
            except ValueError:
                raise QptParseError(path, no, "dims takes two integers") \
                    from None
            if n < 1 or m < 0:
                raise QptParseError(path, no, f"bad dimensions n={n}, m={m}")
            continue
        if n is None:
            raise QptParseError(path, no, f"'dims' must precede {key!r}")
        if key == "H":
            H = _parse_matrix(lines, tokens, n, n, True, path, no)
        elif key == "A":
            A = _parse_matrix(lines, tokens, m, n, False, path, no)
        elif key in ("c", "lower", "upper"):
            want = n if key == "c" else n + m
            vals = tokens[1:]
            if len(vals) != want:
                raise QptParseError(path, no,
                                    f"{key} takes {want} values, got {len(vals)}")
            vec = np.array([_parse_value(t, path, no,
                                         allow_inf=(key != "c"))
                            for t in vals])
            if key == "c":
                c = vec
            elif key == "lower":
                lower = vec
            else:
                upper = vec
        else:
            raise QptParseError(path, no, f"unknown directive {key!r}")
    if n is None:
        raise QptParseError(path, 1, "missing 'dims' directive")
    if c is None:
        c = np.zeros(n)
    if H is None:
        H = np.zeros((n, n))
    if A is None:
        A = np.zeros((m, n))
    if lower is None or upper is None:
        raise QptParseError(path, 1, "missing 'lower' or 'upper' directive")
    return GeneralQp(Hhat=H, Ahat=A, c=c, lower=lower, upper=upper, name=name)


def _fmt(v: float) -> str:
    if v == math.inf:
        return "inf"
    if v == -math.inf:
        return "-inf"
    return repr(float(v))


def emit_problem(g: GeneralQp, path) -> None:
    """Write a GeneralQp as a QPT file that parses back to identical data."""
    path = Path(path)
    out = ["QPT 1", f"name {g.name}", f"dims {g.n} {g.m}"]
    for label, mat, symmetric in (("H", g.Hhat, True), ("A", g.Ahat, False)):
        nz = np.nonzero(mat)
        if symmetric:
            keep = nz[0] <= nz[1]
            nz = (nz[0][keep], nz[1][keep])
        if mat.size and len(nz[0]) and mat.shape[0] <= 20:
            out.append(f"{label} dense")
            out.extend(" ".join(_fmt(v) for v in row) for row in mat)
        elif len(nz[0]):
            out.append(f"{label} coord {len(nz[0])}")
            out.extend(f"{i + 1} {j + 1} {_fmt(mat[i, j])}"
                       for i, j in zip(*nz))
    out.append("c " + " ".join(_fmt(v) for v in g.c))
    out.append("lower " + " ".join(_fmt(v) for v in g.lower))
    out.append("upper " + " ".join(_fmt(v) for v in g.upper))
    out.append("end")
    path.write_text("\n".join(out) + "\n")


@dataclass
class RunRow:
    name: str
    n: int
    m: int
    status: str
    objective: float | None
    strategy: str
    stage1_iters: int
    stage2_iters: int
    subiters: int
    millis: float

    def csv(self) -> str:
        obj = "" if self.objective is None else f"{self.objective:.12g}"
        return ",".join([self.name, str(self.n), str(self.m), self.status,
                         obj, self.strategy, str(self.stage1_iters),
                         str(self.stage2_iters), str(self.subiters),
                         f"{self.millis:.3f}"])


def _solve_one(g: GeneralQp, config: SolveConfig, trace_to=None
               ) -> tuple[RunRow, PdqpSolution]:
    records: list[TraceRecord] = []
    if trace_to is not None:
        config = SolveConfig(**{**config.__dict__, "trace": records.append})
    t0 = time.perf_counter()
    sol = solve_pdqp(g, config)
    millis = (time.perf_counter() - t0) * 1e3
    stage1 = sol.stage_log[0].iterations if sol.stage_log else 0
    stage2 = sol.stage_log[1].iterations if len(sol.stage_log) > 1 else 0
    subs = sum(lg.subiterations for lg in sol.stage_log)
    row = RunRow(name=g.name, n=g.n, m=g.m, status=sol.status,
                 objective=sol.objective if sol.status == "optimal" else None,
                 strategy=sol.strategy, stage1_iters=stage1,
                 stage2_iters=stage2, subiters=subs, millis=millis)
    if trace_to is not None:
        header = ("method,iteration,subiteration,kind,l,k,alpha,alpha_star,"
                  "alpha_max,dx_l,dz_l,violation,f_primal,f_dual")
        body = [f"{r.method},{r.iteration},{r.subiteration},{r.kind},{r.l},"
                f"{'' if r.k is None else r.k},{r.alpha:.9g},{r.alpha_star:.9g},"
                f"{r.alpha_max:.9g},{r.dx_l:.9g},{r.dz_l:.9g},"
                f"{r.violation:.9g},{r.f_primal:.12g},{r.f_dual:.12g}"
                for r in records]
        Path(trace_to).write_text("\n".join([header] + body) + "\n")
    return row, sol


def _write_solution(sol: PdqpSolution, path: Path) -> None:
    lines = [f"status {sol.status}"]
    if sol.status == "optimal":
        lines.append(f"objective {sol.objective:.12g}")
    lines.append("x " + " ".join(f"{v:.12g}" for v in sol.x))
    lines.append("y " + " ".join(f"{v:.12g}" for v in sol.y))
    lines.append("z " + " ".join(f"{v:.12g}" for v in sol.z))
    path.write_text("\n".join(lines) + "\n")


def read_expectations(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [t.strip() for t in line.split(",")]
        out[parts[0]] = parts[1]
    return out


def run(paths, out_dir, *, strategy="auto", opt_tol=1e-6, fea_tol=1e-6,
        max_iter=0, trace=False, expect=None) -> tuple[list[RunRow], int]:
    """Solve each problem file, write the run log and solution files, and
    return the rows plus the process exit code."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config = SolveConfig(opt_tol=opt_tol, fea_tol=fea_tol,
                         max_iterations=max_iter, strategy=strategy)
    rows = []
    for path in paths:
        path = Path(path)
        g = parse_problem(path)
        trace_to = out / f"{path.stem}.trace.csv" if trace else None
        try:
            row, sol = _solve_one(g, config, trace_to)
        except ProblemError as exc:
            print(f"{g.name}: {exc}", file=sys.stderr)
            row, sol = RunRow(name=g.name, n=g.n, m=g.m, status="error",
                              objective=None, strategy=strategy,
                              stage1_iters=0, stage2_iters=0, subiters=0,
                              millis=0.0), None
        if sol is not None:
            _write_solution(sol, out / f"{row.name}.sol")
        rows.append(row)
    log_path = out / "runlog.csv"
    log_path.write_text("\n".join([",".join(RUNLOG_COLUMNS)]
                                  + [r.csv() for r in rows]) + "\n")
    expected = read_expectations(expect) if expect else None
    code = 0
    for row in rows:
        if expected is not None:
            if expected.get(row.name) != row.status:
                code = 1
        elif row.status not in TERMINAL_STATUSES:
            code = 1
    return rows, code


def read_runlog(path) -> list[dict]:
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    if tuple(header) != RUNLOG_COLUMNS:
        raise ValueError(f"unexpected run-log columns in {path}")
    rows = []
    for line in lines[1:]:
        if not line.strip():
            continue
        rows.append(dict(zip(header, line.split(","))))
    return rows


def _iteration_metric(row: dict) -> tuple[bool, int]:
    solved = row["status"] in TERMINAL_STATUSES
    total = int(row["stage1_iters"]) + int(row["stage2_iters"])
    return solved, total


def profile(log_a, log_b, out_path) -> dict:
    """Performance-profile data for two run logs over the same problems.

    Emits the cumulative-step breakpoints (tau, fraction) of each
    solver's ratio distribution on total iterations, and the per-problem
    log2 iteration ratios.  Failures take infinite ratio; a failed
    problem's factor is marked instead of numeric.
    """
    rows_a = {r["name"]: r for r in read_runlog(log_a)}
    rows_b = {r["name"]: r for r in read_runlog(log_b)}
    if set(rows_a) != set(rows_b):
        raise ValueError("run logs cover different problem sets")
    names = sorted(rows_a)
    ratios = {"a": [], "b": []}
    factors = []
    for name in names:
        ok_a, it_a = _iteration_metric(rows_a[name])
        ok_b, it_b = _iteration_metric(rows_b[name])
        ma = max(it_a, 1)
        mb = max(it_b, 1)
        best = min(ma if ok_a else math.inf, mb if ok_b else math.inf)
        ratios["a"].append(ma / best if ok_a else math.inf)
        ratios["b"].append(mb / best if ok_b else math.inf)
        if not ok_a:
            factors.append((name, "fail_a"))
        elif not ok_b:
            factors.append((name, "fail_b"))
        elif it_a == 0 and it_b == 0:
            factors.append((name, "0"))
        elif it_a == 0:
            factors.append((name, "-inf"))
        elif it_b == 0:
            factors.append((name, "inf"))
        else:
            factors.append((name, f"{math.log2(it_a / it_b):.6g}"))

    total = len(names)

    def steps(rs):
        finite = sorted(set(r for r in rs if math.isfinite(r)))
        return [(tau, sum(1 for r in rs if r <= tau) / total)
                for tau in finite]

    data = {"a": steps(ratios["a"]), "b": steps(ratios["b"]),
            "factors": factors}
    lines = ["# pdqp profile data", "# section: profile_a", "tau,fraction"]
    lines += [f"{tau:.9g},{frac:.9g}" for tau, frac in data["a"]]
    lines += ["# section: profile_b", "tau,fraction"]
    lines += [f"{tau:.9g},{frac:.9g}" for tau, frac in data["b"]]
    lines += ["# section: factors", "name,log2_ratio"]
    lines += [f"{name},{val}" for name, val in factors]
    Path(out_path).write_text("\n".join(lines) + "\n")
    return data


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="pdqp",
                                     description="Convex QP solver")
    sub = parser.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="solve problem files")
    runp.add_argument("paths", nargs="+")
    runp.add_argument("--strategy", default="auto",
                      choices=["auto", "primal-first", "dual-first",
                               "primal-only", "dual-only"])
    runp.add_argument("--opt-tol", type=float, default=1e-6)
    runp.add_argument("--fea-tol", type=float, default=1e-6)
    runp.add_argument("--max-iter", type=int, default=0)
    runp.add_argument("--trace", action="store_true")
    runp.add_argument("--out", default="pdqp-out")
    runp.add_argument("--expect", default=None)

    prof = sub.add_parser("profile", help="profile two run logs")
    prof.add_argument("log_a")
    prof.add_argument("log_b")
    prof.add_argument("--out", required=True)

    args = parser.parse_args(argv)
    if args.command == "run":
        rows, code = run(args.paths, args.out, strategy=args.strategy,
                         opt_tol=args.opt_tol, fea_tol=args.fea_tol,
                         max_iter=args.max_iter, trace=args.trace,
                         expect=args.expect)
        for row in rows:
            print(f"{row.name}: {row.status}"
                  + (f" objective {row.objective:.12g}"
                     if row.objective is not None else ""))
        return code
    profile(args.log_a, args.log_b, args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
