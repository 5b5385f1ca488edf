"""Thin conic-solver contract over cvxpy.

Synthesis code declares variables, posts strict LMIs with a margin and calls
:func:`solve`.  The returned :class:`SdpSolution` is re-verified outside the solver:
every LMI is re-evaluated at the returned values and checked against its own
eigenvalue bound, and a solution that fails is downgraded to
``numerical_failure`` whatever the backend reported.
"""
from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .errors import SolverUnavailableError

log = logging.getLogger(__name__)

DEFAULT_SOLVER = os.environ.get("KSDSYNTH_SOLVER", "CLARABEL")
VERIFY_REL = 1e-7
MARGIN_REL = 1e-8
PHASE_ONE_BOX = 1e3
PHASE_ONE_TOL = 1e-7

OPTIMAL, INFEASIBLE, NUMERICAL_FAILURE = "optimal", "infeasible", "numerical_failure"


@dataclass
class Lmi:
    name: str
    expr: cp.Expression
    sense: str  # "<<" (negative definite) or ">>" (positive definite)
    margin: float

    def slack(self) -> np.ndarray:
        """Matrix that must be PSD at a feasible point."""
        M = np.asarray(self.expr.value, dtype=float)
        M = 0.5 * (M + M.T)
        k = M.shape[0]
        return (-M if self.sense == "<<" else M) - self.margin * np.eye(k)


@dataclass
class SdpProblem:
    name: str = "sdp"
    variables: dict = field(default_factory=dict)
    constraints: list = field(default_factory=list)
    extra: list = field(default_factory=list)  # plain cvxpy constraints (linear)
    objective: object = 0.0

    def var(self, name: str, shape, symmetric: bool = False) -> cp.Variable:
        if name in self.variables:
            raise ValueError(f"variable {name!r} declared twice")
        shape = (shape, shape) if isinstance(shape, int) else tuple(shape)
        v = cp.Variable(shape, name=name, symmetric=symmetric)
        self.variables[name] = v
        return v

    def scalar(self, name: str) -> cp.Variable:
        if name in self.variables:
            raise ValueError(f"variable {name!r} declared twice")
        v = cp.Variable(name=name)
        self.variables[name] = v
        return v

    def add_lmi(self, expr, sense: str, name: str, margin: float | None = None) -> Lmi:
        if sense not in ("<<", ">>"):
            raise ValueError("sense must be '<<' or '>>'")
        if not isinstance(expr, cp.Expression):
            expr = cp.Constant(np.asarray(expr, dtype=float))
        expr = 0.5 * (expr + expr.T)
        if margin is None:
            margin = MARGIN_REL * (1.0 + _constant_part_norm(expr))
        lmi = Lmi(name, expr, sense, float(margin))
        self.constraints.append(lmi)
        return lmi

    def minimize(self, expr) -> None:
        self.objective = expr

    def to_cvxpy(self) -> cp.Problem:
        cons = []
        for c in self.constraints:
            k = c.expr.shape[0]
            if c.sense == "<<":
                cons.append(c.expr << -c.margin * np.eye(k))
            else:
                cons.append(c.expr >> c.margin * np.eye(k))
        return cp.Problem(cp.Minimize(self.objective), cons + list(self.extra))


def _constant_part_norm(expr: cp.Expression) -> float:
    saved = {v: v.value for v in expr.variables()}
    for v in expr.variables():
        v.value = np.zeros(v.shape)
    try:
        return float(np.abs(np.asarray(expr.value)).max()) if expr.size else 0.0
    finally:
        for v, val in saved.items():
            if val is not None:
                v.value = val


@dataclass
class SdpSolution:
    status: str
    values: dict
    objective: float
    diagnostics: dict

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


_DEFAULT_TOL = {"CLARABEL": 1e-9, "SCS": 1e-7, "CVXOPT": 1e-8}


def _solver_kwargs(solver: str, tol: float | None) -> dict:
    if solver == "CLARABEL":
        t = tol or 1e-9
        return dict(tol_gap_abs=t, tol_gap_rel=t, tol_feas=t, max_iter=400)
    if solver == "SCS":
        t = tol or 1e-7
        return dict(eps_abs=t, eps_rel=t, max_iters=200000)
    if solver == "CVXOPT":
        t = tol or 1e-8
        return dict(abstol=t, reltol=t, feastol=t, kktsolver="robust")
    return {}


def verify(problem: SdpProblem) -> dict:
    """Worst normalized eigenvalue violation over all LMIs at current values."""
    worst, worst_name = np.inf, None
    report = {}
    for c in problem.constraints:
        S = c.slack()
        lam = float(np.linalg.eigvalsh(S).min())
        scale = 1.0 + float(np.abs(S).max())
        report[c.name] = lam
        if lam / scale < worst:
            worst, worst_name = lam / scale, c.name
    return {"min_eig": report, "worst_normalized": worst, "worst": worst_name}


def phase_one(problem: SdpProblem, solver: str | None = None, box: float | None = None) -> float | None:
    """Largest ``s`` with every LMI holding with slack ``s`` (margins dropped),
    all variables confined to ``|v| <= box``.  Negative means infeasible in that box;
    for the homogeneous conditions of the l2-gain problems the box is no restriction."""
    solver = (solver or DEFAULT_SOLVER).upper()
    box = PHASE_ONE_BOX if box is None else box
    s = cp.Variable(name="phase_one_slack")
    cons = []
    for c in problem.constraints:
        k = c.expr.shape[0]
        cons.append(c.expr << -s * np.eye(k) if c.sense == "<<" else c.expr >> s * np.eye(k))
    cons += [cp.abs(v) <= box for v in problem.variables.values()]
    cons += list(problem.extra)
    prob = cp.Problem(cp.Maximize(s), cons + [s <= 1.0])
    try:
        prob.solve(solver=solver, **_solver_kwargs(solver, 1e-8))
    except cp.error.SolverError as exc:
        log.debug("phase one failed: %s", exc)
        return None
    if prob.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        return None
    return float(s.value)


def solve(problem: SdpProblem, solver: str | None = None, tol: float | None = None,
          verbose: bool = False, retries: int = 2) -> SdpSolution:
    solver = (solver or DEFAULT_SOLVER).upper()
    if solver not in cp.installed_solvers():
        raise SolverUnavailableError(f"SDP backend {solver!r} is not installed "
                                     f"(available: {', '.join(cp.installed_solvers())})")
    prob = problem.to_cvxpy()
    t0 = time.perf_counter()
    attempts = []
    # interior-point codes occasionally stall just short of a tight tolerance;
    # back off by a decade at a time, the post-verification below still applies
    base = tol or _DEFAULT_TOL.get(solver)
    for k in range(retries + 1):
        t = None if base is None else base * 10.0 ** k
        try:
            prob.solve(solver=solver, verbose=verbose, **_solver_kwargs(solver, t))
            raw = prob.status
        except cp.error.SolverError as exc:
            raw = f"solver_error: {exc}"
        attempts.append(raw)
        if raw in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE, cp.INFEASIBLE):
            break
    elapsed = time.perf_counter() - t0
    diag = {"solver": solver, "raw_status": raw, "solve_time": elapsed, "attempts": attempts}
    stats = getattr(prob, "solver_stats", None)
    if stats is not None:
        diag["iterations"] = stats.num_iters
    values = {name: (None if v.value is None else np.array(v.value)) for name, v in problem.variables.items()}

    if raw in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        return SdpSolution(INFEASIBLE, values, np.inf, diag)
    if raw.startswith("solver_error") and problem.constraints:
        # interior-point codes tend to stall on infeasible strict LMIs instead of
        # returning a certificate; a bounded phase-one problem settles it
        s_star = phase_one(problem, solver)
        diag["phase_one"] = s_star
        if s_star is not None and s_star < -PHASE_ONE_TOL:
            diag["reason"] = f"phase one: best uniform LMI slack {s_star:.3e} < 0 with |variables| <= {PHASE_ONE_BOX:g}"
            return SdpSolution(INFEASIBLE, values, np.inf, diag)
    if raw not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or any(v is None for v in values.values()):
        diag["reason"] = "unbounded or solver failure" if raw != cp.UNBOUNDED else "unbounded objective"
        return SdpSolution(NUMERICAL_FAILURE, values, np.nan, diag)

    check = verify(problem)
    diag["verification"] = check
    status = OPTIMAL
    if check["worst_normalized"] < -VERIFY_REL:
        log.warning("post-verification failed on %s (%.3e)", check["worst"], check["worst_normalized"])
        diag["reason"] = f"post-verification failed on {check['worst']}"
        status = NUMERICAL_FAILURE
    obj = float(prob.value) if prob.value is not None else np.nan
    return SdpSolution(status, values, obj, diag)


# ------------------------------------------------------------------ export

def _scalar_entries(v: cp.Variable):
    shape = v.shape if v.shape else (1, 1)
    if v.is_symmetric() and len(shape) == 2:
        return [(i, j) for i in range(shape[0]) for j in range(i, shape[1])]
    if len(shape) == 1:
        return [(i,) for i in range(shape[0])]
    return [(i, j) for i in range(shape[0]) for j in range(shape[1])]


def export_sdpa(problem: SdpProblem, path) -> None:
    """Write the problem in sparse SDPA format (``.dat-s``).

    Convention: minimize c'y subject to sum_i y_i F_i - F_0 >= 0, one block per LMI.
    The affine coefficients are recovered by evaluating each LMI at unit
    assignments, which is exact because every constraint is affine.
    """
    variables = list(problem.variables.values())
    saved = {v: v.value for v in variables}
    units = [(v, idx) for v in variables for idx in _scalar_entries(v)]

    def set_all(active=None):
        for v in variables:
            val = np.zeros(v.shape)
            if active is not None and active[0] is v:
                idx = active[1]
                if val.ndim == 0:
                    val = np.array(1.0)
                else:
                    val[idx] = 1.0
                    if len(idx) == 2 and v.is_symmetric():
                        val[idx[::-1]] = 1.0
            v.value = val

    def blocks():
        return [c.slack() for c in problem.constraints]

    try:
        set_all()
        F0 = blocks()
        c0 = float(np.asarray((cp.Constant(0) + problem.objective).value))
        mats, cvec = [], []
        for u in units:
            set_all(u)
            mats.append([b - b0 for b, b0 in zip(blocks(), F0)])
            cvec.append(float(np.asarray((cp.Constant(0) + problem.objective).value)) - c0)
    finally:
        for v, val in saved.items():
            v.value = val

    lines = [f"* {problem.name}: {len(units)} scalar variables, objective offset {c0:.17g}",
             str(len(units)), str(len(problem.constraints)),
             " ".join(str(c.expr.shape[0]) for c in problem.constraints),
             " ".join(f"{x:.17g}" for x in cvec)]

    def emit(k, blist, sign):
        for b, B in enumerate(blist, start=1):
            rows, cols = np.nonzero(np.triu(np.abs(B) > 0))
            for i, j in zip(rows, cols):
                lines.append(f"{k} {b} {i + 1} {j + 1} {sign * B[i, j]:.17g}")

    emit(0, F0, -1.0)
    for k, blist in enumerate(mats, start=1):
        emit(k, blist, 1.0)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
