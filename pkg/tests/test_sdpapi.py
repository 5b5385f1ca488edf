import cvxpy as cp
import numpy as np
import pytest

from ksdsynth import sdpapi
from ksdsynth.errors import SolverUnavailableError
from ksdsynth.sdpapi import INFEASIBLE, NUMERICAL_FAILURE, OPTIMAL, SdpProblem, export_sdpa, solve, verify


def test_scalar_lp():
    p = SdpProblem("lp")
    g = p.scalar("gamma")
    p.add_lmi(cp.reshape(g, (1, 1), order="F") - np.eye(1), ">>", "lower", margin=0.0)
    p.minimize(g)
    sol = solve(p)
    assert sol.status == OPTIMAL
    assert sol.values["gamma"] == pytest.approx(1.0, abs=1e-7)


def test_trace_identity():
    p = SdpProblem("trace")
    X = p.var("X", 2, symmetric=True)
    p.add_lmi(X - np.eye(2), ">>", "X>=I", margin=0.0)
    p.minimize(cp.trace(X))
    sol = solve(p)
    assert sol.ok
    np.testing.assert_allclose(sol.values["X"], np.eye(2), atol=1e-6)
    assert sol.objective == pytest.approx(2.0, abs=1e-6)


def test_contradiction_infeasible():
    p = SdpProblem("contra")
    X = p.var("X", 2, symmetric=True)
    p.add_lmi(X + np.eye(2), "<<", "X<=-I", margin=0.0)
    p.add_lmi(X - np.eye(2), ">>", "X>=I", margin=0.0)
    sol = solve(p)
    assert sol.status == INFEASIBLE


def test_default_margin_scales_with_constant():
    p = SdpProblem()
    X = p.var("X", 2, symmetric=True)
    c = p.add_lmi(X - 100 * np.eye(2), ">>", "big")
    assert c.margin == pytest.approx(1e-8 * 101)


def test_post_verification_downgrades(monkeypatch):
    p = SdpProblem("cheat")
    g = p.scalar("gamma")
    p.add_lmi(cp.reshape(g, (1, 1), order="F") - np.eye(1), ">>", "lower", margin=0.0)
    p.minimize(g)
    # a backend that silently drops the LMI still reports "optimal"
    monkeypatch.setattr(SdpProblem, "to_cvxpy", lambda self: cp.Problem(cp.Minimize(g), [g >= 0]))
    sol = solve(p)
    assert sol.status == NUMERICAL_FAILURE
    assert sol.diagnostics["raw_status"] == cp.OPTIMAL
    assert "lower" in sol.diagnostics["reason"]


def test_verify_report():
    p = SdpProblem()
    X = p.var("X", 2, symmetric=True)
    p.add_lmi(X, ">>", "pos", margin=0.0)
    X.value = np.diag([1.0, -0.5])
    rep = verify(p)
    assert rep["worst"] == "pos"
    assert rep["min_eig"]["pos"] == pytest.approx(-0.5)


def test_unknown_solver():
    p = SdpProblem()
    p.scalar("t")
    with pytest.raises(SolverUnavailableError):
        solve(p, solver="NO_SUCH_SOLVER")


def test_duplicate_variable():
    p = SdpProblem()
    p.var("X", 2)
    with pytest.raises(ValueError):
        p.var("X", 3)
    with pytest.raises(ValueError):
        p.add_lmi(np.eye(1), "<", "bad")


def test_alternate_backend():
    if "SCS" not in cp.installed_solvers():
        pytest.skip("SCS not installed")
    p = SdpProblem()
    X = p.var("X", 2, symmetric=True)
    p.add_lmi(X - np.eye(2), ">>", "X>=I", margin=0.0)
    p.minimize(cp.trace(X))
    sol = solve(p, solver="SCS", tol=1e-8)
    assert sol.diagnostics["solver"] == "SCS"
    assert sol.objective == pytest.approx(2.0, abs=1e-4)


def test_sdpa_export(tmp_path):
    p = SdpProblem("export")
    X = p.var("X", 2, symmetric=True)
    g = p.scalar("g")
    p.add_lmi(X - np.eye(2), ">>", "X>=I", margin=0.0)
    p.add_lmi(cp.reshape(g, (1, 1), order="F") - cp.reshape(X[0, 0], (1, 1), order="F"), ">>", "g>=x11",
              margin=0.0)
    p.minimize(g + cp.trace(X))
    path = tmp_path / "p.dat-s"
    export_sdpa(p, path)
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("*")]
    m = int(lines[0])
    assert m == 4  # three entries of X plus g
    assert int(lines[1]) == 2
    assert lines[2].split() == ["2", "1"]
    c = [float(x) for x in lines[3].split()]
    assert sorted(c) == [0.0, 1.0, 1.0, 1.0]
    # reconstruct block 1 at X = I, g = 0 and compare with the slack
    entries = [ln.split() for ln in lines[4:]]
    F = {k: np.zeros((2, 2)) for k in range(m + 1)}
    for k, b, i, j, v in entries:
        if int(b) == 1:
            F[int(k)][int(i) - 1, int(j) - 1] = float(v)
            F[int(k)][int(j) - 1, int(i) - 1] = float(v)
    # X = I is the unit assignment of entries (0,0) and (1,1)
    y = np.array([1.0, 0.0, 1.0, 0.0])
    S = sum(y[k - 1] * F[k] for k in range(1, m + 1)) - F[0]
    np.testing.assert_allclose(S, np.zeros((2, 2)), atol=1e-14)


def test_env_default_solver():
    assert sdpapi.DEFAULT_SOLVER in cp.installed_solvers() or sdpapi.DEFAULT_SOLVER
