import json

import cvxpy as cp
import numpy as np
import pytest
from scipy.linalg import solve as lsolve

from ksdsynth.augplant import assemble_plant
from ksdsynth.basis import IntervalBasis, poly
from ksdsynth.fixtures import PAPER_GAIN_TABLE2, scalar_system
from ksdsynth.model import Dimensions, DelaySystem, l2gain_template
from ksdsynth.sdpapi import INFEASIBLE
from ksdsynth.spectral import spectral_abscissa
from ksdsynth.synth import (GAMMA_SLACK, IterationConfig, algorithm1, analyze_theorem1_fixed_gain,
                            improve_gain_fixed_P, solve_theorem2, verify_theorem1)


def _lti(A, B, C, Bf, D1, D2):
    """Delay-free plant written as a one-delay system with a zero delayed term."""
    n, p = B.shape
    m, q = C.shape[0], D1.shape[1]
    return DelaySystem(
        Dimensions(n, m, p, q, 1), (1.0,), (A, np.zeros((n, n))), (B, np.zeros((n, p))),
        (C, np.zeros((m, n))), (Bf, np.zeros((m, p))), D1, D2,
        (IntervalBasis(-1.0, 0.0, (poly(0),)),), ({},), l2gain_template(m, q), "lti")


LTI = dict(A=np.array([[0.0, 1.0], [1.0, -1.0]]), B=np.array([[0.0], [1.0]]),
           C=np.array([[1.0, 0.0], [0.0, 0.0]]), Bf=np.array([[0.0], [1.0]]),
           D1=np.array([[1.0], [0.0]]), D2=np.zeros((2, 1)))


def bounded_real_state_feedback(A, B, C, Bf, D1, D2):
    """Independent oracle: optimal state-feedback H-infinity level via the
    classical change of variables V = K X."""
    n, p = B.shape
    m, q = C.shape[0], D1.shape[1]
    X = cp.Variable((n, n), symmetric=True)
    V = cp.Variable((p, n))
    g = cp.Variable()
    M = cp.bmat([[A @ X + X @ A.T + B @ V + V.T @ B.T, D1, (C @ X + Bf @ V).T],
                 [D1.T, -g * np.eye(q), D2.T],
                 [C @ X + Bf @ V, D2, -g * np.eye(m)]])
    eps = 1e-9
    prob = cp.Problem(cp.Minimize(g), [X >> eps * np.eye(n), 0.5 * (M + M.T) << -eps * np.eye(n + q + m)])
    prob.solve(solver="CLARABEL")
    return float(g.value)


def hinf_norm(A, B, C, Bf, D1, D2, K):
    Acl, Ccl = A + B @ K, C + Bf @ K
    ws = np.concatenate([[0.0], np.logspace(-3, 3, 4000)])
    n = A.shape[0]
    return max(np.linalg.svd(Ccl @ lsolve(1j * w * np.eye(n) - Acl, D1) + D2, compute_uv=False)[0] for w in ws)


@pytest.fixture(scope="module")
def lti_case():
    sys = _lti(**LTI)
    ap = assemble_plant(sys)
    return sys, ap, solve_theorem2(ap, sys.supply)


# ------------------------------------------------------------ direct synthesis

def test_theorem2_feasible_and_recertified(s4, theorem2_result):
    r = theorem2_result
    assert r.ok
    assert r.K.shape == (1, 2)
    assert r.diagnostics["analysis_status"] == "optimal"
    assert r.diagnostics["analysis_gamma"] <= r.gamma + GAMMA_SLACK
    assert r.diagnostics["primal_check"]["max_eig_dissipation"] < 0
    assert spectral_abscissa(s4, r.K).sa < 0


def test_theorem2_unstabilizable():
    sys = scalar_system(a0=1.0, b0=0.0)
    r = solve_theorem2(assemble_plant(sys), sys.supply)
    assert r.status == INFEASIBLE
    assert r.K is None


def test_delay_free_against_bounded_real(lti_case):
    sys, ap, r = lti_case
    assert r.ok and np.isfinite(r.gamma)
    g_opt = bounded_real_state_feedback(**LTI)
    assert r.gamma >= g_opt - 1e-6
    # the analysis of the returned gain is tight against the frequency sweep
    ana = analyze_theorem1_fixed_gain(ap, sys.supply, r.K)
    true = hinf_norm(**LTI, K=r.K)
    assert true <= ana.gamma + 1e-6
    assert ana.gamma <= true * 1.01
    assert ana.gamma <= r.gamma + GAMMA_SLACK


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_theorem2_implies_theorem1(seed):
    rng = np.random.default_rng(seed)
    sys = scalar_system(a0=rng.uniform(-0.5, 1.0), a1=rng.uniform(-0.5, 0.5), b0=rng.uniform(0.5, 2.0),
                        d2=rng.uniform(0.0, 0.3))
    ap = assemble_plant(sys)
    r = solve_theorem2(ap, sys.supply)
    assert r.ok
    assert r.diagnostics["analysis_status"] == "optimal"
    assert r.diagnostics["analysis_gamma"] <= r.gamma + GAMMA_SLACK


# ----------------------------------------------------------------- analysis

def test_analysis_reference_gain(s4, s4_plant):
    r = analyze_theorem1_fixed_gain(s4_plant, s4.supply, PAPER_GAIN_TABLE2)
    assert r.ok
    assert r.gamma <= 0.65
    rep = verify_theorem1(s4_plant, s4.supply, PAPER_GAIN_TABLE2, r.certificate, r.gamma)
    assert rep["max_eig_dissipation"] < 0


def test_analysis_zero_gain_infeasible(s4, s4_plant):
    r = analyze_theorem1_fixed_gain(s4_plant, s4.supply, np.zeros((1, 2)))
    assert r.status == INFEASIBLE


def test_analysis_scalar_hinf():
    sys = scalar_system()  # x' = -x + w, z = x
    r = analyze_theorem1_fixed_gain(assemble_plant(sys), sys.supply, np.zeros((1, 1)))
    assert r.ok
    assert abs(r.gamma - 1.0) <= 0.1


# ----------------------------------------------------------------- fixed P

def test_improve_not_worse_than_analysis(s4, s4_plant, theorem2_result):
    ana = analyze_theorem1_fixed_gain(s4_plant, s4.supply, theorem2_result.K)
    imp = improve_gain_fixed_P(s4_plant, s4.supply, ana.certificate.P1, ana.certificate.P2)
    assert imp.ok
    assert imp.gamma <= ana.gamma + GAMMA_SLACK


def test_improve_zero_P1(s4, s4_plant, theorem2_result):
    ana = analyze_theorem1_fixed_gain(s4_plant, s4.supply, theorem2_result.K)
    imp = improve_gain_fixed_P(s4_plant, s4.supply, np.zeros((2, 2)), ana.certificate.P2)
    assert imp.status == INFEASIBLE


def test_improve_from_theorem2_certificate(s4, s4_plant, theorem2_result):
    c = theorem2_result.certificate
    Xi = np.linalg.inv(c.X)
    P1 = Xi @ c.P1 @ Xi
    P2 = Xi @ c.P2 @ np.kron(np.eye(s4_plant.dims.d), Xi)
    imp = improve_gain_fixed_P(s4_plant, s4.supply, P1, P2)
    assert imp.ok
    assert imp.gamma <= theorem2_result.gamma + GAMMA_SLACK


# --------------------------------------------------------------- iteration

def test_iteration_config_validation():
    with pytest.raises(ValueError):
        IterationConfig(rho1=-1)
    with pytest.raises(ValueError):
        IterationConfig(eps=0)
    with pytest.raises(ValueError):
        IterationConfig(prox_form="quadratic")


def test_heavy_proximal_pins_iterates(s4, s4_plant):
    r = algorithm1(s4_plant, s4.supply, cfg=IterationConfig(rho1=1e6, rho2=1e6, max_iter=3))
    inner = [e for e in r.trace if e["stage"] == "inner"]
    start = next(e for e in r.trace if e["stage"] == "improve")
    assert inner and all(e["sound"] for e in inner)
    assert all(e["dK"] < 1e-6 for e in inner)
    assert all(abs(e["gamma"] - start["gamma"]) < 1e-4 for e in inner)


def test_warm_start_gain(s4, s4_plant):
    r = algorithm1(s4_plant, s4.supply, cfg=IterationConfig(max_iter=2), K0=PAPER_GAIN_TABLE2)
    assert r.ok
    assert r.trace[0]["stage"] == "analyze"
    assert r.gamma <= r.trace[0]["gamma"] + GAMMA_SLACK
    json.dumps(r.to_json())


def _iterate_gammas(res):
    return [e["gamma"] for e in res.trace if e["stage"] in ("improve", "inner") and e.get("gamma") is not None]


@pytest.mark.slow
@pytest.mark.parametrize("which", ["alg1_lambda1", "alg1_lambda2"])
def test_monotone_trace(which, request):
    res = request.getfixturevalue(which)
    g = _iterate_gammas(res)
    assert len(g) >= 2
    assert all(b <= a + GAMMA_SLACK for a, b in zip(g, g[1:]))


@pytest.mark.slow
@pytest.mark.parametrize("which", ["alg1_lambda1", "alg1_lambda2"])
def test_every_iterate_sound(which, request):
    res = request.getfixturevalue(which)
    inner = [e for e in res.trace if e["stage"] == "inner"]
    assert len(inner) == 20
    for e in inner:
        assert e["status"] == "optimal"
        assert e["sound"] and e["max_eig_diss"] <= -1e-9


@pytest.mark.slow
def test_enrichment_monotonicity(alg1_lambda1, alg1_lambda2):
    g1 = {e["iter"]: e["gamma"] for e in alg1_lambda1.trace if e["stage"] == "inner"}
    g2 = {e["iter"]: e["gamma"] for e in alg1_lambda2.trace if e["stage"] == "inner"}
    common = sorted(set(g1) & set(g2))
    assert common
    worse = {k: (g1[k], g2[k]) for k in common if g2[k] > g1[k] + GAMMA_SLACK}
    assert not worse, f"lambda=2 above lambda=1 at iterations {worse}"
