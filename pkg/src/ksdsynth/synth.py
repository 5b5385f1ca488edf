"""Controller synthesis: convex dual condition, fixed-gain analysis, fixed-P gain
improvement and the iterative inner convex approximation."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import lmi as L
from .augplant import AugmentedPlant
from .model import SupplyRate
from .sdpapi import DEFAULT_SOLVER, NUMERICAL_FAILURE, OPTIMAL, VERIFY_REL, SdpProblem, solve

log = logging.getLogger(__name__)

GAMMA_SLACK = 1e-6
FALLBACK_SOLVERS = ("CVXOPT", "SCS")


@dataclass
class IterationConfig:
    rho1: float = 1e-3
    rho2: float = 1e-3
    eps: float = 1e-4
    max_iter: int = 20
    gamma_in_objective: bool = True
    prox_form: str = "soc"

    def __post_init__(self):
        if self.prox_form not in ("soc", "lmi"):
            raise ValueError("prox_form must be 'soc' or 'lmi'")
        if self.rho1 < 0 or self.rho2 < 0:
            raise ValueError("proximal weights must be non-negative")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.max_iter < 0:
            raise ValueError("max_iter must be non-negative")


@dataclass
class SynthesisResult:
    mode: str
    status: str
    K: np.ndarray | None
    gamma: float | None
    certificate: object = None
    trace: list = field(default_factory=list)
    timing: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    def to_json(self) -> dict:
        return {
            "mode": self.mode, "status": self.status,
            "K": None if self.K is None else np.asarray(self.K).tolist(),
            "gamma": self.gamma,
            "certificate": None if self.certificate is None else self.certificate.to_json(),
            "trace": self.trace, "timing": self.timing,
            "diagnostics": _jsonable(self.diagnostics),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def default_alphas(ap: AugmentedPlant, alpha1: float = 5.0) -> list[float]:
    return [alpha1] + [0.0] * (ap.dims.beta - 1)


def _gamma_var(prob: SdpProblem, supply: SupplyRate):
    if supply.gamma_is_variable:
        g = prob.scalar("gamma")
        prob.minimize(g)
        return g
    prob.minimize(0)
    return None


def _lyap_vars(prob: SdpProblem, ap: AugmentedPlant, prefix: str = "") -> L.LyapunovVars:
    n, e, nu = ap.dims.n, ap.dims.e, ap.dims.nu
    return L.LyapunovVars(
        prob.var(prefix + "P1", n, symmetric=True),
        prob.var(prefix + "P2", (n, e)),
        prob.var(prefix + "P3", e, symmetric=True),
        [prob.var(f"{prefix}Q{i + 1}", n, symmetric=True) for i in range(nu)],
        [prob.var(f"{prefix}R{i + 1}", n, symmetric=True) for i in range(nu)],
    )


def _post_common(prob, ap, pos, qr, diss, diss_margin=None):
    prob.add_lmi(pos, ">>", "positivity")
    for i, X in enumerate(qr):
        prob.add_lmi(X, ">>", ("Q" if i < ap.dims.nu else "R") + str(i % ap.dims.nu + 1))
    prob.add_lmi(diss, "<<", "dissipation", margin=diss_margin)


def _gamma_value(sol, supply):
    if supply.gamma_is_variable:
        return float(sol.values["gamma"])
    return None


def verify_theorem1(ap: AugmentedPlant, supply: SupplyRate, K, v: L.LyapunovVars, gamma) -> dict:
    """Eigenvalue report of the analysis conditions at a numeric point.

    ``*_normalized`` entries divide by ``1 + max|block|`` (the solver-side
    post-verification scale).
    """
    J = supply.matrices(gamma)
    pos, qr, right, _ = L.build_theorem1(ap, v, np.asarray(K, dtype=float), J)
    scale = lambda M: 1.0 + float(np.abs(M).max())
    return {
        "min_eig_positivity": L.min_eig(pos),
        "min_eig_positivity_normalized": L.min_eig(pos) / scale(pos),
        "min_eig_QR": min(L.min_eig(X) for X in qr),
        "max_eig_dissipation": L.max_eig(right),
    }


def certified(report: dict, tol: float = 1e-9) -> bool:
    """Strict negativity of the dissipation matrix; the positivity conditions
    are accepted under the solver's relative verification tolerance."""
    return (report["max_eig_dissipation"] <= -tol
            and report["min_eig_positivity_normalized"] >= -VERIFY_REL
            and report["min_eig_QR"] > 0)


# ----------------------------------------------------------------- modes

def solve_theorem2(ap: AugmentedPlant, supply: SupplyRate, alphas=None, *, solver=None, tol=None,
                   post_verify: bool = True) -> SynthesisResult:
    t0 = time.perf_counter()
    alphas = default_alphas(ap) if alphas is None else list(alphas)
    d = ap.dims
    n, p, e, nu = d.n, d.p, d.e, d.nu
    prob = SdpProblem("theorem2")
    gamma = _gamma_var(prob, supply)
    dv = L.DualVars(
        X=prob.var("X", n, symmetric=True), V=prob.var("V", (p, n)),
        P1=prob.var("Pd1", n, symmetric=True), P2=prob.var("Pd2", (n, e)),
        P3=prob.var("Pd3", e, symmetric=True),
        Q=[prob.var(f"Qd{i + 1}", n, symmetric=True) for i in range(nu)],
        R=[prob.var(f"Rd{i + 1}", n, symmetric=True) for i in range(nu)],
        alphas=alphas,
    )
    pos, qr, lmi_dual = L.build_theorem2(ap, dv, supply.matrices(gamma))
    _post_common(prob, ap, pos, qr, lmi_dual)
    sol = solve(prob, solver, tol)
    res = SynthesisResult("theorem2", sol.status, None, None, timing=0.0, diagnostics=sol.diagnostics)
    if not sol.ok:
        res.timing = time.perf_counter() - t0
        return res
    vals = sol.values
    X, V = vals["X"], vals["V"]
    cond = np.linalg.cond(X)
    if not np.isfinite(cond) or cond > 1e12:
        res.status = NUMERICAL_FAILURE
        res.diagnostics["reason"] = f"X numerically singular (cond {cond:.2e})"
        return res
    K = V @ np.linalg.inv(X)
    res.K = K
    res.gamma = _gamma_value(sol, supply)
    res.certificate = L.DualVars(X, V, vals["Pd1"], vals["Pd2"], vals["Pd3"],
                                 [vals[f"Qd{i + 1}"] for i in range(nu)],
                                 [vals[f"Rd{i + 1}"] for i in range(nu)], alphas)
    # undo the congruence: P1 = X^-1 Pd1 X^-1, P2 = X^-1 Pd2 (I kron X^-1), ...
    Xi = np.linalg.inv(X)
    Xd = np.kron(np.eye(d.d), Xi)
    primal = L.LyapunovVars(Xi @ vals["Pd1"] @ Xi, Xi @ vals["Pd2"] @ Xd, Xd @ vals["Pd3"] @ Xd,
                            [Xi @ vals[f"Qd{i + 1}"] @ Xi for i in range(nu)],
                            [Xi @ vals[f"Rd{i + 1}"] @ Xi for i in range(nu)])
    res.diagnostics["primal_check"] = verify_theorem1(ap, supply, K, primal, res.gamma)
    if post_verify:
        chk = analyze_theorem1_fixed_gain(ap, supply, K, solver=solver, tol=tol)
        res.diagnostics["analysis_status"] = chk.status
        res.diagnostics["analysis_gamma"] = chk.gamma
        if chk.ok and res.gamma is not None and chk.gamma > res.gamma + GAMMA_SLACK:
            log.warning("Theorem-1 analysis gamma %.6f exceeds synthesis gamma %.6f", chk.gamma, res.gamma)
    res.timing = time.perf_counter() - t0
    return res


MARGINS = (None, 1e-6, 1e-4)


def _certify_loop(build, check, solver, tol):
    """Solve ``build(margin)`` with widening dissipation margins until ``check``
    accepts the numeric point.  Returns ``(sol, payload, report)``."""
    for margin in MARGINS:
        prob, payload = build(margin)
        sol = solve(prob, solver, tol)
        if not sol.ok:
            return sol, payload, None
        report = check(sol, payload)
        sol.diagnostics["dissipation_margin"] = margin
        if certified(report):
            return sol, payload, report
        log.info("solution does not re-verify strictly (%.3e); widening margin", report["max_eig_dissipation"])
    sol.status = NUMERICAL_FAILURE
    sol.diagnostics["reason"] = "returned point does not satisfy the dissipation inequality strictly"
    return sol, payload, report


def analyze_theorem1_fixed_gain(ap: AugmentedPlant, supply: SupplyRate, K, *, solver=None,
                                tol=None) -> SynthesisResult:
    t0 = time.perf_counter()
    K = np.atleast_2d(np.asarray(K, dtype=float))

    def build(margin):
        prob = SdpProblem("theorem1-analysis")
        gamma = _gamma_var(prob, supply)
        v = _lyap_vars(prob, ap)
        pos, qr, right, _ = L.build_theorem1(ap, v, K, supply.matrices(gamma))
        _post_common(prob, ap, pos, qr, right, margin)
        return prob, v

    def check(sol, v):
        return verify_theorem1(ap, supply, K, v.numeric(), _gamma_value(sol, supply))

    sol, v, report = _certify_loop(build, check, solver, tol)
    res = SynthesisResult("analyze", sol.status, K, None, diagnostics=sol.diagnostics)
    if report is not None:
        res.diagnostics["check"] = report
    if sol.ok:
        res.gamma = _gamma_value(sol, supply)
        res.certificate = v.numeric()
    res.timing = time.perf_counter() - t0
    return res


def improve_gain_fixed_P(ap: AugmentedPlant, supply: SupplyRate, P1, P2, *, solver=None,
                         tol=None) -> SynthesisResult:
    t0 = time.perf_counter()
    d = ap.dims
    P1 = np.asarray(P1, dtype=float)
    P2 = np.asarray(P2, dtype=float)

    def build(margin):
        prob = SdpProblem("theorem1-fixed-P")
        gamma = _gamma_var(prob, supply)
        K = prob.var("K", (d.p, d.n))
        v = L.LyapunovVars(P1, P2, prob.var("P3", d.e, symmetric=True),
                           [prob.var(f"Q{i + 1}", d.n, symmetric=True) for i in range(d.nu)],
                           [prob.var(f"R{i + 1}", d.n, symmetric=True) for i in range(d.nu)])
        pos, qr, right, _ = L.build_theorem1(ap, v, K, supply.matrices(gamma))
        _post_common(prob, ap, pos, qr, right, margin)
        return prob, v

    def check(sol, v):
        return verify_theorem1(ap, supply, sol.values["K"], v.numeric(), _gamma_value(sol, supply))

    sol, v, report = _certify_loop(build, check, solver, tol)
    res = SynthesisResult("improve", sol.status, None, None, diagnostics=sol.diagnostics)
    if report is not None:
        res.diagnostics["check"] = report
    if sol.ok:
        res.K = np.atleast_2d(sol.values["K"])
        res.gamma = _gamma_value(sol, supply)
        res.certificate = v.numeric()
    res.timing = time.perf_counter() - t0
    return res


def _rel_change(new, old) -> float:
    new, old = np.ravel(new), np.ravel(old)
    return float(np.abs(new - old).max() / (np.abs(old).max() + 1.0))


def inner_step(ap: AugmentedPlant, supply: SupplyRate, anchors, cfg: IterationConfig, *, solver=None, tol=None,
               margin=None):
    """One convexified subproblem around ``anchors = (P1, P2, K)``.

    Returns ``(SdpSolution, LyapunovVars-with-cvxpy, K-var, gamma-var)``.
    """
    import cvxpy as cp

    d = ap.dims
    P1t, P2t, Kt = anchors
    prob = SdpProblem("inner-approximation")
    gamma = prob.scalar("gamma") if supply.gamma_is_variable else None
    v = _lyap_vars(prob, ap)
    K = prob.var("K", (d.p, d.n))
    Zv = prob.var("Z", d.n, symmetric=True)
    J = supply.matrices(gamma)
    pos = L.theorem1_positivity(ap, v.P1, v.P2, v.P3, v.Q)
    lmi40 = L.build_eq40(ap, v, K, Zv, (P1t, P2t, Kt), J)
    _post_common(prob, ap, pos, list(v.Q) + list(v.R), lmi40, margin)

    dY = cp.hstack([cp.vec(v.P1 - P1t, order="F"), cp.vec(v.P2 - P2t, order="F")])
    dK = cp.vec(K - Kt, order="F")
    obj = 0
    if gamma is not None and cfg.gamma_in_objective:
        obj = obj + gamma
    # proximal terms through epigraph variables; the default second-order-cone
    # form is what interior-point codes handle best, the Schur-complement LMI
    # [[I, v], [v', t]] >= 0 is kept as an alternative
    for name, vec, rho in (("tY", dY, cfg.rho1), ("tK", dK, cfg.rho2)):
        if rho > 0:
            t = prob.scalar(name)
            if cfg.prox_form == "lmi":
                k = vec.shape[0]
                col = cp.reshape(vec, (k, 1), order="F")
                prob.add_lmi(cp.bmat([[np.eye(k), col], [col.T, cp.reshape(t, (1, 1), order="F")]]), ">>", name,
                             margin=0.0)
            else:
                prob.extra.append(cp.sum_squares(vec) <= t)
            obj = obj + rho * t
    prob.minimize(obj)
    sol = solve(prob, solver, tol)
    return sol, v, K, gamma


def _fallback_routes(solver, cfg: IterationConfig):
    """Solver / proximal-form combinations tried in order on one subproblem."""
    import cvxpy as cp

    primary = (solver or DEFAULT_SOLVER).upper()
    other = "lmi" if cfg.prox_form == "soc" else "soc"
    routes = [(primary, cfg.prox_form), (primary, other)]
    routes += [(s, cfg.prox_form) for s in FALLBACK_SOLVERS if s != primary and s in cp.installed_solvers()]
    return routes


def _iterate_once(ap, supply, anchors, cfg, solver, tol):
    # the returned point must satisfy the original condition strictly; if the
    # solver's accuracy eats the default margin, re-solve with a wider one.  A
    # backend stall moves on to the next route.
    first = None
    for slv, form in _fallback_routes(solver, cfg):
        c = replace(cfg, prox_form=form)
        t = tol if slv == (solver or DEFAULT_SOLVER).upper() else None
        for margin in (None, 1e-6, 1e-4):
            sol, v, Kvar, gvar = inner_step(ap, supply, anchors, c, solver=slv, tol=t, margin=margin)
            if first is None:
                first = (sol, v, Kvar, gvar, margin, f"{slv}/{form}")
            if not sol.ok:
                break
            g = float(sol.values["gamma"]) if gvar is not None else None
            report = verify_theorem1(ap, supply, np.atleast_2d(sol.values["K"]), v.numeric(), g)
            if certified(report):
                return sol, v, Kvar, gvar, margin, f"{slv}/{form}"
        if sol.ok:
            # solved but never certified: report it, a different backend will not help
            return sol, v, Kvar, gvar, margin, f"{slv}/{form}"
        log.info("subproblem failed on %s/%s (%s), trying next route", slv, form, sol.diagnostics.get("raw_status"))
    return first


def algorithm1(ap: AugmentedPlant, supply: SupplyRate, alphas=None, cfg: IterationConfig | None = None, *,
               K0=None, solver=None, tol=None, callback=None) -> SynthesisResult:
    """Theorem-2 initialization, one analyze/improve alternation, then the
    proximal inner-approximation loop."""
    cfg = cfg or IterationConfig()
    t0 = time.perf_counter()
    trace = []
    diag = {}
    if K0 is None:
        init = solve_theorem2(ap, supply, alphas, solver=solver, tol=tol, post_verify=False)
        diag["theorem2"] = {"status": init.status, "gamma": init.gamma,
                            "K": None if init.K is None else init.K.tolist()}
        if not init.ok:
            return SynthesisResult("algorithm1", init.status, None, None, trace=trace,
                                   timing=time.perf_counter() - t0, diagnostics=diag)
        K0 = init.K
        trace.append({"stage": "theorem2", "gamma": init.gamma, "K": K0.tolist(), "status": init.status})
    K0 = np.atleast_2d(np.asarray(K0, dtype=float))

    ana = analyze_theorem1_fixed_gain(ap, supply, K0, solver=solver, tol=tol)
    trace.append({"stage": "analyze", "gamma": ana.gamma, "K": K0.tolist(), "status": ana.status})
    if not ana.ok:
        return SynthesisResult("algorithm1", ana.status, K0, None, trace=trace,
                               timing=time.perf_counter() - t0, diagnostics=diag)
    imp = improve_gain_fixed_P(ap, supply, ana.certificate.P1, ana.certificate.P2, solver=solver, tol=tol)
    trace.append({"stage": "improve", "gamma": imp.gamma,
                  "K": None if imp.K is None else imp.K.tolist(), "status": imp.status})
    if imp.ok and (imp.gamma is None or ana.gamma is None or imp.gamma <= ana.gamma + GAMMA_SLACK):
        best_K, best_gamma = imp.K, imp.gamma
        best_cert = L.LyapunovVars(ana.certificate.P1, ana.certificate.P2, imp.certificate.P3,
                                   imp.certificate.Q, imp.certificate.R)
    else:
        best_K, best_gamma, best_cert = K0, ana.gamma, ana.certificate
    if callback:
        callback(0, best_gamma, best_K)

    anchors = (best_cert.P1, best_cert.P2, best_K)
    status = OPTIMAL
    for k in range(1, cfg.max_iter + 1):
        sol, v, Kvar, gvar, margin, route = _iterate_once(ap, supply, anchors, cfg, solver, tol)
        if sol.ok:
            Kn = np.atleast_2d(sol.values["K"])
            cert = v.numeric()
            g = float(sol.values["gamma"]) if gvar is not None else None
            report = verify_theorem1(ap, supply, Kn, cert, g)
        entry = {"stage": "inner", "iter": k, "status": sol.status, "solve_time": sol.diagnostics.get("solve_time"),
                 "margin": margin, "route": route}
        if not sol.ok:
            entry["reason"] = sol.diagnostics.get("reason", sol.diagnostics.get("raw_status"))
            trace.append(entry)
            diag["stopped"] = f"iteration {k} subproblem {sol.status}; returning best-so-far"
            break
        dY = _rel_change(np.hstack([cert.P1, cert.P2]), np.hstack([anchors[0], anchors[1]]))
        dK = _rel_change(Kn, anchors[2])
        entry.update({"gamma": g, "K": Kn.tolist(), "dY": dY, "dK": dK,
                      "max_eig_diss": report["max_eig_dissipation"], "sound": certified(report)})
        trace.append(entry)
        if not certified(report):
            log.warning("iteration %d: returned point does not re-verify %s", k, report)
            diag["stopped"] = f"iteration {k} failed re-verification"
            break
        if g is not None and best_gamma is not None and g > best_gamma + GAMMA_SLACK:
            log.warning("iteration %d: gamma increased %.8f -> %.8f", k, best_gamma, g)
        best_K, best_gamma, best_cert = Kn, g, cert
        anchors = (cert.P1, cert.P2, Kn)
        if callback:
            callback(k, g, Kn)
        if max(dY, dK) < cfg.eps:
            diag["stopped"] = f"converged after {k} iterations"
            break
    else:
        diag["stopped"] = f"reached max_iter={cfg.max_iter}"
    res = SynthesisResult("algorithm1", status, best_K, best_gamma, best_cert, trace,
                          time.perf_counter() - t0, diag)
    return res
