"""Symmetric block matrices of the synthesis conditions.

Every builder accepts either numpy arrays or cvxpy expressions for the decision
variables.  Passing arrays returns a numeric matrix, which is how certificates are
re-verified and how the two assemblies of the dissipation inequality are
cross-checked; passing cvxpy variables returns an affine expression for the
SDP layer.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import cvxpy as cp
import numpy as np
from scipy.linalg import block_diag

from .augplant import AugmentedPlant, gain_lift


# ----------------------------------------------------------- generic algebra

def is_expr(x) -> bool:
    return isinstance(x, cp.Expression)


def _shape(x):
    return tuple(x.shape) if len(x.shape) == 2 else (x.shape[0], 1)


def bmat(rows):
    if not any(is_expr(b) for row in rows for b in row):
        return np.block([[np.asarray(b, dtype=float) for b in row] for row in rows])
    # cvxpy chokes on zero-sized blocks; they carry no information anyway
    rows = [[b for b in row if _shape(b)[1] > 0] for row in rows]
    rows = [row for row in rows if row and _shape(row[0])[0] > 0]
    return cp.bmat(rows)


def blkdiag(*mats):
    mats = [m for m in mats if _shape(m)[0] > 0 or _shape(m)[1] > 0]
    if not any(is_expr(m) for m in mats):
        return block_diag(*[np.atleast_2d(np.asarray(m, dtype=float)) for m in mats])
    shapes = [_shape(m) for m in mats]
    rows = []
    for i, mi in enumerate(mats):
        rows.append([mi if i == j else np.zeros((shapes[i][0], shapes[j][1])) for j in range(len(mats))])
    return bmat(rows)


def kron_eye(k: int, X):
    if is_expr(X):
        return cp.kron(np.eye(k), X)
    return np.kron(np.eye(k), X)


def sy(X):
    return X + X.T


def symmetrize(X):
    return 0.5 * (X + X.T)


def Z(r, c=None):
    return np.zeros((r, r if c is None else c))


# --------------------------------------------------------------- variables

@dataclass
class LyapunovVars:
    P1: object
    P2: object
    P3: object
    Q: list
    R: list

    def numeric(self) -> "LyapunovVars":
        val = lambda v: np.array(v.value) if is_expr(v) else np.asarray(v)
        return LyapunovVars(val(self.P1), val(self.P2), val(self.P3),
                            [val(q) for q in self.Q], [val(r) for r in self.R])

    def to_json(self) -> dict:
        v = self.numeric()
        return {"P1": v.P1.tolist(), "P2": v.P2.tolist(), "P3": v.P3.tolist(),
                "Q": [q.tolist() for q in v.Q], "R": [r.tolist() for r in v.R]}


@dataclass
class DualVars:
    X: object
    V: object
    P1: object
    P2: object
    P3: object
    Q: list
    R: list
    alphas: Sequence[float] = field(default_factory=list)

    def to_json(self) -> dict:
        val = lambda v: (np.array(v.value) if is_expr(v) else np.asarray(v)).tolist()
        return {"X": val(self.X), "V": val(self.V), "P1": val(self.P1), "P2": val(self.P2),
                "P3": val(self.P3), "Q": [val(q) for q in self.Q], "R": [val(r) for r in self.R],
                "alphas": list(map(float, self.alphas))}


def random_lyapunov_vars(ap: AugmentedPlant, rng: np.random.Generator) -> LyapunovVars:
    n, e, nu = ap.dims.n, ap.dims.e, ap.dims.nu

    def s(k):
        X = rng.standard_normal((k, k))
        return X + X.T

    return LyapunovVars(s(n), rng.standard_normal((n, e)), s(e), [s(n) for _ in range(nu)], [s(n) for _ in range(nu)])


# ------------------------------------------------------------------ blocks

def build_xi(Q, R, ap: AugmentedPlant, J3):
    """Block-diagonal Xi on the vartheta layout."""
    dims = ap.dims
    nu, rh = dims.nu, ap.rhat
    blocks = [Q[0] + rh[0] * R[0]]
    for j in range(nu - 1):
        blocks.append(Q[j + 1] + rh[j + 1] * R[j + 1] - Q[j])
    blocks.append(-Q[nu - 1])
    blocks += [-kron_eye(k, R[i]) for i, k in enumerate(dims.varkappa_i) if k > 0]
    blocks += [-kron_eye(k, R[i]) for i, k in enumerate(dims.mu_i) if k > 0]
    blocks.append(-J3)
    return blkdiag(*blocks)


def big_p(ap: AugmentedPlant, P1, P2):
    """Row ``[P1, O, P2 Ihat, O]`` of width beta*n + q + m."""
    d = ap.dims
    n = d.n
    return bmat([[P1, Z(n, d.nu * n), P2 @ ap.Ihat, Z(n, d.mu * n + d.q + d.m)]])


def m_kron(ap: AugmentedPlant):
    return np.kron(ap.Mmat, np.eye(ap.dims.n))


def build_phi(ap: AugmentedPlant, P2, P3, Q, R, Sigma, J):
    """The P1-free, Omega-free remainder of the dissipation inequality."""
    J1, Jt, J2, J3 = J
    d = ap.dims
    n, e, m, q = d.n, d.e, d.m, d.q
    tail = d.mu * n + q + m
    left = bmat([[P2], [Z(d.nu * n, e)], [ap.Ihat.T @ P3], [Z(tail, e)]])
    right = bmat([[m_kron(ap), Z(e, tail)]])
    sup_left = bmat([[Z(d.beta * n, m)], [-J2.T], [Jt]])
    sup_right = bmat([[Sigma, Z(m, m)]])
    return sy(left @ right + sup_left @ sup_right) + blkdiag(build_xi(Q, R, ap, J3), J1)


def theorem1_left(ap: AugmentedPlant, v: LyapunovVars, K, J):
    """``[[Psi, Sigma' Jt'], [*, J1]]`` assembled through S and the 2x2 P."""
    J1, Jt, J2, J3 = J
    d = ap.dims
    n, e, m, q = d.n, d.e, d.m, d.q
    Omega = ap.A + ap.B1 @ gain_lift(K, d.beta, q)
    Sigma = ap.C + ap.B2 @ gain_lift(K, d.beta, q)
    P = bmat([[v.P1, v.P2], [v.P2.T, v.P3]])
    S = bmat([[np.eye(n), Z(n, d.nu * n), Z(n, d.varkappa * n), Z(n, d.mu * n), Z(n, q)],
              [Z(e, n), Z(e, d.nu * n), ap.Ihat, Z(e, d.mu * n), Z(e, q)]])
    deriv = bmat([[Omega], [bmat([[m_kron(ap), Z(e, d.mu * n + q)]])]])
    sup = bmat([[Z(d.beta * n, m)], [J2.T]])
    Psi = sy(S.T @ P @ deriv - sup @ Sigma) + build_xi(v.Q, v.R, ap, J3)
    return bmat([[Psi, Sigma.T @ Jt.T], [Jt @ Sigma, J1]])


def theorem1_right(ap: AugmentedPlant, v: LyapunovVars, K, J):
    """``Sy(Pbold' Pi) + Phi``."""
    d = ap.dims
    L = gain_lift(K, d.beta, d.q)
    Omega = ap.A + ap.B1 @ L
    Sigma = ap.C + ap.B2 @ L
    Pi = bmat([[Omega, Z(d.n, d.m)]])
    return sy(big_p(ap, v.P1, v.P2).T @ Pi) + build_phi(ap, v.P2, v.P3, v.Q, v.R, Sigma, J)


def theorem1_positivity(ap: AugmentedPlant, P1, P2, P3, Q):
    """``[[P1, P2], [*, P3]] + O_n (+) diag(I_{d_i} kron Q_i)``."""
    d = ap.dims
    qblocks = [kron_eye(di, Q[i]) for i, di in enumerate(d.d_i)]
    return bmat([[P1, P2], [P2.T, P3]]) + blkdiag(Z(d.n), *qblocks)


def build_theorem1(ap: AugmentedPlant, v: LyapunovVars, K, J):
    """``(lmi_pos, [Q_i, R_i...], lmi_diss_right, lmi_diss_left)``.

    The positivity block and the Q/R list must be positive definite, the
    dissipation block negative definite.
    The left form is returned for cross-checking; it is bilinear when both K and
    P are variables, so it is only built when that is not the case.
    """
    pos = theorem1_positivity(ap, v.P1, v.P2, v.P3, v.Q)
    qr = list(v.Q) + list(v.R)
    right = theorem1_right(ap, v, K, J)
    left = None
    if not (is_expr(K) and (is_expr(v.P1) or is_expr(v.P2))):
        left = theorem1_left(ap, v, K, J)
    return pos, qr, right, left


def build_theorem2(ap: AugmentedPlant, dv: DualVars, J):
    """``(lmi_pos, [Qd_i, Rd_i...], lmi_dual)``; K = V X^{-1}."""
    d = ap.dims
    n, m, q, beta = d.n, d.m, d.q, d.beta
    if len(dv.alphas) != beta:
        raise ValueError(f"need {beta} alphas, got {len(dv.alphas)}")
    pos = theorem1_positivity(ap, dv.P1, dv.P2, dv.P3, dv.Q)
    lift_x = blkdiag(kron_eye(beta, dv.X), np.eye(q))
    lift_v = blkdiag(kron_eye(beta, dv.V), Z(q))
    Pi_dot = bmat([[ap.A @ lift_x + ap.B1 @ lift_v, Z(n, m)]])
    Sigma_dot = ap.C @ lift_x + ap.B2 @ lift_v
    Phi_dot = build_phi(ap, dv.P2, dv.P3, dv.Q, dv.R, Sigma_dot, J)
    outer = np.vstack([np.eye(n), np.kron(np.asarray(dv.alphas, dtype=float).reshape(-1, 1), np.eye(n)),
                       Z(q + m, n)])
    P_dot = big_p(ap, dv.P1, dv.P2)
    core = bmat([[Z(n), P_dot], [P_dot.T, Phi_dot]])
    lmi_dual = sy(outer @ bmat([[-dv.X, Pi_dot]])) + core
    return pos, list(dv.Q) + list(dv.R), lmi_dual


def n_matrix(ap: AugmentedPlant, K):
    d = ap.dims
    return bmat([[ap.B1, Z(d.n, d.m)]]) @ gain_lift(K, d.beta, d.q + d.m)


def build_eq40(ap: AugmentedPlant, v: LyapunovVars, K, Zvar, anchors, J):
    """Inner convex approximation of the dissipation inequality around anchors.

    ``anchors = (P1_tilde, P2_tilde, K_tilde)`` are numeric.
    """
    P1t, P2t, Kt = anchors
    d = ap.dims
    n, m, q = d.n, d.m, d.q
    Pb = big_p(ap, v.P1, v.P2)
    Pt = big_p(ap, P1t, P2t)
    N = n_matrix(ap, K)
    Nt = n_matrix(ap, Kt)
    Sigma = ap.C + ap.B2 @ gain_lift(K, d.beta, q)
    Phi_hat = sy(Pb.T @ bmat([[ap.A, Z(n, m)]])) + build_phi(ap, v.P2, v.P3, v.Q, v.R, Sigma, J)
    top = Phi_hat + sy(Pt.T @ N + Pb.T @ Nt - Pt.T @ Nt)
    return bmat([
        [top, (Pb - Pt).T, (N - Nt).T],
        [Pb - Pt, -Zvar, Z(n)],
        [N - Nt, Z(n), Zvar - np.eye(n)],
    ])


def max_eig(M) -> float:
    M = np.asarray(M, dtype=float)
    return float(np.linalg.eigvalsh(0.5 * (M + M.T)).max())


def min_eig(M) -> float:
    M = np.asarray(M, dtype=float)
    return float(np.linalg.eigvalsh(0.5 * (M + M.T)).min())


def dump_lmi(M) -> list:
    return np.asarray(M, dtype=float).tolist()
