"""Builtin systems.

``paper-s4`` is the two-delay benchmark with r = (1, 1.7), n = m = 2, p = q = 1 and
oscillatory distributed-delay kernels.  Kernel coefficients are authored from the
closed-form kernels; the basis on interval i is

    phi    = [exp(sin w_i t), exp(cos w_i t)]
    varphi = [1 / (sin^2(1.2 t) + 1)]  or  [1 / (cos^2(0.7 t) + 1)]
    f      = [1, t, ..., t^sigma, sin(k w_i t)_{k<=lam}, cos(k w_i t)_{k<=lam}]

with w_1 = 20, w_2 = 18.
"""
from __future__ import annotations

from functools import partial

import numpy as np

from .basis import BasisFunction, IntervalBasis, poly, trig_family
from .model import Dimensions, DelaySystem, KernelTerm, l2gain_template

PAPER_GAIN_THEOREM2 = np.array([[-1.3794, 1.8668]])
PAPER_GAIN_TABLE1 = np.array([[-1.5033, -1.9815]])
PAPER_GAIN_TABLE2 = np.array([[-1.5810, -1.9805]])


def _closed_forms():
    """Kernel closed forms, used both to author coefficients and as a test oracle."""
    es20 = lambda t: np.exp(np.sin(20 * t))
    ec20 = lambda t: np.exp(np.cos(20 * t))
    es18 = lambda t: np.exp(np.sin(18 * t))
    ec18 = lambda t: np.exp(np.cos(18 * t))
    v1 = lambda t: 1.0 / (np.sin(1.2 * t) ** 2 + 1.0)
    v2 = lambda t: 1.0 / (np.cos(0.7 * t) ** 2 + 1.0)
    s20, c20 = (lambda t: np.sin(20 * t)), (lambda t: np.cos(20 * t))
    s18, c18 = (lambda t: np.sin(18 * t)), (lambda t: np.cos(18 * t))

    def A1(t):
        return np.array([[0.1 + 3 * s20(t), 0.8 * es20(t) - 0.3 * ec20(t)],
                         [0.3 + v1(t), 3 * s20(t)]])

    def A2(t):
        return np.array([[-10 * c18(t), 0.3 * ec18(t) - v2(t)],
                         [0.1 * es18(t), 0.2 - 10 * c18(t)]])

    def B1(t):
        return np.array([[0.01 * t - 0.01 * v1(t) + 0.1],
                         [0.1 * t + 0.02 * v1(t)]])

    def B2(t):
        return np.array([[0.2 * ec18(t) + 0.01 * es18(t) + 0.01 * v2(t)],
                         [0.1 * ec18(t) + 0.02 * es18(t)]])

    def C1(t):
        return np.array([[0.7 + c20(t), v1(t) - 0.2],
                         [0.4 - 0.5 * es20(t), 0.8 - s20(t)]])

    def C2(t):
        return np.array([[0.2 + s18(t), 0.3 + ec18(t)],
                         [0.0 * t, 0.1 - v2(t)]])

    def Bf1(t):
        return np.array([[0.01 * t + 0.1 * es20(t) - 0.1 * v1(t)],
                         [0.2 * es20(t)]])

    def Bf2(t):
        return np.array([[0.2 * ec18(t) + 0.01 * es18(t) + 0.1 * v2(t)],
                         [0.02 * es18(t) + 0.2 * v2(t)]])

    return [{"A": A1, "B": B1, "C": C1, "Bfrak": Bf1}, {"A": A2, "B": B2, "C": C2, "Bfrak": Bf2}]


PAPER_KERNELS = _closed_forms()


def _interval_basis(lo, hi, omega, varphi, sigma, lam):
    phi = (BasisFunction("exp_sin", omega), BasisFunction("exp_cos", omega))
    f = tuple(poly(k) for k in range(sigma + 1)) + tuple(trig_family(omega, lam))
    return IntervalBasis(lo, hi, f, (varphi,), phi)


def _terms(basis: IntervalBasis, entries: dict, shape) -> list[KernelTerm]:
    """``entries`` maps BasisFunction -> {(row, col): coefficient}."""
    terms = []
    for bf, coefs in entries.items():
        C = np.zeros(shape)
        for (i, j), c in coefs.items():
            C[i, j] = c
        terms.append(KernelTerm(basis.index_of(bf), C))
    return terms


def paper_system(sigma: int = 1, lam: int = 1) -> DelaySystem:
    one, tau = poly(0), poly(1)
    es20, ec20 = BasisFunction("exp_sin", 20), BasisFunction("exp_cos", 20)
    es18, ec18 = BasisFunction("exp_sin", 18), BasisFunction("exp_cos", 18)
    v1, v2 = BasisFunction("inv_sin2", 1.2), BasisFunction("inv_cos2", 0.7)
    s20, c20 = BasisFunction("sin", 20), BasisFunction("cos", 20)
    s18, c18 = BasisFunction("sin", 18), BasisFunction("cos", 18)
    if sigma < 1:
        raise ValueError("the benchmark kernels need sigma >= 1 (they contain tau)")
    b1 = _interval_basis(-1.0, 0.0, 20.0, v1, sigma, lam)
    b2 = _interval_basis(-1.7, -1.0, 18.0, v2, sigma, lam)

    k1 = {
        "A": _terms(b1, {one: {(0, 0): 0.1, (1, 0): 0.3}, s20: {(0, 0): 3, (1, 1): 3},
                         es20: {(0, 1): 0.8}, ec20: {(0, 1): -0.3}, v1: {(1, 0): 1.0}}, (2, 2)),
        "B": _terms(b1, {tau: {(0, 0): 0.01, (1, 0): 0.1}, v1: {(0, 0): -0.01, (1, 0): 0.02},
                         one: {(0, 0): 0.1}}, (2, 1)),
        "C": _terms(b1, {one: {(0, 0): 0.7, (0, 1): -0.2, (1, 0): 0.4, (1, 1): 0.8}, c20: {(0, 0): 1.0},
                         v1: {(0, 1): 1.0}, es20: {(1, 0): -0.5}, s20: {(1, 1): -1.0}}, (2, 2)),
        "Bfrak": _terms(b1, {tau: {(0, 0): 0.01}, es20: {(0, 0): 0.1, (1, 0): 0.2}, v1: {(0, 0): -0.1}}, (2, 1)),
    }
    k2 = {
        "A": _terms(b2, {c18: {(0, 0): -10, (1, 1): -10}, ec18: {(0, 1): 0.3}, v2: {(0, 1): -1.0},
                         es18: {(1, 0): 0.1}, one: {(1, 1): 0.2}}, (2, 2)),
        "B": _terms(b2, {ec18: {(0, 0): 0.2, (1, 0): 0.1}, es18: {(0, 0): 0.01, (1, 0): 0.02},
                         v2: {(0, 0): 0.01}}, (2, 1)),
        "C": _terms(b2, {one: {(0, 0): 0.2, (0, 1): 0.3, (1, 1): 0.1}, s18: {(0, 0): 1.0},
                         ec18: {(0, 1): 1.0}, v2: {(1, 1): -1.0}}, (2, 2)),
        "Bfrak": _terms(b2, {ec18: {(0, 0): 0.2}, es18: {(0, 0): 0.01, (1, 0): 0.02},
                             v2: {(0, 0): 0.1, (1, 0): 0.2}}, (2, 1)),
    }
    return DelaySystem(
        dims=Dimensions(2, 2, 1, 1, 2),
        delays=(1.0, 1.7),
        A=(np.array([[-2, 0], [2, 0.01]]), np.array([[-1, 0.1], [0.2, 0]]), np.array([[-0.1, 0], [0, -0.2]])),
        B=(np.array([[0], [1.0]]), np.array([[0.01], [0.1]]), -np.array([[0.1], [0.1]])),
        C=(np.array([[-0.1, 0.2], [0, 0.1]]), np.array([[-0.1, 0], [0, 0.2]]), np.array([[0, 0.1], [-0.1, 0]])),
        Bfrak=(np.array([[0], [1.0]]), np.array([[0.01], [0.01]]), -np.array([[0.01], [0.1]])),
        D1=np.array([[0.2], [0.3]]),
        D2=np.array([[0.12], [0.1]]),
        basis=(b1, b2),
        dd_kernels=(k1, k2),
        supply=l2gain_template(2, 1),
        name=f"paper-s4(sigma={sigma},lambda={lam})",
    )


def scalar_system(a0: float = -1.0, a1: float = 0.0, r: float = 1.0, b0: float = 0.0,
                  d1: float = 1.0, c0: float = 1.0, d2: float = 0.0) -> DelaySystem:
    """Scalar plant ``x' = a0 x + a1 x(t-r) + b0 u + d1 w``, ``z = c0 x + d2 w``; no kernels."""
    b = IntervalBasis(-r, 0.0, (poly(0),))
    return DelaySystem(
        dims=Dimensions(1, 1, 1, 1, 1), delays=(r,),
        A=(np.array([[a0]]), np.array([[a1]])), B=(np.array([[b0]]), np.zeros((1, 1))),
        C=(np.array([[c0]]), np.zeros((1, 1))), Bfrak=(np.zeros((1, 1)), np.zeros((1, 1))),
        D1=np.array([[d1]]), D2=np.array([[d2]]), basis=(b,), dd_kernels=({},),
        supply=l2gain_template(1, 1), name="scalar",
    )


BUILTINS = {
    "paper-s4": paper_system,
    "paper-s4-lambda2": partial(paper_system, 1, 2),
}
