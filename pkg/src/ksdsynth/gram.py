"""Gram, projection and error matrices for one delay interval."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad_vec

from .basis import IntervalBasis
from .errors import ApproximationSpanError, BasisDependentError

log = logging.getLogger(__name__)

COND_WARN = 1e12


@dataclass(frozen=True)
class QuadTol:
    rel: float = 1e-12
    abs: float = 1e-14

    def __post_init__(self):
        if not (0 < self.rel <= 1e-6):
            raise ValueError("relative quadrature tolerance must lie in (0, 1e-6]")
        if self.abs <= 0:
            raise ValueError("absolute quadrature tolerance must be positive")


def panel_points(lo: float, hi: float, omega: float) -> list[float]:
    """Interior breakpoints giving at least ceil(omega*len/pi) panels."""
    panels = max(1, math.ceil(omega * (hi - lo) / math.pi))
    return list(np.linspace(lo, hi, panels + 1)[1:-1])


def integrate(fun, lo: float, hi: float, tol: QuadTol = QuadTol(), omega: float = 0.0) -> np.ndarray:
    """Adaptive GK15 integral of a vector/matrix-valued ``fun`` over [lo, hi]."""
    val, _err = quad_vec(
        fun, lo, hi, epsabs=tol.abs, epsrel=tol.rel, norm="max",
        quadrature="gk15", points=panel_points(lo, hi, omega) or None, limit=20000,
    )
    return np.asarray(val)


def spd_sqrt(X: np.ndarray, *, psd: bool = False, name: str = "matrix") -> tuple[np.ndarray, np.ndarray | None]:
    """Symmetric square root and (when invertible) its inverse.

    With ``psd=True`` eigenvalues in (-1e-12 lmax, 0] are clamped to zero and the
    inverse is None if any eigenvalue vanishes.
    """
    X = 0.5 * (X + X.T)
    if X.size == 0:
        return X.copy(), X.copy()
    w, U = np.linalg.eigh(X)
    lmax = max(abs(w).max(), 1e-300)
    if psd:
        if w.min() < -1e-12 * lmax:
            raise ValueError(f"{name} is not positive semidefinite (min eig {w.min():.3e})")
        w = np.clip(w, 0.0, None)
    elif w.min() <= 0:
        raise ValueError(f"{name} is not positive definite (min eig {w.min():.3e})")
    s = np.sqrt(w)
    root = (U * s) @ U.T
    inv = None if np.any(s == 0) else (U / s) @ U.T
    return root, inv


@dataclass(frozen=True, eq=False)
class GramData:
    G: np.ndarray
    H: np.ndarray
    F: np.ndarray
    Gamma: np.ndarray
    Phi2: np.ndarray
    E: np.ndarray
    sqrtH: np.ndarray
    sqrtHinv: np.ndarray
    sqrtF: np.ndarray
    sqrtFinv: np.ndarray
    sqrtE: np.ndarray
    sqrtEinv: np.ndarray
    T: np.ndarray
    Ttilde: np.ndarray
    cond_G: float

    @property
    def mu(self) -> int:
        return self.Phi2.shape[0]

    @property
    def varkappa(self) -> int:
        return self.H.shape[0]

    @property
    def projection(self) -> np.ndarray:
        """``Gamma H^{-1}``."""
        return self.Gamma @ self.sqrtHinv @ self.sqrtHinv

    def to_json(self) -> dict:
        out = {k: getattr(self, k).tolist() for k in
               ("G", "H", "F", "Gamma", "Phi2", "E", "sqrtH", "sqrtF", "sqrtE", "T", "Ttilde")}
        out["cond_G"] = self.cond_G
        return out


def compute_gram(b: IntervalBasis, tol: QuadTol = QuadTol()) -> GramData:
    kappa, mu = b.kappa, b.mu

    def integrand(t):
        g = b.g_many([t])[:, 0]
        return np.outer(g, g)

    G = integrate(integrand, b.lo, b.hi, tol, b.max_frequency)
    G = 0.5 * (G + G.T)
    # dependence inside h is a declaration error; a phi member in span(h) is
    # reported below as a singular error Gram
    wh = np.linalg.eigvalsh(G[mu:, mu:])
    if wh.min() <= 1e-12 * wh.max():
        raise BasisDependentError(
            f"basis linearly dependent on [{b.lo}, {b.hi}]: min eig of H = {wh.min():.3e}, max = {wh.max():.3e}"
        )
    w = np.linalg.eigvalsh(G)
    cond = float(w.max() / w.min()) if w.min() > 0 else np.inf
    if cond > COND_WARN:
        log.warning("Gram matrix on [%g, %g] is ill-conditioned (cond %.2e)", b.lo, b.hi, cond)

    Phi2 = G[:mu, :mu]
    Gamma = G[:mu, mu:]
    H = G[mu:, mu:]
    d = b.d
    F = H[-d:, -d:]
    sqrtH, sqrtHinv = spd_sqrt(H, name="H")
    sqrtF, sqrtFinv = spd_sqrt(F, name="F")
    Hinv = sqrtHinv @ sqrtHinv
    E = Phi2 - Gamma @ Hinv @ Gamma.T
    E = 0.5 * (E + E.T)
    sqrtE, sqrtEinv = spd_sqrt(E, psd=True, name="E")
    if mu > 0:
        we = np.linalg.eigvalsh(E)
        if sqrtEinv is None or we.min() <= 1e-12 * max(np.abs(np.linalg.eigvalsh(Phi2)).max(), 1e-300):
            raise ApproximationSpanError(
                "approximation error Gram is singular: some phi functions lie in span(h); "
                "move them from phi to varphi/f"
            )
    T = np.vstack([Gamma @ sqrtHinv, sqrtH])
    Ttilde = np.vstack([sqrtE, np.zeros((kappa - mu, mu))])
    mats = dict(G=G, H=H, F=F, Gamma=Gamma, Phi2=Phi2, E=E, sqrtH=sqrtH, sqrtHinv=sqrtHinv,
                sqrtF=sqrtF, sqrtFinv=sqrtFinv, sqrtE=sqrtE, sqrtEinv=sqrtEinv, T=T, Ttilde=Ttilde)
    for m in mats.values():
        m.setflags(write=False)
    return GramData(cond_G=cond, **mats)


def projection_error_at(gd: GramData, b: IntervalBasis, tau: float) -> np.ndarray:
    """``eps(tau) = phi(tau) - Gamma H^{-1} h(tau)``."""
    g, h = b.eval(tau)
    return g[: b.mu] - gd.projection @ h


def transfer_matrices(gd: GramData) -> tuple[np.ndarray, np.ndarray]:
    return gd.T, gd.Ttilde
