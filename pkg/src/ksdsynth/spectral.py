"""Rightmost spectrum of the closed-loop DDE by collocating its infinitesimal
generator on piecewise Chebyshev grids.

The history segment [-r, 0] is split at the delays so that every kernel is
smooth on each piece.  Each piece carries N_i + 1 extremal Chebyshev points
and neighbouring pieces share their breakpoint.  Interior rows of the
discretized generator differentiate the local interpolant; the row at
theta = 0 is the splicing condition, i.e. the right-hand side of the DDE
applied to the interpolant.  Distributed terms use product-integration
weights ``int K(tau) l_j(tau) dtau`` computed with Gauss-Legendre, which stays
accurate for the oscillatory kernels where plain Clenshaw-Curtis on the
collocation nodes would not.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import ConfigError
from .model import DelaySystem

SA_TOL = 1e-4
MAX_DOUBLINGS = 4


@dataclass(frozen=True)
class SpectralConfig:
    N: int = 60
    refine: bool = True
    count: int = 10
    quad_points: int = 0  # 0 -> chosen from kernel frequencies

    def __post_init__(self):
        if self.N < 8:
            raise ConfigError("need at least 8 collocation nodes")
        if self.count < 1:
            raise ConfigError("count must be positive")


@dataclass
class SpectralResult:
    sa: float
    eigenvalues: np.ndarray
    converged: bool | None
    history: list = field(default_factory=list)  # (N, sa) pairs

    def to_json(self) -> dict:
        return {"sa": self.sa, "converged": self.converged,
                "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
                "refinement": [{"N": n, "sa": s} for n, s in self.history]}


def cheb_nodes(N: int, a: float, b: float):
    """Extremal Chebyshev points on [a, b] in increasing order, with barycentric weights."""
    x = -np.cos(np.pi * np.arange(N + 1) / N)
    w = (-1.0) ** np.arange(N + 1)
    w[0] *= 0.5
    w[-1] *= 0.5
    return a + (b - a) * (x + 1) / 2, w


def diff_matrix(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    dx = x[:, None] - x[None, :]
    np.fill_diagonal(dx, 1.0)
    D = (w[None, :] / w[:, None]) / dx
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return D


def lagrange_matrix(x: np.ndarray, w: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Rows ``l_j(t_k)`` of the barycentric interpolant."""
    t = np.atleast_1d(t)
    diff = t[:, None] - x[None, :]
    exact = np.isclose(diff, 0.0, atol=1e-15, rtol=0.0)
    diff[exact] = 1.0
    L = w[None, :] / diff
    L /= L.sum(axis=1, keepdims=True)
    hit = exact.any(axis=1)
    L[hit] = exact[hit].astype(float)
    return L


def _split(N: int, lengths) -> list[int]:
    total = sum(lengths)
    return [max(4, int(round(N * ln / total))) for ln in lengths]


def _quad_points(sys: DelaySystem, cfg: SpectralConfig) -> int:
    if cfg.quad_points:
        return cfg.quad_points
    # enough Gauss points to resolve the fastest basis oscillation plus the interpolant
    omega = max((b.max_frequency * b.length for b in sys.basis), default=0.0)
    return int(min(400, 40 + 2 * omega + 2 * cfg.N))


def generator_matrix(sys: DelaySystem, K, N: int, quad_points: int) -> np.ndarray:
    K = np.atleast_2d(np.asarray(K, dtype=float))
    n = sys.dims.n
    edges = (0.0,) + tuple(sys.delays)
    lengths = np.diff(edges)
    Ns = _split(N, lengths)
    # global node list: leftmost interval first, shared breakpoints once
    pieces = []
    offset = 0
    for i in reversed(range(sys.nu)):
        x, w = cheb_nodes(Ns[i], -edges[i + 1], -edges[i])
        pieces.append((i, x, w, offset))
        offset += Ns[i]
    total = offset + 1
    M = np.zeros((total * n, total * n))
    In = np.eye(n)

    def put(row, col, block):
        M[row * n:(row + 1) * n, col * n:(col + 1) * n] += block

    for i, x, w, off in pieces:
        D = diff_matrix(x, w)
        for a in range(len(x) - 1):  # right endpoint belongs to the next piece / splice row
            for b in range(len(x)):
                if D[a, b] != 0.0:
                    put(off + a, off + b, D[a, b] * In)

    zero = total - 1
    put(zero, zero, sys.A[0] + sys.B[0] @ K)
    gx, gw = leggauss(quad_points)
    for i, x, w, off in pieces:
        put(zero, off, sys.A[i + 1] + sys.B[i + 1] @ K)  # x(-r_i) is the left node of piece i
        lo, hi = x[0], x[-1]
        tau = lo + (hi - lo) * (gx + 1) / 2
        wq = gw * (hi - lo) / 2
        kern = sys.kernel_at(i, "A", tau) + sys.kernel_at(i, "B", tau) @ K  # (Q, n, n)
        L = lagrange_matrix(x, w, tau)  # (Q, N_i + 1)
        W = np.einsum("q,qj,qab->jab", wq, L, kern)
        for j in range(len(x)):
            put(zero, off + j, W[j])
    return M


def _eigs(sys, K, N, qp, count):
    lam = np.linalg.eigvals(generator_matrix(sys, K, N, qp))
    lam = lam[np.argsort(-lam.real)]
    return float(lam[0].real), lam[:count]


def spectral_abscissa(sys: DelaySystem, K, cfg: SpectralConfig | None = None) -> SpectralResult:
    cfg = cfg or SpectralConfig()
    qp = _quad_points(sys, cfg)
    N = cfg.N
    sa, lam = _eigs(sys, K, N, qp, cfg.count)
    hist = [(N, sa)]
    if not cfg.refine:
        return SpectralResult(sa, lam, None, hist)
    for _ in range(MAX_DOUBLINGS):
        N *= 2
        sa2, lam2 = _eigs(sys, K, N, max(qp, _quad_points(sys, SpectralConfig(N=N))), cfg.count)
        hist.append((N, sa2))
        done = abs(sa2 - sa) < SA_TOL
        sa, lam = sa2, lam2
        if done:
            return SpectralResult(sa, lam, True, hist)
    return SpectralResult(sa, lam, False, hist)
