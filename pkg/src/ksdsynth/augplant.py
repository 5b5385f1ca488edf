"""Augmented closed-loop plant: the lifted matrices acting on

    vartheta = [x; chi_1..chi_nu; xi_1..xi_nu; e_1..e_nu; w]

where ``chi_i = x(t - r_i)``, ``xi_i`` are the normalized projections of the
history onto ``h_i`` and ``e_i`` those onto the approximation residuals.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag

from .gram import GramData, QuadTol, compute_gram
from .model import KERNEL_NAMES, DelaySystem


@dataclass(frozen=True)
class DimensionTable:
    n: int
    m: int
    p: int
    q: int
    nu: int
    d_i: tuple[int, ...]
    delta_i: tuple[int, ...]
    mu_i: tuple[int, ...]

    @property
    def varkappa_i(self):
        return tuple(d + s for d, s in zip(self.d_i, self.delta_i))

    @property
    def kappa_i(self):
        return tuple(v + m for v, m in zip(self.varkappa_i, self.mu_i))

    @property
    def d(self):
        return sum(self.d_i)

    @property
    def varkappa(self):
        return sum(self.varkappa_i)

    @property
    def mu(self):
        return sum(self.mu_i)

    @property
    def kappa(self):
        return sum(self.kappa_i)

    @property
    def beta(self):
        return 1 + self.nu + self.kappa

    @property
    def e(self):
        return self.d * self.n

    @property
    def state_block(self):
        return self.beta * self.n + self.q

    @property
    def phi_width(self):
        return self.state_block + self.m

    def column_layout(self) -> list[tuple[str, int, int]]:
        """Named half-open column ranges of vartheta (and of the A/C matrices)."""
        n = self.n
        out, pos = [("x", 0, n)], n
        for i in range(self.nu):
            out.append((f"chi_{i + 1}", pos, pos + n))
            pos += n
        for i, v in enumerate(self.varkappa_i):
            out.append((f"xi_{i + 1}", pos, pos + v * n))
            pos += v * n
        for i, mu in enumerate(self.mu_i):
            out.append((f"e_{i + 1}", pos, pos + mu * n))
            pos += mu * n
        out.append(("w", pos, pos + self.q))
        return out

    def as_dict(self) -> dict:
        return {"n": self.n, "m": self.m, "p": self.p, "q": self.q, "nu": self.nu,
                "d_i": list(self.d_i), "delta_i": list(self.delta_i), "mu_i": list(self.mu_i),
                "varkappa_i": list(self.varkappa_i), "kappa_i": list(self.kappa_i),
                "d": self.d, "varkappa": self.varkappa, "mu": self.mu, "kappa": self.kappa,
                "beta": self.beta, "e": self.e, "state_block": self.state_block, "phi_width": self.phi_width}


@dataclass(frozen=True, eq=False)
class AugmentedPlant:
    A: np.ndarray
    B1: np.ndarray
    C: np.ndarray
    B2: np.ndarray
    Ahat: tuple
    Bhat: tuple
    Chat: tuple
    Bfrakhat: tuple
    Ihat: np.ndarray
    Mmat: np.ndarray
    Lambda: np.ndarray
    dims: DimensionTable
    rhat: tuple[float, ...]
    grams: tuple[GramData, ...]


def kernel_coefficients(sys: DelaySystem, i: int):
    """``(Ahat_i, Bhat_i, Chat_i, Bfrakhat_i)`` for interval ``i`` (0-based).

    ``Ahat_i (g_i(tau) kron I_n)`` reproduces the kernel exactly.
    """
    kappa = sys.basis[i].kappa
    out = []
    for name in KERNEL_NAMES:
        rows, cols = sys.kernel_shape(name)
        hat = np.zeros((rows, kappa * cols))
        for t in sys.dd_kernels[i][name]:
            if t.coefficient.shape != (rows, cols):
                raise ValueError(f"{name}~_{i + 1}: coefficient shape {t.coefficient.shape}, expected {(rows, cols)}")
            j = t.basis_index
            hat[:, j * cols:(j + 1) * cols] += t.coefficient
        out.append(hat)
    return tuple(out)


def dimension_table(sys: DelaySystem) -> DimensionTable:
    d = sys.dims
    return DimensionTable(d.n, d.m, d.p, d.q, sys.nu,
                          tuple(b.d for b in sys.basis), tuple(b.delta for b in sys.basis),
                          tuple(b.mu for b in sys.basis))


def compute_grams(sys: DelaySystem, tol: QuadTol = QuadTol()) -> tuple[GramData, ...]:
    return tuple(compute_gram(b, tol) for b in sys.basis)


def _hcat(blocks, rows):
    blocks = [b for b in blocks if b.shape[1] > 0]
    return np.hstack(blocks) if blocks else np.zeros((rows, 0))


def assemble_plant(sys: DelaySystem, grams=None, tol: QuadTol = QuadTol()) -> AugmentedPlant:
    if grams is None:
        grams = compute_grams(sys, tol)
    dims = dimension_table(sys)
    n, m, p, q, nu = dims.n, dims.m, dims.p, dims.q, dims.nu
    In, Ip = np.eye(n), np.eye(p)
    coefs = [kernel_coefficients(sys, i) for i in range(nu)]
    Ahat, Bhat, Chat, Bfhat = (tuple(c[k] for c in coefs) for k in range(4))

    def lifted(pointwise, hats, eye, tail, rows):
        xi = [hats[i] @ np.kron(grams[i].T, eye) for i in range(nu)]
        err = [hats[i] @ np.kron(grams[i].Ttilde, eye) for i in range(nu)]
        return _hcat(list(pointwise) + xi + err + [tail], rows)

    A = lifted(sys.A, Ahat, In, sys.D1, n)
    B1 = lifted(sys.B, Bhat, Ip, np.zeros((n, q)), n)
    C = lifted(sys.C, Chat, In, sys.D2, m)
    B2 = lifted(sys.Bfrak, Bfhat, Ip, np.zeros((m, q)), m)

    blocks = []
    for b, gd in zip(sys.basis, grams):
        Itil = np.hstack([np.zeros((b.d, b.delta)), np.eye(b.d)])
        blocks.append(gd.sqrtFinv @ Itil @ gd.sqrtH)
    Ihat = np.kron(block_diag(*blocks), In)

    # boundary terms: upper endpoints on [x, chi_1..chi_{nu-1}], lower on [chi_1..chi_nu]
    d = dims.d
    upper = np.zeros((d, 1 + nu))
    lower = np.zeros((d, 1 + nu))
    derivs = []
    row = 0
    for i, (b, gd) in enumerate(zip(sys.basis, grams)):
        f_hi, f_lo = b.boundary()
        upper[row:row + b.d, i] = gd.sqrtFinv @ f_hi
        lower[row:row + b.d, i + 1] = gd.sqrtFinv @ f_lo
        derivs.append(gd.sqrtFinv @ b.M @ gd.sqrtH)
        row += b.d
    Mmat = np.hstack([upper - lower, -block_diag(*derivs)]) if derivs else upper - lower
    Lambda = np.kron(np.diag(sys.rhat), In)
    for arr in (A, B1, C, B2, Ihat, Mmat, Lambda):
        arr.setflags(write=False)
    return AugmentedPlant(A, B1, C, B2, Ahat, Bhat, Chat, Bfhat, Ihat, Mmat, Lambda, dims,
                          tuple(float(x) for x in sys.rhat), tuple(grams))


def gain_lift(K, beta: int, tail: int):
    """``(I_beta kron K) (+) O_tail``; K may be numeric or a cvxpy expression."""
    from .lmi import blkdiag, kron_eye

    return blkdiag(kron_eye(beta, K), np.zeros((tail, tail)))


def closed_loop_maps(ap: AugmentedPlant, K):
    """``(Omega, Sigma)`` for gain K (p x n)."""
    dims = ap.dims
    if tuple(K.shape) != (dims.p, dims.n):
        raise ValueError(f"K must be {dims.p}x{dims.n}, got {K.shape}")
    L = gain_lift(K, dims.beta, dims.q)
    return ap.A + ap.B1 @ L, ap.C + ap.B2 @ L
