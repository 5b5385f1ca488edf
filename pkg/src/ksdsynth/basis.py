"""Per-interval basis families and the derivative-closure matrix.

Every delay interval ``[-r_i, -r_{i-1}]`` carries three ordered lists of scalar
functions:

* ``phi``    -- approximated components (projected onto ``h``),
* ``varphi`` -- L2 components kept exactly,
* ``f``      -- W^{1,2} components whose derivatives close over ``h``.

The stacked vectors are ``g = [phi; varphi; f]`` and ``h = [varphi; f]``, and
``M`` satisfies ``f'(tau) = M h(tau)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ClosureError, DomainError

KINDS = ("poly", "sin", "cos", "exp_sin", "exp_cos", "inv_sin2", "inv_cos2", "tabulated")
# kinds with a registered derivative rule (allowed in f)
CLOSED_KINDS = ("poly", "sin", "cos")


@dataclass(frozen=True)
class BasisFunction:
    kind: str
    param: float = 0.0
    samples: tuple[tuple[float, ...], tuple[float, ...]] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.kind == "poly":
            k = self.param
            if k < 0 or int(k) != k:
                raise ValueError(f"poly order must be a non-negative integer, got {k}")
        if self.kind == "tabulated":
            if self.samples is None or len(self.samples[0]) < 2:
                raise ValueError("tabulated basis function needs at least 2 samples")
            if len(self.samples[0]) != len(self.samples[1]):
                raise ValueError("tabulated tau/values length mismatch")
            if np.any(np.diff(self.samples[0]) <= 0):
                raise ValueError("tabulated sample points must be strictly increasing")

    def __call__(self, tau):
        t = np.asarray(tau, dtype=float)
        p = self.param
        kind = self.kind
        if kind == "poly":
            return t ** int(p) if p else np.ones_like(t)
        if kind == "sin":
            return np.sin(p * t)
        if kind == "cos":
            return np.cos(p * t)
        if kind == "exp_sin":
            return np.exp(np.sin(p * t))
        if kind == "exp_cos":
            return np.exp(np.cos(p * t))
        if kind == "inv_sin2":
            return 1.0 / (np.sin(p * t) ** 2 + 1.0)
        if kind == "inv_cos2":
            return 1.0 / (np.cos(p * t) ** 2 + 1.0)
        xs, ys = self.samples
        return np.interp(t, xs, ys)

    @property
    def frequency(self) -> float:
        """Highest angular frequency present (used to pre-split quadrature panels)."""
        if self.kind in ("sin", "cos", "exp_sin", "exp_cos"):
            return abs(self.param)
        if self.kind in ("inv_sin2", "inv_cos2"):
            return 2.0 * abs(self.param)
        return 0.0

    @property
    def label(self) -> str:
        if self.kind == "poly":
            return f"tau^{int(self.param)}"
        if self.kind == "tabulated":
            return "tabulated"
        return f"{self.kind}({self.param:g})"

    def to_json(self) -> dict:
        if self.kind == "tabulated":
            return {"kind": "tabulated", "tau": list(self.samples[0]), "values": list(self.samples[1])}
        if self.kind == "poly":
            return {"kind": "poly", "param": int(self.param)}
        return {"kind": self.kind, "param": self.param}

    @classmethod
    def from_json(cls, obj: dict) -> "BasisFunction":
        kind = obj.get("kind")
        if kind not in KINDS:
            raise ValueError(f"unknown basis kind {kind!r}")
        if kind == "tabulated":
            return cls("tabulated", samples=(tuple(map(float, obj["tau"])), tuple(map(float, obj["values"]))))
        return cls(kind, float(obj.get("param", 0.0)))


def poly(k: int) -> BasisFunction:
    return BasisFunction("poly", k)


def trig_family(omega: float, harmonics: int) -> list[BasisFunction]:
    """``[sin(k w t)]_{k=1..L}`` followed by ``[cos(k w t)]_{k=1..L}``."""
    sins = [BasisFunction("sin", omega * k) for k in range(1, harmonics + 1)]
    coss = [BasisFunction("cos", omega * k) for k in range(1, harmonics + 1)]
    return sins + coss


def build_closure_matrix(f: Sequence[BasisFunction], varphi: Sequence[BasisFunction] = ()) -> np.ndarray:
    """Matrix ``M`` (d x (delta + d)) with ``f' = M [varphi; f]``.

    Only polynomial and sin/cos members are admitted in ``f``; each member's
    derivative partner must itself be in ``f``.
    """
    f = list(f)
    d, delta = len(f), len(varphi)
    M = np.zeros((d, delta + d))
    index = {bf: j for j, bf in enumerate(f)}
    for row, bf in enumerate(f):
        if bf.kind not in CLOSED_KINDS:
            raise ClosureError(
                f"{bf.label} in f: only W^{{1,2}} families with registered closure allowed in f"
            )
        if bf.kind == "poly":
            k = int(bf.param)
            if k == 0:
                continue
            partner, coef = poly(k - 1), float(k)
        elif bf.kind == "sin":
            partner, coef = BasisFunction("cos", bf.param), bf.param
        else:
            partner, coef = BasisFunction("sin", bf.param), -bf.param
        if partner not in index:
            raise ClosureError(f"derivative of {bf.label} needs {partner.label}, which is missing from f")
        M[row, delta + index[partner]] += coef
    return M


@dataclass(frozen=True, eq=False)
class IntervalBasis:
    lo: float
    hi: float
    f: tuple[BasisFunction, ...]
    varphi: tuple[BasisFunction, ...] = ()
    phi: tuple[BasisFunction, ...] = ()
    M: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not self.hi > self.lo:
            raise DomainError(f"interval [{self.lo}, {self.hi}] has non-positive length")
        if len(self.f) < 1:
            raise ValueError("f must contain at least one function")
        for bf in self.f + self.varphi:
            if bf.kind == "tabulated":
                raise ValueError("tabulated functions are only admitted in phi")
        if self.M is None:
            M = build_closure_matrix(self.f, self.varphi)
        else:
            M = np.array(self.M, dtype=float)
            if M.shape != (self.d, self.varkappa):
                raise ValueError(f"closure matrix must be {self.d}x{self.varkappa}, got {M.shape}")
        M.setflags(write=False)
        object.__setattr__(self, "M", M)

    # index bookkeeping
    @property
    def d(self) -> int:
        return len(self.f)

    @property
    def delta(self) -> int:
        return len(self.varphi)

    @property
    def mu(self) -> int:
        return len(self.phi)

    @property
    def varkappa(self) -> int:
        return self.delta + self.d

    @property
    def kappa(self) -> int:
        return self.mu + self.varkappa

    @property
    def length(self) -> float:
        return self.hi - self.lo

    @property
    def g_functions(self) -> tuple[BasisFunction, ...]:
        return self.phi + self.varphi + self.f

    @property
    def h_functions(self) -> tuple[BasisFunction, ...]:
        return self.varphi + self.f

    @property
    def max_frequency(self) -> float:
        return max((bf.frequency for bf in self.g_functions), default=0.0)

    def index_of(self, bf: BasisFunction) -> int:
        """Position of ``bf`` inside ``g``."""
        return self.g_functions.index(bf)

    def g_many(self, taus) -> np.ndarray:
        """``g`` evaluated at many points, shape (kappa, len(taus)). No domain check."""
        t = np.atleast_1d(np.asarray(taus, dtype=float))
        return np.array([np.broadcast_to(bf(t), t.shape) for bf in self.g_functions]).reshape(self.kappa, t.size)

    def eval(self, tau: float) -> tuple[np.ndarray, np.ndarray]:
        if not (self.lo <= tau <= self.hi):
            raise DomainError(f"tau={tau} outside [{self.lo}, {self.hi}]")
        g = self.g_many([tau])[:, 0]
        return g, g[self.mu:].copy()

    def f_at(self, tau: float) -> np.ndarray:
        return np.array([float(bf(tau)) for bf in self.f])

    def boundary(self) -> tuple[np.ndarray, np.ndarray]:
        """``(f(-r_{i-1}), f(-r_i))``: values at the upper and lower endpoints."""
        return self.f_at(self.hi), self.f_at(self.lo)

    def closure_residual(self, n_samples: int = 200) -> float:
        """Max relative mismatch between a central difference of f and ``M h``."""
        step = 1e-6 * self.length
        taus = np.linspace(self.lo, self.hi, n_samples + 2)[1:-1]
        fd = np.array([(bf(taus + step) - bf(taus - step)) / (2 * step) for bf in self.f])
        mh = self.M @ self.g_many(taus)[self.mu:]
        return float(np.max(np.max(np.abs(fd - mh), axis=0) / (1 + np.max(np.abs(mh), axis=0))))

    def to_json(self) -> dict:
        return {
            "f_explicit": [bf.to_json() for bf in self.f],
            "closure": self.M.tolist(),
            "varphi": [bf.to_json() for bf in self.varphi],
            "phi": [bf.to_json() for bf in self.phi],
        }


def eval_basis(b: IntervalBasis, tau: float) -> tuple[np.ndarray, np.ndarray]:
    return b.eval(tau)


def eval_boundary(b: IntervalBasis) -> tuple[np.ndarray, np.ndarray]:
    return b.boundary()


def basis_from_json(obj: dict, lo: float, hi: float) -> IntervalBasis:
    """Parse one interval's basis declaration.

    Either ``"f": {"poly_order": s, "trig": {"omega": w, "harmonics": L}}`` or
    ``"f_explicit": [...]`` with an optional ``"closure"`` table.
    """
    varphi = tuple(BasisFunction.from_json(o) for o in obj.get("varphi", []))
    phi = tuple(BasisFunction.from_json(o) for o in obj.get("phi", []))
    closure = None
    if "f_explicit" in obj:
        f = [BasisFunction.from_json(o) for o in obj["f_explicit"]]
        if obj.get("closure") is not None:
            closure = np.array(obj["closure"], dtype=float)
    elif "f" in obj:
        spec = obj["f"]
        f = [poly(k) for k in range(int(spec.get("poly_order", 0)) + 1)]
        trig = spec.get("trig")
        if trig:
            f += trig_family(float(trig["omega"]), int(trig["harmonics"]))
    else:
        raise ValueError("basis declaration needs 'f' or 'f_explicit'")
    b = IntervalBasis(lo, hi, tuple(f), varphi, phi, closure)
    if closure is not None and b.closure_residual() > 1e-6:
        raise ClosureError("user-supplied closure table does not match the derivative of f")
    return b
