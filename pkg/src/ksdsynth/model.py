"""Open-loop delay system, supply rate, validation and the JSON system file."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .basis import BasisFunction, IntervalBasis, basis_from_json
from .errors import DomainError, SchemaError

KERNEL_NAMES = ("A", "B", "C", "Bfrak")


def _frozen(a, shape_hint=None) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim == 1 and shape_hint == "col":
        arr = arr.reshape(-1, 1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dimensions:
    n: int
    m: int
    p: int
    q: int
    nu: int


@dataclass(frozen=True, eq=False)
class KernelTerm:
    basis_index: int
    coefficient: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coefficient", _frozen(self.coefficient))


@dataclass(frozen=True, eq=False)
class SupplyRate:
    """Quadratic supply rate ``[z; w]' [[Jt' J1^-1 Jt, J2], [*, J3]] [z; w]``.

    For ``mode == "l2gain"`` the matrices depend on gamma (see :meth:`matrices`).
    """

    J1: np.ndarray
    Jtilde: np.ndarray
    J2: np.ndarray
    J3: np.ndarray
    mode: str = "custom"
    gamma: float | None = None

    def __post_init__(self):
        for name in ("J1", "Jtilde", "J2", "J3"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def gamma_is_variable(self) -> bool:
        return self.mode == "l2gain"

    def matrices(self, gamma=None):
        """``(J1, Jtilde, J2, J3)``; for l2gain ``gamma`` may be a number or a cvxpy scalar."""
        if self.mode != "l2gain":
            return self.J1, self.Jtilde, self.J2, self.J3
        g = self.gamma if gamma is None else gamma
        m, q = self.J2.shape
        return -g * np.eye(m), np.eye(m), np.zeros((m, q)), g * np.eye(q)

    def to_json(self) -> dict:
        if self.mode == "l2gain":
            return {"mode": "l2gain"}
        return {"mode": self.mode, "J1": self.J1.tolist(), "Jtilde": self.Jtilde.tolist(),
                "J2": self.J2.tolist(), "J3": self.J3.tolist()}


def make_supply_rate_l2gain(gamma: float, m: int, q: int) -> SupplyRate:
    if not gamma > 0:
        raise DomainError(f"gamma must be positive, got {gamma}")
    return SupplyRate(-gamma * np.eye(m), np.eye(m), np.zeros((m, q)), gamma * np.eye(q),
                      mode="l2gain", gamma=float(gamma))


def l2gain_template(m: int, q: int) -> SupplyRate:
    """L2-gain supply rate with gamma left as a decision variable."""
    return SupplyRate(-np.eye(m), np.eye(m), np.zeros((m, q)), np.eye(q), mode="l2gain")


def make_supply_rate_passivity(m: int, q: int, epsilon: float = 1e-6) -> SupplyRate:
    if m != q:
        raise DomainError(f"passivity needs m == q, got m={m}, q={q}")
    if not epsilon > 0:
        raise DomainError("epsilon must be positive so that J1 is negative definite")
    return SupplyRate(-epsilon * np.eye(m), np.zeros((m, m)), np.eye(m), np.zeros((q, q)), mode="passivity")


@dataclass(frozen=True, eq=False)
class DelaySystem:
    dims: Dimensions
    delays: tuple[float, ...]
    A: tuple[np.ndarray, ...]
    B: tuple[np.ndarray, ...]
    C: tuple[np.ndarray, ...]
    Bfrak: tuple[np.ndarray, ...]
    D1: np.ndarray
    D2: np.ndarray
    basis: tuple[IntervalBasis, ...]
    dd_kernels: tuple[dict, ...]
    supply: SupplyRate | None = None
    name: str = ""

    def __post_init__(self):
        for key in ("A", "B", "C", "Bfrak"):
            object.__setattr__(self, key, tuple(_frozen(a) for a in getattr(self, key)))
        object.__setattr__(self, "D1", _frozen(self.D1))
        object.__setattr__(self, "D2", _frozen(self.D2))
        object.__setattr__(self, "delays", tuple(float(r) for r in self.delays))
        object.__setattr__(self, "basis", tuple(self.basis))
        kern = []
        for k in self.dd_kernels:
            kern.append({name: tuple(k.get(name, ())) for name in KERNEL_NAMES})
        object.__setattr__(self, "dd_kernels", tuple(kern))

    @property
    def nu(self) -> int:
        return len(self.delays)

    @property
    def r(self) -> float:
        return self.delays[-1]

    @property
    def rhat(self) -> np.ndarray:
        return np.diff((0.0,) + self.delays)

    def kernel_shape(self, name: str) -> tuple[int, int]:
        n, m, p = self.dims.n, self.dims.m, self.dims.p
        return {"A": (n, n), "B": (n, p), "C": (m, n), "Bfrak": (m, p)}[name]

    def kernel_at(self, i: int, name: str, tau) -> np.ndarray:
        """Kernel ``name`` of interval ``i`` (0-based) at points ``tau``: shape (len(tau), rows, cols)."""
        taus = np.atleast_1d(np.asarray(tau, dtype=float))
        rows, cols = self.kernel_shape(name)
        out = np.zeros((taus.size, rows, cols))
        b = self.basis[i]
        gs = b.g_functions
        for term in self.dd_kernels[i][name]:
            out += gs[term.basis_index](taus)[:, None, None] * term.coefficient
        return out


@dataclass(frozen=True)
class Violation:
    code: str
    message: str

    def __str__(self):
        return f"[{self.code}] {self.message}"


def validate_system(sys: DelaySystem) -> list[Violation]:
    out: list[Violation] = []
    d = sys.dims
    if min(d.n, d.m, d.p, d.q) < 1 or d.nu < 1:
        out.append(Violation("dims_nonpositive", "dimensions must be positive and nu >= 1"))
        return out
    delays = sys.delays
    ordered = len(delays) == d.nu and all(r > 0 for r in delays) and all(
        b > a for a, b in zip(delays, delays[1:]))
    if len(delays) != d.nu:
        out.append(Violation("delays_count", f"expected {d.nu} delays, got {len(delays)}"))
    elif not ordered:
        out.append(Violation("delays_order", "delays not strictly increasing (or not positive)"))

    expected = {"A": (d.n, d.n), "B": (d.n, d.p), "C": (d.m, d.n), "Bfrak": (d.m, d.p)}
    for key, shape in expected.items():
        mats = getattr(sys, key)
        if len(mats) != d.nu + 1:
            out.append(Violation(f"{key}_count", f"{key} needs {d.nu + 1} matrices, got {len(mats)}"))
            continue
        for i, mat in enumerate(mats):
            if mat.shape != shape:
                out.append(Violation(f"{key}_{i}_shape", f"{key}_{i} dimension mismatch: expected {shape}, got {mat.shape}"))
    if sys.D1.shape != (d.n, d.q):
        out.append(Violation("D1_shape", f"D1 dimension mismatch: expected {(d.n, d.q)}, got {sys.D1.shape}"))
    if sys.D2.shape != (d.m, d.q):
        out.append(Violation("D2_shape", f"D2 dimension mismatch: expected {(d.m, d.q)}, got {sys.D2.shape}"))

    if len(sys.basis) != d.nu:
        out.append(Violation("basis_count", f"need {d.nu} interval bases, got {len(sys.basis)}"))
    elif ordered:
        bounds = (0.0,) + delays
        for i, b in enumerate(sys.basis):
            if not (np.isclose(b.lo, -bounds[i + 1], rtol=0, atol=1e-12) and np.isclose(b.hi, -bounds[i], rtol=0, atol=1e-12)):
                out.append(Violation(f"basis_{i + 1}_interval",
                                     f"basis {i + 1} spans [{b.lo}, {b.hi}], expected [{-bounds[i + 1]}, {-bounds[i]}]"))

    if len(sys.dd_kernels) != d.nu:
        out.append(Violation("dd_kernels_count", f"need {d.nu} kernel groups, got {len(sys.dd_kernels)}"))
    else:
        for i, group in enumerate(sys.dd_kernels):
            kappa = sys.basis[i].kappa if i < len(sys.basis) else 0
            for name in KERNEL_NAMES:
                shape = expected[name]
                for t in group[name]:
                    if not (0 <= t.basis_index < kappa):
                        out.append(Violation(f"kernel_{name}_{i + 1}_index",
                                             f"{name}~_{i + 1} references undeclared basis index {t.basis_index}"))
                    if t.coefficient.shape != shape:
                        out.append(Violation(f"kernel_{name}_{i + 1}_shape",
                                             f"{name}~_{i + 1} coefficient shape {t.coefficient.shape}, expected {shape}"))

    s = sys.supply
    if s is not None:
        if s.J2.shape != (d.m, d.q) or s.J1.shape != (d.m, d.m) or s.Jtilde.shape != (d.m, d.m) or s.J3.shape != (d.q, d.q):
            out.append(Violation("supply_shape", "supply-rate matrices do not match (m, q)"))
        elif s.mode != "l2gain":
            if np.linalg.eigvalsh(0.5 * (s.J1 + s.J1.T)).max() >= 0:
                out.append(Violation("supply_J1", "J1 must be negative definite"))
            if not np.allclose(s.J3, s.J3.T):
                out.append(Violation("supply_J3", "J3 must be symmetric"))
    return out


# ---------------------------------------------------------------- JSON I/O

def _matrix(obj, field: str, col: bool = False) -> np.ndarray:
    try:
        arr = np.array(obj, dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError(field, f"not a numeric matrix ({exc})") from None
    if arr.ndim == 1 and col:
        arr = arr.reshape(-1, 1)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise SchemaError(field, "expected a 2-D row-major array")
    return arr


def _require(obj: dict, key: str, where: str = ""):
    if key not in obj:
        raise SchemaError(f"{where}{key}", "missing")
    return obj[key]


def system_from_json(obj: dict) -> DelaySystem:
    dims_obj = _require(obj, "dimensions")
    try:
        n, m, p, q = (int(dims_obj[k]) for k in ("n", "m", "p", "q"))
    except (KeyError, TypeError, ValueError):
        raise SchemaError("dimensions", "needs integer n, m, p, q") from None
    delays = _require(obj, "delays")
    if not isinstance(delays, list) or not delays:
        raise SchemaError("delays", "expected a non-empty list")
    delays = [float(r) for r in delays]
    if delays[0] <= 0 or any(b <= a for a, b in zip(delays, delays[1:])):
        raise SchemaError("delays", "delays not strictly increasing positive values")
    nu = len(delays)
    mats = {}
    for key in ("A", "B", "C", "Bfrak"):
        lst = _require(obj, key)
        if not isinstance(lst, list):
            raise SchemaError(key, "expected a list of matrices")
        mats[key] = [_matrix(a, f"{key}[{i}]", col=True) for i, a in enumerate(lst)]
    D1 = _matrix(_require(obj, "D1"), "D1", col=True)
    D2 = _matrix(_require(obj, "D2"), "D2", col=True)
    bounds = [0.0] + delays
    basis_list = _require(obj, "basis")
    if not isinstance(basis_list, list) or len(basis_list) != nu:
        raise SchemaError("basis", f"expected {nu} interval declarations")
    bases = []
    for i, bobj in enumerate(basis_list):
        try:
            bases.append(basis_from_json(bobj, -bounds[i + 1], -bounds[i]))
        except (ValueError, KeyError, TypeError) as exc:
            raise SchemaError(f"basis[{i}]", str(exc)) from None
    kern_list = obj.get("dd_kernels", [{} for _ in range(nu)])
    if not isinstance(kern_list, list) or len(kern_list) != nu:
        raise SchemaError("dd_kernels", f"expected {nu} kernel groups")
    kernels = []
    for i, group in enumerate(kern_list):
        g = {}
        for name in KERNEL_NAMES:
            terms = []
            for j, t in enumerate(group.get(name, [])):
                where = f"dd_kernels[{i}].{name}[{j}]"
                idx = _require(t, "basis_index", where + ".")
                terms.append(KernelTerm(int(idx), _matrix(_require(t, "coefficient", where + "."), where + ".coefficient", col=True)))
            g[name] = terms
        kernels.append(g)
    supply = None
    if "supply_rate" in obj:
        s = obj["supply_rate"]
        mode = s.get("mode", "custom")
        if mode == "l2gain":
            supply = l2gain_template(m, q)
        elif mode == "passivity" and "J1" not in s:
            supply = make_supply_rate_passivity(m, q, float(s.get("epsilon", 1e-6)))
        else:
            supply = SupplyRate(*(_matrix(_require(s, k, "supply_rate."), f"supply_rate.{k}", col=True)
                                  for k in ("J1", "Jtilde", "J2", "J3")), mode=mode)
    sys = DelaySystem(Dimensions(n, m, p, q, nu), tuple(delays), tuple(mats["A"]), tuple(mats["B"]),
                      tuple(mats["C"]), tuple(mats["Bfrak"]), D1, D2, tuple(bases), tuple(kernels),
                      supply, name=str(obj.get("name", "")))
    problems = validate_system(sys)
    if problems:
        v = problems[0]
        raise SchemaError(v.code, v.message)
    return sys


def system_to_json(sys: DelaySystem) -> dict:
    d = sys.dims
    out = {
        "name": sys.name,
        "dimensions": {"n": d.n, "m": d.m, "p": d.p, "q": d.q},
        "delays": list(sys.delays),
        "A": [a.tolist() for a in sys.A],
        "B": [a.tolist() for a in sys.B],
        "C": [a.tolist() for a in sys.C],
        "Bfrak": [a.tolist() for a in sys.Bfrak],
        "D1": sys.D1.tolist(),
        "D2": sys.D2.tolist(),
        "basis": [b.to_json() for b in sys.basis],
        "dd_kernels": [
            {name: [{"basis_index": t.basis_index, "coefficient": t.coefficient.tolist()} for t in g[name]]
             for name in KERNEL_NAMES}
            for g in sys.dd_kernels
        ],
    }
    if sys.supply is not None:
        out["supply_rate"] = sys.supply.to_json()
    return out


def load_system(path) -> DelaySystem:
    """Load a system file, or a builtin fixture name such as ``paper-s4``."""
    from . import fixtures

    spec = str(path)
    if spec in fixtures.BUILTINS:
        return fixtures.BUILTINS[spec]()
    try:
        obj = json.loads(Path(spec).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError("<file>", f"invalid JSON ({exc})") from None
    return system_from_json(obj)


def save_system(sys: DelaySystem, path) -> None:
    Path(path).write_text(json.dumps(system_to_json(sys), indent=1), encoding="utf-8")


def systems_equal(a: DelaySystem, b: DelaySystem) -> bool:
    """Bit-exact structural equality (used for round-trip checks)."""
    return json.dumps(system_to_json(a), sort_keys=True) == json.dumps(system_to_json(b), sort_keys=True)
