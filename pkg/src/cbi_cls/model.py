"""Parameters, mechanisms and the Laplace transform of a CBI process.

A CBI process is specified by an admissible tuple ``(c, beta, b, nu, mu)``:
``c >= 0`` scales the diffusion, ``beta >= 0`` is the drift part of the
immigration, ``b`` is the branching drift, ``nu`` the immigration jump
measure and ``mu`` the branching jump measure.  Both jump measures are
restricted to finite mixtures of atoms so that every moment integral is an
exact finite sum.

JSON schema for parameters::

    {
      "c": 0.5,                          # >= 0
      "beta": 1.0,                       # >= 0
      "b": 0.0,                          # any finite real
      "nu": [{"z": 1.0, "rate": 1.0}],   # optional, default []
      "mu": [{"z": 2.0, "rate": 0.25}]   # optional, default []
    }

Jump sizes ``z`` and rates must be strictly positive and finite.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable

import numpy as np

from .errors import NonFinite, ParameterError

__all__ = [
    "JumpMeasure",
    "CbiParams",
    "DerivedParams",
    "MechanismEval",
    "exp_mean",
    "derive",
    "phi",
    "psi",
    "mechanisms",
    "solve_v",
    "v_path",
    "laplace_transform",
    "params_from_dict",
    "params_to_dict",
    "load_params",
    "dump_params",
]


def _check_real(name: str, value: Any, nonneg: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float, np.floating, np.integer)):
        raise ParameterError(f"{name} must be a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ParameterError(f"{name} must be finite, got {value!r}")
    if nonneg and value < 0:
        raise ParameterError(f"{name} must be nonnegative, got {value!r}")
    return value


def exp_mean(rate: float) -> float:
    """Return the integral of ``exp(rate * s)`` over ``s`` in [0, 1]."""
    if rate == 0.0:
        return 1.0
    return math.expm1(rate) / rate


@dataclass(frozen=True)
class JumpMeasure:
    """Finite atomic Levy measure ``sum_j rate_j * delta_{z_j}``."""

    atoms: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        atoms = []
        for i, atom in enumerate(self.atoms):
            try:
                z, rate = atom
            except (TypeError, ValueError):
                raise ParameterError(f"atom {i} must be a (size, rate) pair, got {atom!r}") from None
            z = _check_real(f"atom {i} size", z)
            rate = _check_real(f"atom {i} rate", rate)
            if z <= 0 or rate <= 0:
                raise ParameterError(f"atom {i} needs positive size and rate, got ({z}, {rate})")
            atoms.append((z, rate))
        object.__setattr__(self, "atoms", tuple(atoms))

    @classmethod
    def from_atoms(cls, atoms: Iterable[tuple[float, float]]) -> "JumpMeasure":
        return cls(tuple(tuple(a) for a in atoms))

    @property
    def is_empty(self) -> bool:
        return not self.atoms

    @property
    def sizes(self) -> np.ndarray:
        return np.array([z for z, _ in self.atoms], dtype=float)

    @property
    def rates(self) -> np.ndarray:
        return np.array([r for _, r in self.atoms], dtype=float)

    @property
    def total_rate(self) -> float:
        return math.fsum(r for _, r in self.atoms)

    def moment(self, q: float) -> float:
        """``int z**q nu(dz)``; ``q = 0`` gives the total mass."""
        return math.fsum(r * z**q for z, r in self.atoms)

    def excess_above_one(self) -> float:
        """``int_1^inf (z - 1) nu(dz)``."""
        return math.fsum(r * (z - 1.0) for z, r in self.atoms if z > 1.0)

    def to_list(self) -> list[dict[str, float]]:
        return [{"z": z, "rate": r} for z, r in self.atoms]


@dataclass(frozen=True)
class CbiParams:
    c: float = 0.0
    beta: float = 0.0
    b: float = 0.0
    nu: JumpMeasure = field(default_factory=JumpMeasure)
    mu: JumpMeasure = field(default_factory=JumpMeasure)

    def __post_init__(self):
        object.__setattr__(self, "c", _check_real("c", self.c, nonneg=True))
        object.__setattr__(self, "beta", _check_real("beta", self.beta, nonneg=True))
        object.__setattr__(self, "b", _check_real("b", self.b))
        for name in ("nu", "mu"):
            m = getattr(self, name)
            if not isinstance(m, JumpMeasure):
                object.__setattr__(self, name, JumpMeasure.from_atoms(m))

    @property
    def immigration_nonzero(self) -> bool:
        """True when ``beta != 0`` or ``nu`` is not the zero measure."""
        return self.beta != 0.0 or not self.nu.is_empty


@dataclass(frozen=True)
class DerivedParams:
    b_tilde: float
    beta_tilde: float
    rho: float
    beta_bar: float
    C: float
    V: float
    V0: float

    @property
    def critical(self) -> bool:
        return self.b_tilde == 0.0


@dataclass(frozen=True)
class MechanismEval:
    lam: float
    phi: float
    psi: float


def derive(params: CbiParams) -> DerivedParams:
    """Closed-form derived quantities of an admissible parameter set."""
    b_tilde = params.b + params.mu.excess_above_one()
    beta_tilde = params.beta + params.nu.moment(1)
    e1 = exp_mean(b_tilde)
    C = 2.0 * params.c + params.mu.moment(2)
    # V = C * int_0^1 e^{b(1+u)} du; the double integral in V0 collapses to e1**2 / 2
    V = C * math.exp(b_tilde) * e1
    V0 = params.nu.moment(2) * exp_mean(2.0 * b_tilde) + beta_tilde * C * e1 * e1 / 2.0
    return DerivedParams(
        b_tilde=b_tilde,
        beta_tilde=beta_tilde,
        rho=math.exp(b_tilde),
        beta_bar=beta_tilde * e1,
        C=C,
        V=V,
        V0=V0,
    )


def phi(params: CbiParams, lam):
    """Branching mechanism ``c l^2 - b l + int (e^{-lz} - 1 + l (1 ^ z)) mu(dz)``."""
    lam = np.asarray(lam, dtype=float)
    out = params.c * lam * lam - params.b * lam
    for z, r in params.mu.atoms:
        out = out + r * (np.expm1(-lam * z) + lam * min(1.0, z))
    return out if out.ndim else float(out)


def psi(params: CbiParams, lam):
    """Immigration mechanism ``beta l + int (1 - e^{-lz}) nu(dz)``."""
    lam = np.asarray(lam, dtype=float)
    out = params.beta * lam
    for z, r in params.nu.atoms:
        out = out - r * np.expm1(-lam * z)
    return out if out.ndim else float(out)


def mechanisms(params: CbiParams, lam: float) -> MechanismEval:
    return MechanismEval(lam=float(lam), phi=phi(params, lam), psi=psi(params, lam))


def _grid(t: float, step: float, even: bool = False) -> tuple[int, float]:
    if t < 0 or not math.isfinite(t):
        raise ParameterError(f"t must be finite and nonnegative, got {t}")
    if not step > 0:
        raise ParameterError(f"step must be positive, got {step}")
    n = max(1, math.ceil(t / step - 1e-12))
    if even and n % 2:
        n += 1
    return n, t / n


def v_path(params: CbiParams, t: float, lam: float, step: float = 1e-3, even: bool = False) -> np.ndarray:
    """RK4 values of ``v(s, lam)`` on a uniform grid of ``[0, t]`` with spacing <= ``step``."""
    if lam < 0:
        raise ParameterError(f"lambda must be nonnegative, got {lam}")
    n, h = _grid(t, step, even)
    v = np.empty(n + 1)
    v[0] = lam
    if t == 0:
        return v[:1]

    def f(x):
        return -phi(params, max(x, 0.0))

    x = float(lam)
    # overflow surfaces as a non-finite iterate and is reported below
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n):
            k1 = f(x)
            k2 = f(x + 0.5 * h * k1)
            k3 = f(x + 0.5 * h * k2)
            k4 = f(x + h * k3)
            x = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not math.isfinite(x):
                raise NonFinite(f"v(t, {lam}) diverged at s={(i + 1) * h:g}; reduce step")
            x = max(x, 0.0)
            v[i + 1] = x
    return v


def solve_v(params: CbiParams, t: float, lam: float, step: float = 1e-3) -> float:
    """Solve ``dv/dt = -phi(v)``, ``v(0) = lam`` by fixed-step RK4 and return ``v(t)``."""
    return float(v_path(params, t, lam, step)[-1])


def laplace_transform(params: CbiParams, x0: float, t: float, lam: float, step: float = 1e-3) -> float:
    """``E[exp(-lam X_t) | X_0 = x0]`` via the ODE representation.

    The time integral of ``psi(v(s, lam))`` is a composite Simpson sum over the
    RK4 grid, which is forced to an even number of intervals.
    """
    if x0 < 0:
        raise ParameterError(f"x0 must be nonnegative, got {x0}")
    if t == 0:
        return math.exp(-x0 * lam)
    v = v_path(params, t, lam, step, even=True)
    h = t / (len(v) - 1)
    p = psi(params, v)
    integral = h / 3.0 * (p[0] + p[-1] + 4.0 * p[1:-1:2].sum() + 2.0 * p[2:-1:2].sum())
    out = math.exp(-x0 * v[-1] - integral)
    if not math.isfinite(out):
        raise NonFinite("laplace transform is not finite")
    return out


def params_from_dict(data: dict) -> CbiParams:
    if not isinstance(data, dict):
        raise ParameterError("parameters must be a JSON object")
    unknown = set(data) - {"c", "beta", "b", "nu", "mu"}
    if unknown:
        raise ParameterError(f"unknown parameter keys: {sorted(unknown)}")
    missing = {"c", "beta", "b"} - set(data)
    if missing:
        raise ParameterError(f"missing parameter keys: {sorted(missing)}")

    def measure(name):
        raw = data.get(name, [])
        if not isinstance(raw, list):
            raise ParameterError(f"{name} must be a list of {{'z', 'rate'}} objects")
        atoms = []
        for i, item in enumerate(raw):
            if not isinstance(item, dict) or set(item) != {"z", "rate"}:
                raise ParameterError(f"{name}[{i}] must have exactly the keys 'z' and 'rate'")
            atoms.append((item["z"], item["rate"]))
        return JumpMeasure.from_atoms(atoms)

    return CbiParams(c=data["c"], beta=data["beta"], b=data["b"], nu=measure("nu"), mu=measure("mu"))


def params_to_dict(params: CbiParams) -> dict:
    return {
        "c": params.c,
        "beta": params.beta,
        "b": params.b,
        "nu": params.nu.to_list(),
        "mu": params.mu.to_list(),
    }


def load_params(path) -> CbiParams:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParameterError(f"{path}: not valid JSON ({exc})") from None
    return params_from_dict(data)


def dump_params(params: CbiParams) -> str:
    return json.dumps(params_to_dict(params), indent=2)
