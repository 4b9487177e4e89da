"""Moment formulas used as oracles for the samplers and estimators.

Centered moments ``E[(X_t - E X_t)^j]`` follow from the recursion

    E[Y_t^j] = int_0^t e^{j b (t-s)} g_j(s) ds,   Y_s = X_s - E X_s,

    g_j = j(j-1) c A_{j-2}
          + sum_{l<=j-2} binom(j, l) (mu_{j-l} A_l + nu_{j-l} E[Y^l]),

where ``mu_k, nu_k`` are the k-th jump moments and ``A_l = E[Y^l X]``.  The
recursion closes with ``A_l = E[Y^{l+1}] + E[X] E[Y^l]`` (write
``X = Y + E X``), so every ``g_j`` only needs orders below ``j``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.special import comb

from .errors import ParameterError, StepTooCoarse
from .model import CbiParams, DerivedParams, derive

__all__ = [
    "CenteredMoments",
    "conditional_mean",
    "conditional_variance",
    "centered_moments",
    "centered_moment_paths",
    "raw_moments",
    "residual_moment_polynomial",
    "growth_bounds_check",
]

MAX_ORDER = 8
DEFAULT_STEP = 1.0 / 512
RICHARDSON_TOL = 1e-6


@dataclass(frozen=True)
class CenteredMoments:
    t: float
    values: tuple[float, ...] = field(default=())

    def __getitem__(self, j: int) -> float:
        """1-based access, ``cm[2]`` is the variance."""
        if j < 1:
            raise IndexError(j)
        return self.values[j - 1]

    def to_dict(self) -> dict:
        return {"t": self.t, "q": len(self.values), "values": list(self.values)}


def _int_exp(rate, t):
    # int_0^t e^{rate u} du, elementwise in t
    t = np.asarray(t, dtype=float)
    if rate == 0.0:
        return t
    return np.expm1(rate * t) / rate


def conditional_mean(d: DerivedParams, x: float, t: float):
    """``E(X_t | X_0 = x) = e^{b t} x + beta_tilde int_0^t e^{b u} du``."""
    if np.any(np.asarray(x) < 0) or np.any(np.asarray(t) < 0):
        raise ParameterError("x and t must be nonnegative")
    out = np.exp(d.b_tilde * np.asarray(t, dtype=float)) * x + d.beta_tilde * _int_exp(d.b_tilde, t)
    return out if np.ndim(out) else float(out)


def conditional_variance(d: DerivedParams, x: float):
    """One-step conditional variance ``V x + V0``."""
    if np.any(np.asarray(x) < 0):
        raise ParameterError("x must be nonnegative")
    out = d.V * np.asarray(x, dtype=float) + d.V0
    return out if np.ndim(out) else float(out)


def _moment_paths(params: CbiParams, d: DerivedParams, s: np.ndarray, q: int, x0: float) -> np.ndarray:
    mean = conditional_mean(d, x0, s)
    ys = np.zeros((q + 1, s.size))
    ys[0] = 1.0
    mu_m = [params.mu.moment(k) for k in range(q + 1)]
    nu_m = [params.nu.moment(k) for k in range(q + 1)]

    def a(l):  # E[Y^l X]
        return ys[l + 1] + mean * ys[l]

    for j in range(2, q + 1):
        g = j * (j - 1) * params.c * a(j - 2)
        for l in range(j - 1):
            g = g + comb(j, l, exact=True) * (mu_m[j - l] * a(l) + nu_m[j - l] * ys[l])
        rate = j * d.b_tilde
        if rate == 0.0:
            ys[j] = cumulative_simpson(g, x=s, initial=0.0)
        else:
            ys[j] = np.exp(rate * s) * cumulative_simpson(np.exp(-rate * s) * g, x=s, initial=0.0)
    return ys


def centered_moment_paths(params: CbiParams, t: float, q: int, intervals: int,
                          x0: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Grid ``s`` on ``[0, t]`` with ``intervals`` cells and the array ``E[Y_s^j]``, ``j = 0..q``."""
    s = np.linspace(0.0, t, intervals + 1)
    return s, _moment_paths(params, derive(params), s, q, x0)


def _check_order(q):
    if isinstance(q, bool) or not isinstance(q, (int, np.integer)) or not 1 <= q <= MAX_ORDER:
        raise ParameterError(f"q must be an integer in 1..{MAX_ORDER}, got {q!r}")


def centered_moments(params: CbiParams, t: float, q: int, step: float = DEFAULT_STEP,
                     x0: float = 0.0) -> CenteredMoments:
    """Centered moments of orders ``1..q`` of ``X_t`` started from ``X_0 = x0``.

    The recursion is evaluated twice, at spacing ``<= step`` and at half of it;
    the finer result is returned.  ``StepTooCoarse`` is raised when the
    Richardson error estimate ``|fine - coarse| / 15`` exceeds ``1e-6``
    relative to ``max(|value|, sd**j)``.
    """
    _check_order(q)
    if t < 0 or not math.isfinite(t):
        raise ParameterError(f"t must be finite and nonnegative, got {t}")
    if not step > 0:
        raise ParameterError(f"step must be positive, got {step}")
    if x0 < 0:
        raise ParameterError("x0 must be nonnegative")
    if t == 0:
        return CenteredMoments(0.0, tuple(0.0 for _ in range(q)))
    n = max(2, math.ceil(t / step - 1e-12))
    n += n % 2
    d = derive(params)
    coarse = _moment_paths(params, d, np.linspace(0.0, t, n + 1), q, x0)[:, -1]
    fine = _moment_paths(params, d, np.linspace(0.0, t, 2 * n + 1), q, x0)[:, -1]
    fine[1] = 0.0
    sd = math.sqrt(max(fine[2], 0.0)) if q >= 2 else 0.0
    for j in range(2, q + 1):
        scale = max(abs(fine[j]), sd**j)
        if scale == 0.0:
            continue
        err = abs(fine[j] - coarse[j]) / 15.0
        if err > RICHARDSON_TOL * scale:
            raise StepTooCoarse(f"order {j}: quadrature error estimate {err:.3g} exceeds "
                                f"{RICHARDSON_TOL:g} relative; reduce step")
    return CenteredMoments(float(t), tuple(float(v) for v in fine[1:]))


def raw_moments(mean, centered) -> np.ndarray:
    """``E[X^i]`` for ``i = 0..q`` from the mean and centered moments (arrays over time allowed).

    ``centered`` has rows ``E[Y^0] .. E[Y^q]``.
    """
    centered = np.asarray(centered, dtype=float)
    q = centered.shape[0] - 1
    mean = np.asarray(mean, dtype=float)
    out = np.zeros_like(centered)
    for i in range(q + 1):
        for l in range(i + 1):
            out[i] = out[i] + comb(i, l, exact=True) * mean ** (i - l) * centered[l]
    return out


def residual_moment_polynomial(params: CbiParams, j: int, step: float = DEFAULT_STEP) -> np.ndarray:
    """Coefficients (lowest degree first) of ``P_j`` with ``E(M_k^j | X_{k-1} = x) = P_j(x)``.

    ``P_j`` has degree at most ``j // 2``; it is recovered by exact
    interpolation of the one-step centered moment at ``x = 0, 1, ..., j // 2``.
    """
    _check_order(j)
    deg = j // 2
    xs = np.arange(deg + 1, dtype=float)
    n = max(2, math.ceil(1.0 / step - 1e-12))
    n += n % 2
    s = np.linspace(0.0, 1.0, n + 1)
    d = derive(params)
    vals = np.array([_moment_paths(params, d, s, j, x)[j, -1] for x in xs])
    if j == 1:
        return np.zeros(1)
    return np.linalg.solve(np.vander(xs, increasing=True), vals)


def growth_bounds_check(params: CbiParams, q: int, n_max: int, step: float = DEFAULT_STEP) -> dict:
    """Boundedness diagnostics for ``E(X_k^q) / (1+k)^q`` and ``E(M_k^{2p}) / k^p``, ``p = q // 2``.

    A ratio sequence is flagged when it increases monotonically over the
    second half of ``1..n_max`` and ends more than 10% above its midpoint
    value.
    """
    _check_order(q)
    if n_max < 2:
        raise ParameterError("n_max must be at least 2")
    d = derive(params)
    if d.b_tilde != 0.0:
        raise ParameterError("growth bounds are stated for critical parameters (b_tilde = 0)")
    per_unit = max(2, math.ceil(1.0 / step - 1e-12))
    per_unit += per_unit % 2
    s, ys = centered_moment_paths(params, float(n_max), q, per_unit * n_max)
    idx = np.arange(n_max + 1) * per_unit
    raw = raw_moments(conditional_mean(d, 0.0, s[idx]), ys[:, idx])
    k = np.arange(1, n_max + 1)
    x_moment = raw[q, 1:]
    report = {
        "q": q,
        "n_max": n_max,
        "x_moment": x_moment.tolist(),
        "x_ratio": (x_moment / (1.0 + k) ** q).tolist(),
    }
    p = q // 2
    if p >= 1:
        coef = residual_moment_polynomial(params, 2 * p, step)
        # E(M_k^{2p}) = E P_{2p}(X_{k-1})
        m_moment = sum(c * raw[i, :-1] for i, c in enumerate(coef))
        report["p"] = p
        report["m_moment"] = m_moment.tolist()
        report["m_ratio"] = (m_moment / k**p).tolist()

    def flag(seq):
        seq = np.asarray(seq)
        half = seq[len(seq) // 2:]
        return bool(np.all(np.diff(half) > 0) and half[-1] > 1.1 * half[0])

    report["x_ratio_max"] = float(np.max(report["x_ratio"]))
    report["x_violation"] = flag(report["x_ratio"])
    if p >= 1:
        report["m_ratio_max"] = float(np.max(report["m_ratio"]))
        report["m_violation"] = flag(report["m_ratio"])
    report["violation"] = report["x_violation"] or report.get("m_violation", False)
    return report
