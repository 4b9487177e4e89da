"""Closed-form conditional least squares estimation from a skeleton.

The regression ``X_k = rho X_{k-1} + beta_bar + M_k`` is solved in closed
form for ``(rho, beta_bar)`` and mapped back to ``(b_tilde, beta_tilde)`` by
``rho = e^{b_tilde}`` and ``beta_bar = beta_tilde * int_0^1 rho^s ds``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateImmigration, MissingEstimate, ParameterError, RequiresPureImmigration
from .model import DerivedParams
from .simulate import Skeleton

__all__ = [
    "REGIMES",
    "ClsEstimate",
    "regression_sums",
    "cls_from_sums",
    "cls_rho_betabar",
    "cls_batch",
    "invert_h",
    "residuals",
    "scaled_errors",
    "scaled_errors_batch",
    "gaussian_limit_covariance",
]

REGIMES = ("general-critical", "pure-immigration")

_TAYLOR_BAND = 1e-12


@dataclass(frozen=True)
class ClsEstimate:
    rho_hat: float | None
    betabar_hat: float | None
    hn_holds: bool
    b_tilde_hat: float | None = None
    beta_tilde_hat: float | None = None

    @property
    def transformed(self) -> bool:
        return self.b_tilde_hat is not None

    def to_dict(self) -> dict:
        return {
            "rho_hat": self.rho_hat,
            "betabar_hat": self.betabar_hat,
            "hn_holds": self.hn_holds,
            "b_tilde_hat": self.b_tilde_hat,
            "beta_tilde_hat": self.beta_tilde_hat,
        }


def _as_paths(x) -> np.ndarray:
    if isinstance(x, Skeleton):
        x = x.observations
    x = np.asarray(x, dtype=float)
    if x.shape[-1] < 3:
        raise ParameterError("CLS estimation needs n >= 2, i.e. at least three observations")
    return x


def regression_sums(paths):
    """``n, S1, S2, S3, S4`` in extended precision, over the last axis.

    ``S1 = sum X_{k-1}``, ``S2 = sum X_{k-1}^2``, ``S3 = sum X_k``,
    ``S4 = sum X_k X_{k-1}`` for ``k = 1..n``.
    """
    x = _as_paths(paths).astype(np.longdouble)
    prev, cur = x[..., :-1], x[..., 1:]
    n = x.shape[-1] - 1
    return (n, prev.sum(axis=-1), (prev * prev).sum(axis=-1),
            cur.sum(axis=-1), (cur * prev).sum(axis=-1))


def log_ratio(rho):
    """``log(rho) / (rho - 1)``, continuous at ``rho = 1``; ``rho > 0`` elementwise."""
    rho = np.asarray(rho, dtype=float)
    eps = rho - 1.0
    small = np.abs(eps) < _TAYLOR_BAND
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        # log1p is exact near 1; far below 1, rho - 1 rounds to -1 and log(rho) is needed
        log_rho = np.where(rho < 0.5, np.log(rho), np.log1p(eps))
        out = np.where(small, 1.0 - eps / 2.0 + eps * eps / 3.0, log_rho / eps)
    return out if out.ndim else float(out)


def invert_h(rho, beta_bar):
    """``(log rho, beta_bar / int_0^1 rho^s ds)`` for ``rho > 0``."""
    return np.log(rho), beta_bar * log_ratio(rho)


def cls_from_sums(n, s1, s2, s3, s4, degenerate=None) -> dict[str, np.ndarray]:
    """Vectorised closed form; returns arrays with NaN where estimates are absent."""
    n = np.longdouble(n)
    den = n * s2 - s1 * s1
    hn = np.asarray(den > 0)
    if degenerate is not None:
        hn = hn & ~np.asarray(degenerate)
    safe = np.where(hn, den, 1)
    with np.errstate(over="ignore", invalid="ignore"):
        rho = np.where(hn, (n * s4 - s3 * s1) / safe, np.nan).astype(float)
        bbar = np.where(hn, (s3 * s2 - s4 * s1) / safe, np.nan).astype(float)
    # estimates beyond float range are reported but not transformed
    ok = hn & (rho > 0) & np.isfinite(rho) & np.isfinite(bbar)
    with np.errstate(divide="ignore", invalid="ignore"):
        bt, btil = invert_h(np.where(ok, rho, 1.0), np.where(ok, bbar, 0.0))
    bt = np.where(ok, bt, np.nan)
    btil = np.where(ok, btil, np.nan)
    return {"rho_hat": rho, "betabar_hat": bbar, "hn_holds": hn,
            "b_tilde_hat": bt, "beta_tilde_hat": btil}


def _degenerate(paths) -> np.ndarray:
    # all regressors equal: the normal equations are singular whatever rounding says
    prev = _as_paths(paths)[..., :-1]
    return np.ptp(prev, axis=-1) == 0


def cls_batch(paths) -> dict[str, np.ndarray]:
    """CLS estimates for every row of a ``(replicates, n + 1)`` array."""
    paths = _as_paths(paths)
    return cls_from_sums(*regression_sums(paths), degenerate=_degenerate(paths))


def cls_rho_betabar(skeleton) -> ClsEstimate:
    """CLS estimate of ``(rho, beta_bar)`` and its image under ``h^{-1}``.

    ``hn_holds`` is false when ``n S2 - S1^2 <= 0``; with ``X_0 = 0`` this is
    exactly the all-zero event ``X_0 = ... = X_{n-1} = 0``.  Transformed
    estimates are present only when ``rho_hat > 0`` and both raw estimates
    are finite in double precision.
    """
    paths = _as_paths(skeleton)
    if paths.ndim != 1:
        raise ParameterError("cls_rho_betabar takes a single skeleton; use cls_batch")
    r = cls_batch(paths)

    def val(key):
        v = float(r[key])
        return None if math.isnan(v) else v

    return ClsEstimate(rho_hat=val("rho_hat"), betabar_hat=val("betabar_hat"),
                       hn_holds=bool(r["hn_holds"]),
                       b_tilde_hat=val("b_tilde_hat"), beta_tilde_hat=val("beta_tilde_hat"))


def residuals(skeleton, d: DerivedParams) -> np.ndarray:
    """Martingale differences ``M_k = X_k - rho X_{k-1} - beta_bar`` at the true parameters."""
    x = skeleton.observations if isinstance(skeleton, Skeleton) else np.asarray(skeleton, dtype=float)
    if x.shape[-1] < 2:
        raise ParameterError("residuals need n >= 1")
    return x[..., 1:] - d.rho * x[..., :-1] - d.beta_bar


def _scales(n: int, regime: str) -> tuple[float, float]:
    if regime == "general-critical":
        return float(n), 1.0
    if regime == "pure-immigration":
        return n**1.5, n**0.5
    raise ParameterError(f"unknown regime {regime!r}; choose from {REGIMES}")


def scaled_errors(est: ClsEstimate, d: DerivedParams, n: int, regime: str = "general-critical") -> np.ndarray:
    """``(n (b_hat - b), beta_hat - beta)`` or ``(n^1.5 (...), n^0.5 (...))`` for pure immigration."""
    s1, s2 = _scales(n, regime)
    if not est.transformed:
        raise MissingEstimate("transformed estimates are absent (H_n fails or rho_hat <= 0)")
    return np.array([s1 * (est.b_tilde_hat - d.b_tilde), s2 * (est.beta_tilde_hat - d.beta_tilde)])


def scaled_errors_batch(est: dict, d: DerivedParams, n: int, regime: str = "general-critical") -> np.ndarray:
    s1, s2 = _scales(n, regime)
    return np.column_stack([s1 * (est["b_tilde_hat"] - d.b_tilde), s2 * (est["beta_tilde_hat"] - d.beta_tilde)])


def gaussian_limit_covariance(d: DerivedParams) -> np.ndarray:
    """Covariance of the Gaussian limit in the pure immigration regime.

    ``V0`` times the inverse of ``[[bt^2/3, bt/2], [bt/2, 1]]``, written out
    as ``V0 * 12 / bt^2 * [[1, -bt/2], [-bt/2, bt^2/3]]`` with ``bt = beta_tilde``.
    """
    if d.C != 0.0:
        raise RequiresPureImmigration(f"Gaussian limit needs C = 0, got C = {d.C}")
    bt = d.beta_tilde
    if bt == 0.0:
        raise DegenerateImmigration("Gaussian limit needs beta_tilde > 0")
    return d.V0 * 12.0 / (bt * bt) * np.array([[1.0, -bt / 2.0], [-bt / 2.0, bt * bt / 3.0]])
