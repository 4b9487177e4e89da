"""Samplers for CBI skeletons and for the critical limit diffusion.

Skeletons are the unit-spaced observations ``X_0, ..., X_n``.  Three schemes
are available:

``exact-pure-immigration``
    ``c = 0`` and ``mu`` empty.  Between jumps the path follows the linear
    flow ``dX = (beta + b X) dt``, so each jump of size ``z`` at time ``tau``
    inside a unit interval contributes ``z * exp(b (1 - tau))``.
``exact-cir``
    ``mu`` and ``nu`` empty with ``b = 0``: the squared-Bessel type
    transition sampled exactly through a noncentral chi-square variate.
``euler-jump``
    Euler-Maruyama on ``m`` substeps per unit time with frozen branching
    jump intensity, exact compound Poisson immigration and full truncation
    at zero.

The limit diffusion ``dY = beta_tilde dt + sqrt(C Y) dW`` is always sampled
exactly on its grid.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import partial

import numpy as np

from . import rng as rngmod
from .errors import DegenerateDenominator, DegenerateDiffusion, InvalidConfig, ParameterError
from .model import CbiParams, derive, exp_mean

__all__ = [
    "SCHEMES",
    "SimConfig",
    "Skeleton",
    "LimitFunctionals",
    "resolve_scheme",
    "exact_cir_step",
    "simulate_skeletons",
    "simulate_skeleton",
    "sample_limit_functionals",
    "sample_limit_functionals_batch",
    "sample_limit_endpoint",
    "limit_vector",
    "limit_vectors",
    "skeleton_to_csv",
    "skeleton_from_csv",
]

SCHEMES = ("auto", "exact-pure-immigration", "exact-cir", "euler-jump")


@dataclass(frozen=True)
class SimConfig:
    substeps_per_unit: int = 64
    scheme: str = "auto"

    def __post_init__(self):
        if isinstance(self.substeps_per_unit, bool) or not isinstance(self.substeps_per_unit, int) \
                or self.substeps_per_unit < 1:
            raise InvalidConfig(f"substeps_per_unit must be a positive integer, got {self.substeps_per_unit!r}")
        if self.scheme not in SCHEMES:
            raise InvalidConfig(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")


@dataclass(frozen=True)
class Skeleton:
    observations: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        obs = np.array(self.observations, dtype=float)
        if obs.ndim != 1 or obs.size < 2:
            raise ParameterError("a skeleton needs at least two observations X_0, X_1")
        if not np.all(np.isfinite(obs)) or np.any(obs < 0):
            raise ParameterError("skeleton observations must be finite and nonnegative")
        obs.flags.writeable = False
        object.__setattr__(self, "observations", obs)

    @property
    def n(self) -> int:
        return self.observations.size - 1


@dataclass(frozen=True)
class LimitFunctionals:
    int_Y: float
    int_Y2: float
    M1: float
    int_Y_dM: float


def resolve_scheme(params: CbiParams, cfg: SimConfig) -> str:
    d = derive(params)
    pure = params.c == 0.0 and params.mu.is_empty
    cir = params.c > 0.0 and params.mu.is_empty and params.nu.is_empty and d.b_tilde == 0.0
    if cfg.scheme == "auto":
        if pure:
            return "exact-pure-immigration"
        return "exact-cir" if cir else "euler-jump"
    if cfg.scheme == "exact-pure-immigration" and not pure:
        raise InvalidConfig("exact-pure-immigration needs c = 0 and an empty branching measure")
    if cfg.scheme == "exact-cir" and not cir:
        raise InvalidConfig("exact-cir needs c > 0, empty jump measures and b = 0")
    return cfg.scheme


def exact_cir_step(y, beta_tilde: float, C: float, dt: float, gen: np.random.Generator):
    """Exact transition of ``dY = beta_tilde dt + sqrt(C Y) dW`` over ``dt``.

    Returns ``(C dt / 4) * G`` with ``G`` noncentral chi-square of
    ``4 beta_tilde / C`` degrees of freedom and noncentrality ``4 y / (C dt)``,
    drawn as ``Gamma(d/2 + P, scale=2)`` with ``P ~ Poisson(noncentrality / 2)``.
    """
    if not C > 0:
        raise DegenerateDiffusion("exact CIR transition needs C > 0; use the deterministic drift")
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    y = np.asarray(y, dtype=float)
    scale = C * dt / 4.0
    P = gen.poisson(y / (2.0 * scale))
    # gamma with shape 0 returns exactly 0, which covers d = 0 with P = 0
    G = gen.gamma(2.0 * beta_tilde / C + P, 2.0)
    out = scale * G
    return out if out.ndim else float(out)


def _pure_immigration_step(x, params, growth, drift, gen, width):
    x = growth * x + drift
    b = params.b
    for z, r in params.nu.atoms:
        k = gen.poisson(r, size=width)
        if b == 0.0:
            x = x + z * k
        else:
            tau = gen.random(int(k.sum()))
            lanes = np.repeat(np.arange(width), k)
            x = x + np.bincount(lanes, weights=z * np.exp(b * (1.0 - tau)), minlength=width)
    return x


def _euler_unit(x, params, d, m, gen, width):
    h = 1.0 / m
    # compensators of both jump integrals folded into the drift:
    # (beta_tilde + b_tilde x) - x int z mu - int z nu = beta + (b_tilde - int z mu) x
    const = params.beta * h
    lin = (d.b_tilde - params.mu.moment(1)) * h
    diff = math.sqrt(2.0 * params.c * h)
    for _ in range(m):
        inc = const + lin * x
        if params.c > 0.0:
            inc = inc + diff * np.sqrt(x) * gen.standard_normal(width)
        for z, r in params.mu.atoms:
            inc = inc + z * gen.poisson(x * (r * h))
        for z, r in params.nu.atoms:
            inc = inc + z * gen.poisson(r * h, size=width)
        x = np.maximum(x + inc, 0.0)
    return x


def _skeleton_block(block: int, *, params: CbiParams, n: int, scheme: str, m: int, seed: int, x0: float,
                    stream: int = 0):
    width = rngmod.BLOCK_SIZE
    gen = rngmod.block_generator(seed, rngmod.SKELETON, block, stream)
    d = derive(params)
    out = np.empty((width, n + 1))
    x = np.full(width, float(x0))
    out[:, 0] = x
    if scheme == "exact-pure-immigration":
        growth, drift = math.exp(params.b), params.beta * exp_mean(params.b)
    for k in range(1, n + 1):
        if scheme == "exact-pure-immigration":
            x = _pure_immigration_step(x, params, growth, drift, gen, width)
        elif scheme == "exact-cir":
            x = exact_cir_step(x, params.beta, d.C, 1.0, gen)
        else:
            x = _euler_unit(x, params, d, m, gen, width)
        out[:, k] = x
    return out


def simulate_skeletons(
    params: CbiParams,
    n: int,
    replicates: int,
    cfg: SimConfig = SimConfig(),
    seed: int = 0,
    x0: float = 0.0,
    workers: int = 1,
    stream: int = 0,
) -> np.ndarray:
    """Simulate ``replicates`` independent skeletons; returns shape ``(replicates, n + 1)``.

    Row ``r`` is identical to ``simulate_skeleton(..., replicate=r)`` for the
    same seed and stream, whatever ``replicates`` or ``workers`` are.
    """
    if n < 1 or replicates < 1:
        raise ParameterError("n and replicates must be positive")
    if x0 < 0:
        raise ParameterError("x0 must be nonnegative")
    seed = rngmod.check_seed(seed)
    scheme = resolve_scheme(params, cfg)
    fn = partial(_skeleton_block, params=params, n=n, scheme=scheme,
                 m=cfg.substeps_per_unit, seed=seed, x0=x0, stream=stream)
    blocks = rngmod.map_blocks(fn, list(range(rngmod.n_blocks(replicates))), workers)
    return np.concatenate(blocks)[:replicates]


def simulate_skeleton(
    params: CbiParams,
    n: int,
    cfg: SimConfig = SimConfig(),
    seed: int = 0,
    replicate: int = 0,
    x0: float = 0.0,
    stream: int = 0,
) -> Skeleton:
    block, lane = rngmod.locate(replicate)
    scheme = resolve_scheme(params, cfg)
    if n < 1:
        raise ParameterError("n must be positive")
    rows = _skeleton_block(block, params=params, n=n, scheme=scheme,
                           m=cfg.substeps_per_unit, seed=rngmod.check_seed(seed), x0=x0, stream=stream)
    return Skeleton(rows[lane], seed=seed)


def _limit_block(block: int, *, beta_tilde: float, C: float, grid_points: int, seed: int) -> np.ndarray:
    width = rngmod.BLOCK_SIZE
    h = 1.0 / (grid_points - 1)
    if C == 0.0:
        t = np.linspace(0.0, 1.0, grid_points)
        y = beta_tilde * t
        w = np.full(grid_points, h)
        w[[0, -1]] = h / 2.0
        row = [w @ y, w @ (y * y), 0.0, 0.0]
        return np.tile(row, (width, 1))
    gen = rngmod.block_generator(seed, rngmod.LIMIT, block)
    y = np.zeros(width)
    int_y = np.zeros(width)
    int_y2 = np.zeros(width)
    ito = np.zeros(width)
    drift = beta_tilde * h
    for _ in range(grid_points - 1):
        y_next = exact_cir_step(y, beta_tilde, C, h, gen)
        int_y += 0.5 * h * (y + y_next)
        int_y2 += 0.5 * h * (y * y + y_next * y_next)
        ito += y * (y_next - y - drift)
        y = y_next
    return np.column_stack([int_y, int_y2, y - beta_tilde, ito])


def sample_limit_functionals_batch(
    beta_tilde: float, C: float, grid_points: int = 2000, replicates: int = 1,
    seed: int = 0, workers: int = 1,
) -> np.ndarray:
    """Columns ``int_Y, int_Y2, M1, int_Y_dM`` for ``replicates`` limit paths."""
    if grid_points < 2:
        raise ParameterError("grid_points must be at least 2")
    if beta_tilde < 0 or C < 0:
        raise ParameterError("beta_tilde and C must be nonnegative")
    fn = partial(_limit_block, beta_tilde=float(beta_tilde), C=float(C),
                 grid_points=grid_points, seed=rngmod.check_seed(seed))
    blocks = rngmod.map_blocks(fn, list(range(rngmod.n_blocks(replicates))), workers)
    return np.concatenate(blocks)[:replicates]


def sample_limit_functionals(beta_tilde: float, C: float, grid_points: int = 2000,
                             seed: int = 0, replicate: int = 0) -> LimitFunctionals:
    if grid_points < 2:
        raise ParameterError("grid_points must be at least 2")
    block, lane = rngmod.locate(replicate)
    rows = _limit_block(block, beta_tilde=float(beta_tilde), C=float(C),
                        grid_points=grid_points, seed=rngmod.check_seed(seed))
    return LimitFunctionals(*(float(v) for v in rows[lane]))


def _endpoint_block(block: int, *, beta_tilde: float, C: float, seed: int, stream: int) -> np.ndarray:
    gen = rngmod.block_generator(seed, rngmod.ENDPOINT, block, stream)
    return exact_cir_step(np.zeros(rngmod.BLOCK_SIZE), beta_tilde, C, 1.0, gen)


def sample_limit_endpoint(beta_tilde: float, C: float, replicates: int, seed: int = 0,
                          workers: int = 1, stream: int = 0) -> np.ndarray:
    """Exact draws of ``Y_1`` for the limit diffusion started at ``Y_0 = 0``."""
    fn = partial(_endpoint_block, beta_tilde=float(beta_tilde), C=float(C),
                 seed=rngmod.check_seed(seed), stream=stream)
    blocks = rngmod.map_blocks(fn, list(range(rngmod.n_blocks(replicates))), workers)
    return np.concatenate(blocks)[:replicates]


def limit_vectors(functionals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``limit_vector``; returns ``(vectors, valid)`` with NaN rows where invalid."""
    f = np.asarray(functionals, dtype=float)
    iy, iy2, m1, idm = f.T
    den = iy2 - iy * iy
    valid = den > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        e1 = (idm - m1 * iy) / den
        e2 = (m1 * iy2 - iy * idm) / den
    out = np.column_stack([e1, e2])
    out[~valid] = np.nan
    return out, valid


def limit_vector(f: LimitFunctionals) -> tuple[float, float]:
    """One replicate of the limit law of ``(n (b_tilde_hat - b_tilde), beta_tilde_hat - beta_tilde)``."""
    den = f.int_Y2 - f.int_Y * f.int_Y
    if not den > 0:
        raise DegenerateDenominator(f"int Y^2 - (int Y)^2 = {den} is not positive")
    return ((f.int_Y_dM - f.M1 * f.int_Y) / den, (f.M1 * f.int_Y2 - f.int_Y * f.int_Y_dM) / den)


def skeleton_to_csv(skeleton: Skeleton) -> str:
    buf = io.StringIO()
    buf.write("k,x\n")
    for k, x in enumerate(skeleton.observations):
        buf.write(f"{k},{float(x)!r}\n")
    return buf.getvalue()


def skeleton_from_csv(text: str) -> Skeleton:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["k", "x"]:
        raise ParameterError("skeleton CSV must start with the header 'k,x'")
    xs = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 2:
            raise ParameterError(f"line {lineno}: expected two fields")
        try:
            k, x = int(row[0]), float(row[1])
        except ValueError:
            raise ParameterError(f"line {lineno}: malformed row {row!r}") from None
        if k != len(xs):
            raise ParameterError(f"line {lineno}: expected k={len(xs)}, got {k}")
        xs.append(x)
    return Skeleton(np.array(xs))
