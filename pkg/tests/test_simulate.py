import math

import numpy as np
import pytest
from scipy import stats

from cbi_cls.errors import DegenerateDenominator, DegenerateDiffusion, InvalidConfig, ParameterError
from cbi_cls.model import CbiParams, derive
from cbi_cls.moments import conditional_mean, conditional_variance
from cbi_cls.rng import BLOCK_SIZE, block_generator
from cbi_cls.simulate import (
    LimitFunctionals,
    SimConfig,
    Skeleton,
    exact_cir_step,
    limit_vector,
    limit_vectors,
    resolve_scheme,
    sample_limit_endpoint,
    sample_limit_functionals,
    sample_limit_functionals_batch,
    simulate_skeleton,
    simulate_skeletons,
    skeleton_from_csv,
    skeleton_to_csv,
)

from conftest import STANDARD


def test_deterministic_path():
    sk = simulate_skeleton(CbiParams(beta=1.0), 3, seed=5)
    assert sk.observations.tolist() == [0.0, 1.0, 2.0, 3.0]
    assert sk.n == 3


def test_poisson_immigration_mean():
    x = simulate_skeletons(CbiParams(nu=[(1.0, 1.0)]), 1, 100_000, seed=3)[:, 1]
    assert abs(x.mean() - 1.0) <= 3 * x.std(ddof=1) / math.sqrt(x.size)
    assert np.all(x == np.round(x))


def test_critical_mean_growth():
    p = STANDARD["cir"]
    n = 20
    y = simulate_skeletons(p, n, 20_000, seed=4)[:, -1] / n
    assert abs(y.mean() - derive(p).beta_tilde) <= 3 * y.std(ddof=1) / math.sqrt(y.size)


def test_exact_cir_step_moments():
    gen = np.random.default_rng(11)
    bt, C, dt, y0 = 0.8, 1.3, 0.7, 2.0
    y = exact_cir_step(np.full(200_000, y0), bt, C, dt, gen)
    mean = y0 + bt * dt
    # Var = C (y0 dt + bt dt^2 / 2) for dY = bt dt + sqrt(C Y) dW
    var = C * (y0 * dt + bt * dt * dt / 2.0)
    se = math.sqrt(var / y.size)
    assert abs(y.mean() - mean) <= 3.5 * se
    assert abs(y.var() - var) <= 0.02 * var


def test_exact_cir_step_zero_stays_zero():
    gen = np.random.default_rng(0)
    assert np.all(exact_cir_step(np.zeros(1000), 0.0, 1.0, 1.0, gen) == 0.0)
    with pytest.raises(DegenerateDiffusion):
        exact_cir_step(1.0, 1.0, 0.0, 1.0, gen)


def test_scheme_resolution():
    assert resolve_scheme(CbiParams(nu=[(1, 1)]), SimConfig()) == "exact-pure-immigration"
    assert resolve_scheme(CbiParams(c=1.0, beta=1.0), SimConfig()) == "exact-cir"
    assert resolve_scheme(STANDARD["jumps"], SimConfig()) == "euler-jump"
    assert resolve_scheme(CbiParams(c=1.0, b=0.3), SimConfig()) == "euler-jump"
    with pytest.raises(InvalidConfig):
        resolve_scheme(CbiParams(c=1.0), SimConfig(scheme="exact-pure-immigration"))
    with pytest.raises(InvalidConfig):
        resolve_scheme(CbiParams(c=1.0, b=0.1), SimConfig(scheme="exact-cir"))
    for bad in [dict(substeps_per_unit=0), dict(substeps_per_unit=1.5), dict(scheme="rk")]:
        with pytest.raises(InvalidConfig):
            SimConfig(**bad)


def test_reproducible_and_positive():
    for p in STANDARD.values():
        a = simulate_skeletons(p, 30, 600, seed=9)
        b = simulate_skeletons(p, 30, 600, seed=9)
        assert np.array_equal(a, b)
        assert np.all(a >= 0) and np.all(np.isfinite(a))
        assert not np.array_equal(a, simulate_skeletons(p, 30, 600, seed=10))


def test_replicate_rows_independent_of_batch_and_workers():
    p = STANDARD["jumps"]
    full = simulate_skeletons(p, 8, BLOCK_SIZE + 40, seed=21)
    small = simulate_skeletons(p, 8, 3, seed=21)
    assert np.array_equal(full[:3], small)
    for r in (0, 7, BLOCK_SIZE + 5):
        assert np.array_equal(simulate_skeleton(p, 8, seed=21, replicate=r).observations, full[r])
    assert np.array_equal(full, simulate_skeletons(p, 8, BLOCK_SIZE + 40, seed=21, workers=2))


def test_streams_differ():
    p = STANDARD["cir"]
    assert not np.array_equal(simulate_skeletons(p, 5, 10, seed=1, stream=0),
                              simulate_skeletons(p, 5, 10, seed=1, stream=1))
    g1 = block_generator(1, 0, 0).random(4)
    g2 = block_generator(1, 1, 0).random(4)
    assert not np.array_equal(g1, g2)


@pytest.mark.parametrize("name", list(STANDARD))
def test_conditional_mean_over_time(name):
    p = STANDARD[name]
    d = derive(p)
    x = simulate_skeletons(p, 5, 10_000, SimConfig(128), seed=2, x0=1.0)
    for t in range(1, 6):
        col = x[:, t]
        se = col.std(ddof=1) / math.sqrt(col.size)
        assert abs(col.mean() - conditional_mean(d, 1.0, t)) <= 3.5 * se


def test_noncritical_pure_immigration_moments():
    # exact scheme with b != 0: mean and one-step variance
    p = CbiParams(beta=0.3, b=-0.7, nu=[(0.5, 2.0), (2.0, 0.3)])
    d = derive(p)
    x = simulate_skeletons(p, 1, 100_000, seed=8, x0=4.0)[:, 1]
    se = x.std(ddof=1) / math.sqrt(x.size)
    assert abs(x.mean() - conditional_mean(d, 4.0, 1.0)) <= 3 * se
    assert abs(x.var() - conditional_variance(d, 4.0)) <= 0.02 * conditional_variance(d, 4.0)


def test_euler_matches_exact_cir():
    p = CbiParams(c=0.5, beta=1.0)
    exact = simulate_skeletons(p, 1, 10_000, seed=1, x0=1.0)[:, 1]
    euler = simulate_skeletons(p, 1, 10_000, SimConfig(256, "euler-jump"), seed=1, x0=1.0)[:, 1]
    assert stats.ks_2samp(exact, euler).statistic <= 0.02


def test_limit_functionals_deterministic():
    f = sample_limit_functionals(2.0, 0.0, grid_points=101)
    assert f.M1 == 0.0 and f.int_Y_dM == 0.0
    h = 0.01
    assert abs(f.int_Y - 1.0) <= 1e-12
    # trapezoid error for int (2t)^2 is 4 h^2 / 6
    assert abs(f.int_Y2 - 4.0 / 3.0) <= 4 * h * h / 6 + 1e-12


def test_limit_functionals_moments():
    bt, C = 1.0, 1.0
    f = sample_limit_functionals_batch(bt, C, grid_points=200, replicates=20_000, seed=3)
    iy, iy2, m1, _ = f.T
    assert np.all(iy2 >= iy * iy - 1e-12)
    assert abs(m1.mean()) <= 3.5 * m1.std(ddof=1) / math.sqrt(m1.size)
    assert abs(iy.mean() - bt / 2) <= 3.5 * iy.std(ddof=1) / math.sqrt(iy.size)
    # Var M1 = C E int Y = C bt / 2
    assert m1.var() == pytest.approx(C * bt / 2, rel=0.03)


def test_limit_single_matches_batch():
    batch = sample_limit_functionals_batch(1.0, 1.0, 50, replicates=BLOCK_SIZE + 3, seed=4)
    for r in (0, BLOCK_SIZE + 2):
        f = sample_limit_functionals(1.0, 1.0, 50, seed=4, replicate=r)
        assert [f.int_Y, f.int_Y2, f.M1, f.int_Y_dM] == batch[r].tolist()
    assert np.array_equal(batch, sample_limit_functionals_batch(1.0, 1.0, 50, BLOCK_SIZE + 3, seed=4, workers=2))


def test_limit_vector_examples():
    s, m = 0.3, 0.5
    f = LimitFunctionals(int_Y=0.5, int_Y2=1.0 / 3.0, M1=m, int_Y_dM=s)
    e1, e2 = limit_vector(f)
    assert e1 == pytest.approx(12 * (s - m / 2), rel=1e-12)
    assert e2 == pytest.approx(12 * (m / 3 - s / 2), rel=1e-12)
    with pytest.raises(DegenerateDenominator):
        limit_vector(LimitFunctionals(1.0, 1.0, 0.0, 0.0))
    vec, ok = limit_vectors(np.array([[0.5, 1 / 3, m, s], [1.0, 1.0, 0.0, 0.0]]))
    assert ok.tolist() == [True, False]
    assert np.allclose(vec[0], [e1, e2]) and np.all(np.isnan(vec[1]))


def test_endpoint_sampler_matches_gamma():
    bt, C = 1.0, 1.0
    y = sample_limit_endpoint(bt, C, 20_000, seed=6)
    # Y_1 from 0 is Gamma(2 bt / C, scale C / 2)
    assert stats.kstest(y, "gamma", args=(2 * bt / C, 0, C / 2)).pvalue > 0.001


def test_skeleton_validation_and_csv():
    with pytest.raises(ParameterError):
        Skeleton([0.0])
    with pytest.raises(ParameterError):
        Skeleton([0.0, -1.0])
    with pytest.raises(ParameterError):
        Skeleton([0.0, math.nan])
    sk = simulate_skeleton(STANDARD["jumps"], 12, seed=3)
    text = skeleton_to_csv(sk)
    assert text.startswith("k,x\n")
    assert np.array_equal(skeleton_from_csv(text).observations, sk.observations)
    with pytest.raises(ParameterError):
        skeleton_from_csv("k,x\n0,0\n2,1\n")
    with pytest.raises(ParameterError):
        skeleton_from_csv("x\n0\n")
    with pytest.raises(ParameterError):
        skeleton_from_csv("k,x\n0,a\n1,1\n")
    with pytest.raises(ValueError):
        sk.observations[0] = 1.0
