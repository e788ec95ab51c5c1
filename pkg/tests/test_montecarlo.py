from __future__ import annotations

import io
import math

import numpy as np
import pytest

from circhaos import chaos, montecarlo as mc, operator as op
from circhaos.errors import InsufficientSamples, InvalidParameters
from circhaos.expquad import exp_quadratic_expectation
from circhaos.model import CirParams, SqGaussParams, embed_cir
from circhaos.pricing import bond_price_riccati_closed

P = CirParams(0.5, 0.04, 0.2)
SG = embed_cir(P)


def test_estimate_example():
    e = mc.estimate([1.0, 2.0, 3.0])
    assert e.mean == 2.0
    assert e.stderr == pytest.approx(1 / math.sqrt(3), rel=1e-15)
    assert e.n == 3
    assert e.within(2.0 + 2.9 / math.sqrt(3)) and not e.within(2.0 + 3.1 / math.sqrt(3))


def test_estimate_needs_two_samples():
    with pytest.raises(InsufficientSamples):
        mc.estimate([1.0])


@pytest.mark.parametrize("kwargs", [dict(n_paths=0), dict(dt=0.0), dict(horizon=1e-4), dict(scheme="euler"),
                                    dict(workers=0)])
def test_sim_config_validation(kwargs):
    base = dict(n_paths=10, dt=1e-2, horizon=1.0)
    base.update(kwargs)
    with pytest.raises(InvalidParameters):
        mc.SimConfig(**base)


def test_sample_normals_chunked_and_reproducible():
    x = mc.sample_normals(4, mc.CHUNK + 10, 3)
    assert x.shape == (mc.CHUNK + 10, 3)
    np.testing.assert_array_equal(x[: mc.CHUNK], mc.chunk_rng(4, 0).standard_normal((mc.CHUNK, 3)))
    np.testing.assert_array_equal(x, mc.sample_normals(4, mc.CHUNK + 10, 3))


def test_zero_volatility_is_deterministic():
    sg = SqGaussParams.constant(2, 0.3, 0.0, r0_vec=[1.0, 0.5])
    b = mc.simulate_ou(sg, mc.SimConfig(5, 0.1, 1.0))
    expect = np.exp(-0.3 * b.times)[:, None] * np.array([1.0, 0.5])
    for path in b.values:
        np.testing.assert_allclose(path, expect, rtol=1e-13)


def test_ou_moments():
    # exact transitions: at t = 2 the mean is e^{-alpha t} R0, the variance gamma^2 (1 - e^{-2 alpha t}) / (2 alpha)
    sg = SqGaussParams.constant(2, 0.5, 0.4, r0_vec=[1.0, 0.0])
    b = mc.simulate_ou(sg, mc.SimConfig(100_000, 0.5, 2.0, seed=2), record_times=[2.0])
    x = b.values[:, 0, :]
    var = 0.16 * (1 - math.exp(-2.0)) / 1.0
    assert abs(x[:, 0].mean() - math.exp(-1.0)) < 4 * math.sqrt(var / x.shape[0])
    assert abs(x[:, 1].mean()) < 4 * math.sqrt(var / x.shape[0])
    assert x.var(axis=0) == pytest.approx([var, var], rel=0.02)


def test_cir_rate_mean_and_stationary_variance():
    a, b, c = 1.0, 0.04, 0.2
    sg = embed_cir(CirParams(a, b, c))
    t = 3.0
    bundle = mc.simulate_ou(sg, mc.SimConfig(100_000, 1.0, t, seed=3), record_times=[t])
    r = np.sum(bundle.values[:, 0, :] ** 2, axis=1)
    mean = b * (1 - math.exp(-a * t))
    assert abs(r.mean() - mean) < 4 * r.std() / math.sqrt(r.size)
    # per-component variance of R approaches gamma^2 / (2 alpha) = c^2 / (4a)
    comp = bundle.values[:, 0, 0]
    assert comp.var() == pytest.approx(c**2 / (4 * a) * (1 - math.exp(-a * t)), rel=0.02)


def test_cir_direct_small_volatility_follows_ode():
    p = CirParams(0.8, 0.05, 1e-6, r0=0.01)
    b = mc.simulate_cir_direct(p, mc.SimConfig(50, 1e-3, 1.0, scheme="cir_euler_full_truncation"))
    ode = 0.05 + (0.01 - 0.05) * math.exp(-0.8)
    np.testing.assert_allclose(b.values[:, -1], ode, rtol=1e-3)


def test_cir_direct_mean():
    p = CirParams(1.0, 0.04, 0.2, r0=0.02)
    b = mc.simulate_cir_direct(p, mc.SimConfig(50_000, 1e-2, 2.0, seed=1, scheme="cir_euler_full_truncation"),
                               record_times=[2.0])
    r = b.values[:, -1]
    assert abs(r.mean() - (0.04 - 0.02 * math.exp(-2.0))) < 4 * r.std() / math.sqrt(r.size)


def test_schemes_agree_in_distribution():
    from scipy import stats

    p = CirParams(1.0, 0.04, 0.2)
    ou = mc.simulate_ou(embed_cir(p), mc.SimConfig(20_000, 0.5, 2.0, seed=5), record_times=[2.0])
    r_ou = np.sum(ou.values[:, -1, :] ** 2, axis=1)
    eu = mc.simulate_cir_direct(p, mc.SimConfig(20_000, 2e-3, 2.0, seed=6, scheme="cir_euler_full_truncation"),
                                record_times=[2.0])
    assert stats.ks_2samp(r_ou, eu.values[:, -1]).pvalue > 1e-3


def test_schemes_dispatch_checked():
    with pytest.raises(InvalidParameters):
        mc.simulate_ou(SG, mc.SimConfig(10, 0.1, 1.0, scheme="cir_euler_full_truncation"))
    with pytest.raises(InvalidParameters):
        mc.simulate_cir_direct(P, mc.SimConfig(10, 0.1, 1.0))


def test_discount_without_market_price_is_exp_minus_integral():
    cfg = mc.SimConfig(50, 0.01, 1.0, seed=8)
    f = mc.accumulate_functionals(SG, cfg)  # same draw pattern as simulate_ou
    b = mc.simulate_ou(SG, cfg)
    r = np.einsum("ptd,ptd->pt", b.values, b.values)
    integral = np.sum(0.5 * 0.01 * (r[:, 1:] + r[:, :-1]), axis=1)
    np.testing.assert_allclose(f.V[:, -1], np.exp(-integral), rtol=1e-12)


def test_stochastic_integral_has_mean_zero():
    f = mc.accumulate_functionals(SG, mc.SimConfig(40_000, 0.02, 1.0, seed=4))
    assert mc.estimate(f.X[:, -1]).within(0.0, 4.0)


def test_workers_are_bitwise_reproducible():
    cfg1 = mc.SimConfig(3 * mc.CHUNK + 17, 0.05, 1.0, seed=12, workers=1)
    cfg2 = mc.SimConfig(3 * mc.CHUNK + 17, 0.05, 1.0, seed=12, workers=2)
    f1 = mc.accumulate_functionals(SG, cfg1, test_functions=[np.sin])
    f2 = mc.accumulate_functionals(SG, cfg2, test_functions=[np.sin])
    assert np.array_equal(f1.V, f2.V) and np.array_equal(f1.X, f2.X)
    assert np.array_equal(f1.sigma, f2.sigma) and np.array_equal(f1.Wg, f2.Wg)


def test_discount_decreases_with_maturity():
    times = [1.0, 5.0, 10.0, 20.0]
    f = mc.accumulate_functionals(SG, mc.SimConfig(2000, 0.05, 20.0, seed=1), record_times=times, need_x=False)
    assert np.all(np.diff(f.V, axis=1) <= 0)
    assert np.all(np.diff(f.V.mean(axis=0)) < 0)


def test_record_times_must_be_on_grid():
    with pytest.raises(InvalidParameters):
        mc.accumulate_functionals(SG, mc.SimConfig(10, 0.1, 1.0), record_times=[0.55])


def test_discrete_expectation_converges_at_second_order():
    a, b, c, T = 0.5, 1.0, 1.0, 1.0
    sg = embed_cir(CirParams(a, b, c))
    exact = bond_price_riccati_closed(CirParams(a, b, c), 0.0, T, 0.0).price
    steps = np.array([8, 16, 32, 64])
    bias = np.array([mc.discrete_discount_expectation(sg, T, n) - exact for n in steps])
    slope = np.polyfit(np.log(T / steps), np.log(np.abs(bias)), 1)[0]
    assert slope == pytest.approx(2.0, abs=0.3)


def test_discrete_expectation_matches_simulation():
    sg = embed_cir(CirParams(0.5, 1.0, 1.0))
    target = mc.discrete_discount_expectation(sg, 1.0, 10)
    with pytest.warns(RuntimeWarning):  # the coarse step is the point here
        est = mc.discount_mc(sg, mc.SimConfig(100_000, 0.1, 1.0, seed=21))
    assert est.within(target, 4.0)


def test_market_price_kernel_against_simulation():
    # E[V_T^{1/2}] = E[exp(-Y_T)] with the market-price terms folded into Y_T
    p = CirParams(0.5, 1.0, 1.0, lambda_bar=1.0)
    sg = embed_cir(p)
    predicted = exp_quadratic_expectation(chaos.assemble_yt(sg, T=1.0), op.QuadratureGrid.gauss_legendre(0, 1, 256))
    f = mc.accumulate_functionals(sg, mc.SimConfig(100_000, 2e-3, 1.0, seed=3), need_x=False)
    est = mc.estimate(np.sqrt(f.V[:, -1]))
    assert est.within(predicted, 4.0)


def test_large_step_warns():
    sg = SqGaussParams.constant(2, 0.5, 0.2, r0_vec=[1.0, 0.0])
    with pytest.warns(RuntimeWarning):
        mc.accumulate_functionals(sg, mc.SimConfig(10, 0.1, 1.0), need_x=False)


def test_path_dump_capped_at_100():
    buf = io.StringIO()
    mc.dump_paths(SG, mc.SimConfig(500, 0.25, 1.0), buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "path_id,t,r,V,X_partial"
    assert len(lines) == 1 + 100 * 5
    assert int(lines[-1].split(",")[0]) == 99


def test_richardson_slope_on_reference_steps():
    # trapezoid in time with exact OU values: the bias is second order, not first
    for T in (1.0, 5.0):
        e = [mc.discrete_discount_expectation(SG, T, int(round(T / dt))) for dt in (1e-2, 5e-3, 2.5e-3)]
        assert math.log2(abs(e[0] - e[1]) / abs(e[1] - e[2])) == pytest.approx(2.0, abs=0.3)


def test_estimate_constant_and_normal():
    assert mc.estimate(np.full(10, 0.7)).stderr == 0.0
    assert abs(mc.estimate(mc.sample_normals(0, 10**6, 1)).mean) < 3e-3


def test_schemes_agree_in_mean_and_variance():
    p = CirParams(1.0, 0.04, 0.2)
    ou = mc.simulate_ou(embed_cir(p), mc.SimConfig(40_000, 1e-3, 1.0, seed=5), record_times=[1.0])
    x = np.sum(ou.values[:, -1, :] ** 2, axis=1)
    eu = mc.simulate_cir_direct(p, mc.SimConfig(40_000, 1e-3, 1.0, seed=6, scheme="cir_euler_full_truncation"),
                                record_times=[1.0])
    y = eu.values[:, -1]
    se_mean = math.sqrt(x.var() / x.size + y.var() / y.size)
    assert abs(x.mean() - y.mean()) <= 3 * se_mean
    # variance of the sample variance from fourth central moments
    se_var = math.sqrt(sum((np.mean((z - z.mean()) ** 4) - z.var() ** 2) / z.size for z in (x, y)))
    assert abs(x.var() - y.var()) <= 3 * se_var


def test_discount_decay_beyond_joint_error():
    times = [1.0, 5.0, 10.0, 20.0]
    f = mc.accumulate_functionals(SG, mc.SimConfig(20_000, 0.01, 20.0, seed=2), record_times=times, need_x=False)
    for i in range(3):
        drop = mc.estimate(f.V[:, i] - f.V[:, i + 1])
        assert drop.mean > 3 * drop.stderr


def test_conditional_variance_representation():
    f = mc.accumulate_functionals(SG, mc.SimConfig(40_000, 0.01, 5.0, seed=13))
    X, V = f.X[:, -1], f.V[:, -1]
    gap = mc.estimate((X - X.mean()) ** 2 - (1 - V))
    assert gap.within(0.0, 3.0)
