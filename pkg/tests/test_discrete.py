"""Discrete-time models: walk recursion, segment stationarity, couplings."""
import math

import numpy as np
import pytest
from scipy import stats as spstats

from kmpflow import discrete as dm
from kmpflow.stats import product_law_ks


def test_rwre_state_validation():
    st = dm.rwre_delta0()
    assert st.n == 0 and st.parity == 0
    with pytest.raises(ValueError):
        dm.BetaRwreState(probs={0: 0.7}, n=0)
    with pytest.raises(ValueError):
        dm.BetaRwreState(probs={0: -0.2, 2: 1.2}, n=0)
    with pytest.raises(ValueError):
        dm.BetaRwreState(probs={1: 1.0}, n=0)  # wrong parity
    odd = dm.BetaRwreState(probs={1: 0.4, -1: 0.6}, n=1)
    assert odd.parity == 1


def test_rwre_one_step_from_delta():
    st = dm.rwre_delta0()
    out = dm.rwre_step(st, {0: 0.73})
    assert out.probs[1] == 0.73
    assert out.probs[-1] == 1.0 - 0.73
    assert out.n == 1
    with pytest.raises(ValueError):
        dm.rwre_step(st, {})
    with pytest.raises(ValueError):
        dm.rwre_step(st, {0: 1.0})


def test_rwre_half_environment_is_binomial():
    s = dm.rwre_delta0()
    n = 6
    for _ in range(n):
        s = dm.rwre_step(s, {x: 0.5 for x in s.probs})
    for x, p in s.probs.items():
        k = (x + n) // 2
        assert p == pytest.approx(math.comb(n, k) / 2**n, abs=1e-15)


def test_rwre_annealed_matches_simple_walk():
    n = 6
    sites, mean, se = dm.annealed_rwre_pmf(n, 1.0, 100_000, seed=13)
    ref = np.array(
        [math.comb(n, (x + n) // 2) / 2**n if (x + n) % 2 == 0 else 0.0 for x in sites]
    )
    on = ref > 0
    assert np.max(np.abs(mean[on] - ref[on]) / se[on]) < 3.0
    assert np.max(np.abs(mean[~on])) == 0.0
    assert mean.sum() == pytest.approx(1.0, abs=1e-12)


def test_quenched_law_genuinely_fluctuates():
    assert dm.quenched_origin_variance(2, 1.0, 5000, seed=3) > 1e-3


def test_segment_env_validation():
    with pytest.raises(ValueError):
        dm.SegmentEnv(N=0, alphas=(1.0, 1.0))
    with pytest.raises(ValueError):
        dm.SegmentEnv(N=2, alphas=(1.0, 1.0))
    with pytest.raises(ValueError):
        dm.SegmentEnv(N=2, alphas=(1.0, 1.0, 0.0, 1.0))
    env = dm.SegmentEnv(N=2, alphas=(0.5, 1.0, 2.0, 0.25))
    assert np.allclose(env.stationary_shapes(), [1.5, 3.0, 2.25])


def test_segment_two_site_exchange():
    # closed form for N = 1: both sites trade their Beta-weighted halves
    probs = np.array([0.3, 0.7])
    bees = np.array([0.8, 0.25])
    out = dm.segment_step(probs, bees)
    assert out[0] == pytest.approx(0.3 * 0.2 + 0.7 * 0.75)
    assert out[1] == pytest.approx(0.3 * 0.8 + 0.7 * 0.25)
    assert out.sum() == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        dm.segment_step(np.array([-0.1, 1.1]), bees)
    with pytest.raises(ValueError):
        dm.segment_step(probs, bees[:1])


def test_segment_step_conserves_rows():
    env = dm.SegmentEnv(N=8, alphas=tuple(1.5 for _ in range(10)))
    gen = np.random.default_rng(5)
    rows = np.abs(np.random.default_rng(6).normal(size=(100, 9)))
    out = dm.segment_step(rows, env.draw_bees(gen, rows=100))
    assert np.max(np.abs(out.sum(axis=1) - rows.sum(axis=1))) < 1e-12


def test_segment_stationary_homogeneous():
    env = dm.SegmentEnv(N=8, alphas=tuple(1.5 for _ in range(10)))
    rows = dm.segment_stationary_sample(env, sweeps=6, replicas=4000, seed=21)
    for x in range(9):
        p = spstats.kstest(rows[:, x], spstats.gamma(3.0).cdf).pvalue
        assert p > 0.01


def test_segment_stationary_inhomogeneous():
    env = dm.SegmentEnv(N=8, alphas=tuple(1 + x / 10 for x in range(10)))
    shapes = env.stationary_shapes()
    rows = dm.segment_stationary_sample(env, sweeps=6, replicas=4000, seed=22)
    for x in range(9):
        p = spstats.kstest(rows[:, x], spstats.gamma(shapes[x]).cdf).pvalue
        assert p > 0.01


def test_beta_gamma_identity_exponential_case():
    r = dm.beta_gamma_identity_test(1.0, 1.0, 20_000, seed=61)
    assert r["ks_p_gamma_a"] > 0.01
    assert r["ks_p_gamma_b"] > 0.01
    assert abs(r["rank_corr_z"]) < 3.0
    assert abs(r["mean_a_z"]) < 3.0
    assert r["joint_ks_p"] > 0.01
    with pytest.raises(ValueError):
        dm.beta_gamma_identity_test(0.0, 1.0, 100)


def test_beta_gamma_identity_general_case():
    r = dm.beta_gamma_identity_test(2.0, 3.0, 20_000, seed=62)
    assert r["ks_p_gamma_a"] > 0.01
    assert r["ks_p_gamma_b"] > 0.01
    assert abs(r["rank_corr_z"]) < 3.0
    assert r["joint_ks_p"] > 0.01


def test_product_law_ks_helper():
    gen = np.random.default_rng(1)
    ident = lambda z: z
    ok = product_law_ks(gen.random(800), gen.random(800), ident, ident, seed=5)
    assert ok["p_value"] > 0.05
    x = gen.random(800)
    bad = product_law_ks(x, x, ident, ident, seed=5)
    assert bad["p_value"] < 0.01
    with pytest.raises(ValueError):
        product_law_ks(np.zeros(5), np.zeros(4), ident, ident)


def test_brickwall_step_basics():
    st = dm.BrickWallState(energies=np.array([1.0, 0.0, 0.0, 0.0]), wlo=0, n=0)
    out = dm.brickwall_step(st, {0: 0.5, 2: 0.5})
    assert np.allclose(out.energies, [0.5, 0.5, 0.0, 0.0])
    assert out.total() == pytest.approx(st.total(), abs=1e-12)
    assert out.n == 1 and out.active_parity == 1
    with pytest.raises(ValueError):
        dm.brickwall_step(st, {})
    with pytest.raises(ValueError):
        dm.BrickWallState(energies=np.array([-1.0]), wlo=0)


def test_brickwall_half_environment_smoothing():
    # B = 1/2 everywhere: deterministic averaging, alternating parity
    st = dm.BrickWallState(energies=np.array([0.0, 1.0, 1.0, 0.0, 0.0, 0.0]), wlo=0, n=0)
    half = {x: 0.5 for x in range(-1, 6)}
    a = dm.brickwall_step(st, half)
    assert np.allclose(a.energies, [0.5, 0.5, 0.5, 0.5, 0.0, 0.0])
    b = dm.brickwall_step(a, half)
    assert np.allclose(b.energies, [0.5, 0.5, 0.5, 0.25, 0.25, 0.0])
    assert b.total() == pytest.approx(2.0, abs=1e-12)


def test_brickwall_walk_coupling_exact():
    rep = dm.brickwall_coupling_run(50, alpha=1.0, seed=31)
    assert rep.steps == 50
    assert rep.sup_site <= 1e-10
    assert rep.sup_bond <= 1e-10
    assert len(rep.per_step) == 50
    rep2 = dm.brickwall_coupling_run(20, alpha=0.7, seed=32, split=0.0)
    assert rep2.sup_site <= 1e-10


def test_haar_unitaries_are_unitary():
    gen = np.random.default_rng(7)
    us = dm.haar_unitaries(gen, 500, 2)
    gram = np.einsum("kij,kil->kjl", us.conj(), us)
    assert np.max(np.abs(gram - np.eye(2))) < 1e-12
    us5 = dm.haar_unitaries(np.random.default_rng(8), 100, 5)
    gram5 = np.einsum("kij,kil->kjl", us5.conj(), us5)
    assert np.max(np.abs(gram5 - np.eye(5))) < 1e-12


def test_haar_step_routing_and_norm():
    # single occupied site: right block must land at x+1, left block at x-1
    right = np.zeros((5, 1), dtype=complex)
    left = np.zeros((5, 1), dtype=complex)
    right[2, 0] = 0.6
    left[2, 0] = 0.8j
    st = dm.WaveState(right=right, left=left, wlo=-2, n=0)
    assert st.total_norm_sq() == pytest.approx(1.0, abs=1e-12)
    u = dm.haar_unitaries(np.random.default_rng(9), 1, 2)[0]
    out = dm.haar_step(st, {0: u})
    vec = u @ np.array([0.6, 0.8j])
    assert out.right[3, 0] == pytest.approx(vec[0], abs=1e-12)
    assert out.left[1, 0] == pytest.approx(vec[1], abs=1e-12)
    assert out.total_norm_sq() == pytest.approx(1.0, abs=1e-12)
    bees = dm.haar_bees(st, {0: u, 4: u})
    assert bees[0] == pytest.approx(abs(vec[0]) ** 2, abs=1e-12)
    assert bees[4] == pytest.approx(abs(u[0, 0]) ** 2, abs=1e-12)


def test_haar_step_escape_guard():
    right = np.zeros((3, 1), dtype=complex)
    left = np.zeros((3, 1), dtype=complex)
    right[2, 0] = 1.0
    st = dm.WaveState(right=right, left=left, wlo=0, n=0)
    u = dm.haar_unitaries(np.random.default_rng(10), 1, 2)[0]
    with pytest.raises(ValueError):
        dm.haar_step(st, {2: u})


def test_haar_environment_laws():
    bs = dm.haar_split_samples((1, 1), 100_000, seed=43)
    assert spstats.kstest(bs, "uniform").pvalue > 0.01
    bs23 = dm.haar_split_samples((2, 3), 100_000, seed=42)
    assert spstats.kstest(bs23, spstats.beta(2, 3).cdf).pvalue > 0.01


def test_wave_walk_coupling():
    out = dm.wave_walk_coupling(10, seed=51, dims=(1, 1))
    assert out["per_step"][0] == 0.0
    assert out["max_gap"] <= 1e-10
    long = dm.wave_walk_coupling(50, seed=53, dims=(1, 1))
    assert long["max_gap"] <= 1e-10
    gen12 = dm.wave_walk_coupling(10, seed=52, dims=(1, 2))
    assert gen12["max_gap"] <= 1e-10
