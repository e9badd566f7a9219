"""Tests for the kernel flow, its KMP coupling, and the Markov duality."""
from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats as spstats

from kmpflow import EnergyConfig, EnvParams, Environment
from kmpflow import flow, kmp
from kmpflow.flow import DualConfig

from oracle_util import KS_LEVEL, POINT_MASS_T1, annealed_point_prob


def make_env(alpha=1.0, seed=20260823) -> Environment:
    return Environment(EnvParams(alpha=alpha, seed=seed))


def test_identity_kernel_exact():
    K = flow.identity_kernel([-3, 0, 7], 2.5, EnvParams(alpha=1.0, seed=1))
    assert K.s == K.t == 2.5
    assert K.rows == {-3: {-3: 1.0}, 0: {0: 1.0}, 7: {7: 1.0}}
    assert K.max_row_sum_error() == 0.0


def test_evolve_without_time_is_copy():
    env = make_env(seed=401)
    K = flow.identity_kernel([0], 1.0, env.params)
    K2 = flow.evolve_kernel(K, 1.0, env)
    assert K2.rows == K.rows
    assert K2.rows is not K.rows


def test_evolution_matches_naive_replay_bitwise():
    # replay the environment's own event list with plain dict arithmetic
    env = make_env(seed=402)
    T = 2.0
    events = []
    for bond in range(-14, 14):
        events.extend(env.events_in(bond, 0.0, T))
    events.sort(key=lambda e: (e.time, e.bond))
    assert len({e.time for e in events}) == len(events)  # no exact ties
    row = {0: 1.0}
    for e in events:
        e0 = row.get(e.bond, 0.0)
        e1 = row.get(e.bond + 1, 0.0)
        if e0 == 0.0 and e1 == 0.0:
            continue
        s = e0 + e1
        row[e.bond] = e.split * s
        row[e.bond + 1] = (1.0 - e.split) * s
    row = {x: v for x, v in row.items() if v != 0.0}
    assert -10 <= min(row) and max(row) <= 10  # replay window was wide enough
    K = flow.evolve_kernel(flow.identity_kernel([0], 0.0, env.params), T, env)
    assert K.rows[0] == row


def test_rows_stay_stochastic():
    env = make_env(seed=403)
    K = flow.evolve_kernel(flow.identity_kernel([-1, 0, 3], 0.0, env.params), 8.0, env)
    assert K.max_row_sum_error() < 1e-12
    assert K.pruned_mass < 1e-12
    for r in K.rows.values():
        assert all(v > 0.0 for v in r.values())


def test_chapman_kolmogorov_composition():
    for seed in range(404, 409):
        env = make_env(seed=seed)
        K01 = flow.evolve_kernel(flow.identity_kernel([0], 0.0, env.params), 1.0, env)
        mids = sorted(K01.rows[0])
        K12 = flow.evolve_kernel(flow.identity_kernel(mids, 1.0, env.params), 2.0, env)
        composed = flow.compose(K01, K12)
        direct = flow.evolve_kernel(K01, 2.0, env)
        sites = set(composed.rows[0]) | set(direct.rows[0])
        sup = max(
            abs(composed.rows[0].get(x, 0.0) - direct.rows[0].get(x, 0.0))
            for x in sites
        )
        assert sup < 1e-12, (seed, sup)
        assert composed.s == 0.0 and composed.t == 2.0


def test_compose_with_identity_is_exact():
    env = make_env(seed=410)
    K = flow.evolve_kernel(flow.identity_kernel([0], 0.0, env.params), 1.0, env)
    ident = flow.identity_kernel(sorted(K.rows[0]), 1.0, env.params)
    out = flow.compose(K, ident)
    assert out.rows[0] == K.rows[0]


def test_compose_validation():
    p = EnvParams(alpha=1.0, seed=1)
    K1 = flow.identity_kernel([0], 0.0, p)
    K1 = flow.KernelMatrix(rows={0: {0: 1.0}}, s=0.0, t=1.0, params=p)
    K2 = flow.identity_kernel([0], 2.0, p)
    with pytest.raises(ValueError, match="interval"):
        flow.compose(K1, K2)
    K3 = flow.identity_kernel([5], 1.0, p)
    with pytest.raises(ValueError, match="missing the row"):
        flow.compose(K1, K3)
    other = flow.identity_kernel([0], 1.0, EnvParams(alpha=2.0, seed=1))
    with pytest.raises(ValueError, match="different environments"):
        flow.compose(K1, other)


def test_point_mass_coupling_is_bitwise():
    env_a = make_env(seed=411)
    env_b = make_env(seed=411)
    eta = kmp.run_kmp(EnergyConfig(values={0: 1.0}), 3.0, env_a).snapshots[-1]
    K = flow.evolve_kernel(flow.identity_kernel([0], 0.0, env_b.params), 3.0, env_b)
    assert K.rows[0] == eta.values


def test_apply_density_matches_direct_run():
    rho0 = {-2: 0.3, 0: 1.7, 1: 0.25}
    for seed in range(412, 417):
        env_a = make_env(seed=seed)
        env_b = make_env(seed=seed)
        direct = kmp.run_kmp(EnergyConfig(values=rho0), 1.5, env_a).snapshots[-1]
        K = flow.evolve_kernel(
            flow.identity_kernel(sorted(rho0), 0.0, env_b.params), 1.5, env_b
        )
        mixed = flow.apply_density(rho0, K)
        sites = set(direct.values) | set(mixed.values)
        scale = max(direct.values.values())
        sup = max(
            abs(direct.values.get(x, 0.0) - mixed.values.get(x, 0.0)) for x in sites
        )
        assert sup / scale < 1e-12, (seed, sup)


def test_apply_density_trivia():
    env = make_env(seed=418)
    K = flow.evolve_kernel(flow.identity_kernel([0, 1], 0.0, env.params), 2.0, env)
    out = flow.apply_density({0: 1.0}, K)
    assert out.values == K.rows[0]
    mix = flow.apply_density({0: 2.0, 1: 3.0}, K)
    assert mix.mass == pytest.approx(5.0, rel=1e-12)
    with pytest.raises(ValueError, match="no row"):
        flow.apply_density({9: 1.0}, K)


def test_kpoint_single_matches_annealed_walk():
    est = flow.kpoint_kernel(
        (0,), (range(-2, 3),), 1.0, EnvParams(alpha=1.0, seed=419), 20_000, tag=31
    )
    for i, x in enumerate(range(-2, 3)):
        target = POINT_MASS_T1[abs(x)]
        z = (est.est[i] - target) / est.se[i]
        assert abs(z) < 3.0, (x, est.est[i], target, z)


def test_kpoint_two_separated_starts_factorize():
    params = EnvParams(alpha=1.0, seed=420)
    est = flow.kpoint_kernel((0, 14), ((0, 1), (13, 14)), 1.0, params, 20_000, tag=32)
    for i, y1 in enumerate((0, 1)):
        for j, y2 in enumerate((13, 14)):
            target = annealed_point_prob(y1, 1.0) * annealed_point_prob(y2 - 14, 1.0)
            z = (est.est[i, j] - target) / est.se[i, j]
            assert abs(z) < 3.0, (y1, y2, z)


def test_kpoint_two_point_normalization():
    params = EnvParams(alpha=1.0, seed=421)
    grid = range(-26, 27)
    est = flow.kpoint_kernel((0, 0), (grid, grid), 1.0, params, 200, tag=33)
    assert abs(est.total - 1.0) < 1e-9
    assert est.total_se < 1e-10
    assert abs(est.est.sum() - 1.0) < 1e-9


def test_dual_step_laws():
    one = DualConfig(counts={0: 1})
    left = 0
    n = 40_000
    for key in range(n):
        out = flow.dual_step(one, 0, 1.0, key)
        assert out.total == 1
        left += out.count(0)
    se = math.sqrt(0.25 / n)
    assert abs(left / n - 0.5) < 3.0 * se

    two = DualConfig(counts={0: 2})
    freq = [0, 0, 0]
    for key in range(n):
        out = flow.dual_step(two, 0, 1.0, key + 10_000_000)
        freq[out.count(0)] += 1
    se = math.sqrt((1 / 3) * (2 / 3) / n)
    for k in range(3):
        assert abs(freq[k] / n - 1.0 / 3.0) < 3.0 * se, (k, freq)


def test_dual_step_trivia():
    empty = DualConfig(counts={5: 2})
    out = flow.dual_step(empty, 0, 1.0, 7)
    assert out.counts == {5: 2}
    with pytest.raises(ValueError):
        DualConfig(counts={0: -1})
    with pytest.raises(ValueError):
        DualConfig(counts={0: 2}, total=5)


def test_run_dual_conserves_and_replays(monkeypatch):
    env_a = make_env(seed=422)
    xi0 = DualConfig(counts={0: 2, 3: 1})
    out = flow.run_dual(xi0, 3.0, env_a)
    assert out.total == 3
    env_b = make_env(seed=422)
    again = flow.run_dual(xi0, 3.0, env_b)
    assert out.counts == again.counts
    # tiny window forces the enlarge-and-replay path; keyed coins keep it exact
    env_c = make_env(seed=422)
    monkeypatch.setattr(flow, "window_margin", lambda d, rate=1.0: 2)
    tight = flow.run_dual(xi0, 3.0, env_c)
    assert tight.counts == out.counts


def test_mc_dual_sweep_deterministic():
    params = EnvParams(alpha=1.5, seed=423)
    red = lambda xi, wlo: float(sum(i * k for i, k in enumerate(xi)))
    a = flow.mc_dual_sweep(params, 1.0, 400, 41, red, init_counts={0: 2})
    b = flow.mc_dual_sweep(params, 1.0, 400, 41, red, init_counts={0: 2})
    assert np.array_equal(a, b)


def test_duality_empty_dual_config():
    rep = flow.duality_check(
        EnergyConfig(values={0: 2.0}),
        DualConfig(counts={}),
        1.0,
        EnvParams(alpha=1.0, seed=424),
        100,
    )
    assert rep.lhs == rep.rhs == 1.0
    assert rep.lhs_se == rep.rhs_se == 0.0
    assert rep.z == 0.0


def test_duality_weight_values():
    w = flow.duality_weight({0: 2.0, 1: 3.0}, DualConfig(counts={0: 1, 1: 2}), 1.0)
    # 2^1 * G(1)/G(2) * 3^2 * G(1)/G(3) = 2 * 9 / 2 = 9
    assert w == pytest.approx(9.0, rel=1e-12)
    assert flow.duality_weight({}, DualConfig(counts={0: 1}), 1.0) == 0.0


def test_duality_single_particle():
    rep = flow.duality_check(
        EnergyConfig(values={0: 2.0}),
        DualConfig(counts={0: 1}),
        1.0,
        EnvParams(alpha=1.0, seed=425),
        6000,
        base_tag=910,
    )
    exact = 2.0 * POINT_MASS_T1[0]
    assert abs(rep.lhs - exact) < 3.0 * rep.lhs_se
    assert abs(rep.rhs - exact) < 3.0 * rep.rhs_se
    assert abs(rep.z) < 3.0


def test_duality_two_particles():
    rep = flow.duality_check(
        EnergyConfig(values={0: 1.0}),
        DualConfig(counts={0: 2}),
        0.5,
        EnvParams(alpha=1.0, seed=426),
        8000,
        base_tag=920,
    )
    assert abs(rep.z) < 3.0, rep.as_dict()


def test_increment_independence_and_stationarity():
    n = 1200
    f1 = np.empty(n)
    f2 = np.empty(n)
    for k in range(n):
        env = make_env(seed=50_000 + k)
        K01 = flow.evolve_kernel(flow.identity_kernel([0], 0.0, env.params), 1.0, env)
        K12 = flow.evolve_kernel(flow.identity_kernel([0], 1.0, env.params), 2.0, env)
        f1[k] = K01.rows[0].get(0, 0.0)
        f2[k] = K12.rows[0].get(0, 0.0)
    corr = np.corrcoef(f1, f2)[0, 1]
    assert abs(corr) < 3.0 / math.sqrt(n)
    assert spstats.ks_2samp(f1, f2).pvalue > KS_LEVEL
