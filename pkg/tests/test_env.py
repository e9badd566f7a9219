"""Environment service: keyed determinism, laziness, and draw laws."""
import math

import numpy as np
import pytest
import scipy.stats as st
from hypothesis import given, settings, strategies as hst

from kmpflow.env import (
    BondEvent,
    EnvParams,
    Environment,
    chunk_generator,
    derive_key,
    keyed_generator,
    poisson_event_lists,
)

KS_LEVEL = 0.01


def make_env(alpha=1.0, seed=20260823, rate=1.0):
    return Environment(EnvParams(alpha=alpha, seed=seed, rate=rate))


# -- laws ---------------------------------------------------------------


def test_event_counts_match_poisson_moments():
    # horizon 10, unit rate: counts are Poisson(10) iid across bonds
    env = make_env(seed=101)
    horizon = 10.0
    n_bonds = 100_000
    counts = np.empty(n_bonds)
    for b in range(n_bonds):
        times, _ = env.bond_arrays(b, horizon)
        counts[b] = np.searchsorted(times, horizon, side="right")
    lam = horizon
    assert abs(counts.mean() - lam) < 0.1
    # Var(sample variance) ~ (mu4 - sigma^4)/n with mu4 = lam(1+3lam)
    sd_var = math.sqrt((lam * (1 + 3 * lam) - lam**2) / n_bonds)
    assert abs(counts.var(ddof=1) - lam) < 3.2 * sd_var


def test_disjoint_intervals_give_independent_stationary_counts():
    env = make_env(seed=102)
    n_bonds = 20_000
    early = np.empty(n_bonds)
    late = np.empty(n_bonds)
    for b in range(n_bonds):
        early[b] = len(env.events_in(b, 0.0, 3.0))
        late[b] = len(env.events_in(b, 4.0, 7.0))
    r = np.corrcoef(early, late)[0, 1]
    assert abs(r) < 3.0 / math.sqrt(n_bonds)
    # same-length windows share one law (time stationarity of increments)
    assert st.ks_2samp(early, late).pvalue > KS_LEVEL


@pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0])
def test_splits_match_beta_moments(alpha):
    env = make_env(alpha=alpha, seed=103)
    vals = []
    for b in range(1600):
        _, splits = env.bond_arrays(b, 0.1)
        vals.append(splits[:64])
    x = np.concatenate(vals)
    n = len(x)
    assert n >= 100_000
    var_true = 1.0 / (4.0 * (2.0 * alpha + 1.0))
    assert abs(x.mean() - 0.5) < 3.0 * math.sqrt(var_true / n)
    mu4 = st.beta(alpha, alpha).moment(4) - 4 * 0.5 * st.beta(alpha, alpha).moment(3) \
        + 6 * 0.25 * st.beta(alpha, alpha).moment(2) - 3 * 0.5**4
    sd_var = math.sqrt((mu4 - var_true**2) / n)
    assert abs(x.var(ddof=1) - var_true) < 3.2 * sd_var


@pytest.mark.parametrize("alpha", [1.0, 2.0])
def test_splits_pass_ks_against_beta(alpha):
    env = make_env(alpha=alpha, seed=104)
    vals = []
    for b in range(200):
        _, splits = env.bond_arrays(b, 0.1)
        vals.append(splits[:64])
    x = np.concatenate(vals)
    assert st.kstest(x, st.beta(alpha, alpha).cdf).pvalue > KS_LEVEL


def test_gamma_draws_shape_one_are_exponential():
    env = make_env(alpha=1.0, seed=105)
    x = env.sample_gamma(1.0, key=(7,), size=50_000)
    assert st.kstest(x, st.expon.cdf).pvalue > KS_LEVEL
    assert abs(x.mean() - 1.0) < 3.0 / math.sqrt(len(x))


def test_gamma_draws_match_shape_mean():
    env = make_env(alpha=1.0, seed=106)
    for shape in (0.5, 2.5):
        x = env.sample_gamma(shape, key=(int(10 * shape),), size=50_000)
        assert abs(x.mean() - shape) < 3.0 * math.sqrt(shape / len(x))
        assert st.kstest(x, st.gamma(shape).cdf).pvalue > KS_LEVEL


# -- determinism and laziness ------------------------------------------


def test_identical_params_are_bitwise_identical():
    a = make_env(seed=107)
    b = make_env(seed=107)
    for bond in (-3, 0, 11):
        ta, sa = a.bond_arrays(bond, 20.0)
        tb, sb = b.bond_arrays(bond, 20.0)
        assert np.array_equal(ta, tb) and np.array_equal(sa, sb)


def test_different_seeds_differ():
    a = make_env(seed=108)
    b = make_env(seed=109)
    ta, _ = a.bond_arrays(0, 10.0)
    tb, _ = b.bond_arrays(0, 10.0)
    assert not np.array_equal(ta[:5], tb[:5])


def test_extension_preserves_prefix_and_query_order_is_irrelevant():
    a = make_env(seed=110)
    short = a.events_in(4, 0.0, 2.0)
    long = a.events_in(4, 0.0, 40.0)
    assert long[: len(short)] == short

    b = make_env(seed=110)
    b.bond_arrays(9, 5.0)       # touch another bond first
    b.bond_arrays(4, 33.0)
    assert b.events_in(4, 0.0, 40.0) == long


def test_negative_bonds_have_their_own_streams():
    env = make_env(seed=111)
    tm, _ = env.bond_arrays(-1, 10.0)
    tp, _ = env.bond_arrays(1, 10.0)
    assert not np.array_equal(tm[:4], tp[:4])
    assert not np.array_equal(derive_key(1, 1, -1), derive_key(1, 1, 1))


def test_sample_beta_agrees_with_event_stream_and_is_pure():
    env = make_env(seed=112)
    events = env.events_in(6, 0.0, 10.0)
    for e in events[:5]:
        assert env.sample_beta((6, e.index)) == e.split
    # purity: value available before any events_in call on a fresh env
    fresh = make_env(seed=112)
    assert fresh.sample_beta((6, 2)) == events[2].split


def test_events_in_window_semantics():
    env = make_env(seed=113)
    full = env.events_in(0, 0.0, 20.0)
    assert all(0.0 < e.time <= 20.0 for e in full)
    times = [e.time for e in full]
    assert times == sorted(times) and len(set(times)) == len(times)
    assert [e.index for e in full] == list(range(len(full)))
    # half-open on the left: an event at exactly t0 is excluded
    t_first = full[0].time
    assert env.events_in(0, t_first, 20.0) == full[1:]


@settings(max_examples=40, deadline=None)
@given(
    cut=hst.floats(min_value=0.01, max_value=7.99, allow_nan=False),
    seed=hst.integers(min_value=0, max_value=2**32),
)
def test_window_partition_concatenates(cut, seed):
    env = make_env(seed=seed)
    full = env.events_in(2, 0.0, 8.0)
    assert env.events_in(2, 0.0, cut) + env.events_in(2, cut, 8.0) == full


def test_invalid_params_rejected():
    with pytest.raises(ValueError):
        EnvParams(alpha=0.0, seed=1)
    with pytest.raises(ValueError):
        EnvParams(alpha=1.0, seed=1, rate=-2.0)
    with pytest.raises(ValueError):
        EnvParams(alpha=float("nan"), seed=1)
    env = make_env()
    with pytest.raises(ValueError):
        env.events_in(0, 3.0, 1.0)
    with pytest.raises(ValueError):
        env.sample_beta((0, -1))


def test_rate_scales_event_counts():
    env = make_env(seed=114, rate=4.0)
    counts = [len(env.events_in(b, 0.0, 5.0)) for b in range(3000)]
    mean = float(np.mean(counts))
    assert abs(mean - 20.0) < 3.0 * math.sqrt(20.0 / 3000)


# -- bulk chunk sampling ------------------------------------------------


def test_chunk_sampler_is_deterministic_and_sorted():
    params = EnvParams(alpha=1.0, seed=115)
    gen1 = chunk_generator(params, tag=9, chunk_index=3)
    gen2 = chunk_generator(params, tag=9, chunk_index=3)
    lists1 = poisson_event_lists(gen1, params.alpha, n_bonds=5, t1=2.0, n_replicas=8)
    lists2 = poisson_event_lists(gen2, params.alpha, n_bonds=5, t1=2.0, n_replicas=8)
    for (b1, s1, t1_), (b2, s2, t2_) in zip(lists1, lists2):
        assert b1 == b2 and s1 == s2 and np.array_equal(t1_, t2_)
        assert np.all(np.diff(t1_) >= 0)
        assert all(0 <= b < 5 for b in b1)
        assert all(0.0 < s < 1.0 for s in s1)


def test_chunk_sampler_law():
    params = EnvParams(alpha=2.0, seed=116)
    gen = chunk_generator(params, tag=1, chunk_index=0)
    lists = poisson_event_lists(gen, params.alpha, n_bonds=40, t1=3.0, n_replicas=500)
    counts = np.array([len(b) for b, _, _ in lists], dtype=float)
    lam = 40 * 3.0
    assert abs(counts.mean() - lam) < 3.0 * math.sqrt(lam / len(counts))
    splits = np.concatenate([np.asarray(s) for _, s, _ in lists])
    assert st.kstest(splits, st.beta(2.0, 2.0).cdf).pvalue > KS_LEVEL


def test_keyed_generator_reproducible():
    a = keyed_generator(1, 2, 3, -4).standard_normal(4)
    b = keyed_generator(1, 2, 3, -4).standard_normal(4)
    c = keyed_generator(1, 2, 3, 4).standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
