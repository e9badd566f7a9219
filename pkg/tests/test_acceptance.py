"""Full-scale verification battery: one test per numbered check.

The whole battery shares a single session run (the field dataset alone is
about eight minutes of single-core work, and checks 9 and 10 read the
same replica arrays), so the first test to touch the fixture pays the
cost and the rest assert against cached results.  Every check prints one
pass/fail line into the terminal summary block via conftest.
"""
from __future__ import annotations

import pytest

from kmpflow import acceptance

from conftest import BATTERY_LINES

_CACHE: dict[int, object] = {}


@pytest.fixture(scope="session")
def battery():
    if not _CACHE:
        for res in acceptance.run_all(seed=0, scale=1.0):
            _CACHE[res.index] = res
        for idx in sorted(_CACHE):
            BATTERY_LINES.append(_CACHE[idx].line())
    return _CACHE


def _assert_passed(battery, index):
    res = battery[index]
    assert res.passed, res.line()


def test_01_gamma_noise_limit(battery):
    """gamma_eps^2 within 1% of 1/(4 alpha) with nonincreasing residuals."""
    _assert_passed(battery, 1)


def test_02_gamma_case_constants(battery):
    """Per-gap covariance and normalizer leading orders plus their limits."""
    _assert_passed(battery, 2)


def test_03_gamma_mc_agreement(battery):
    """Monte-Carlo covariance terms within 3 sigma of the exact forms."""
    _assert_passed(battery, 3)


def test_04_conservation_chapman_kolmogorov(battery):
    """Exact mass conservation and kernel semigroup composition."""
    _assert_passed(battery, 4)


def test_05_coupling_identities(battery):
    """Bond-update, brick-wall, and unitary-circuit coupling identities."""
    _assert_passed(battery, 5)


def test_06_product_stationarity(battery):
    """Gamma product laws preserved by one bond update and by segment sweeps."""
    _assert_passed(battery, 6)


def test_07_markov_duality(battery):
    """Energy moments against dual-particle expectations, three configs."""
    _assert_passed(battery, 7)


def test_08_annealed_walk_statistics(battery):
    """Annealed jump MGF, low moments, and environment-driven spread."""
    _assert_passed(battery, 8)


def test_09_field_mean_trend(battery):
    """Field-mean bias against the heat-kernel pairing shrinks over N."""
    _assert_passed(battery, 9)


def test_10_field_variance_she(battery):
    """Field variance at N=256 within the two-point reference band."""
    _assert_passed(battery, 10)


def test_11_haar_beta_law(battery):
    """Unitary-block split fractions follow Uniform and Beta(2,3) laws."""
    _assert_passed(battery, 11)


def test_battery_is_complete(battery):
    assert sorted(battery) == list(range(1, 12))
    assert all(battery[i].index == i for i in battery)
