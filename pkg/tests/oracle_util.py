"""Shared oracle values and helpers for the test suite.

The annealed one-point law of the mean dynamics is a rate-1 continuous
time simple random walk: P(X(t) = x) = exp(-t) I_|x|(t).  The modified
Bessel function is recomputed here from its power series so tests do not
depend on the implementation under test.
"""
from __future__ import annotations

import math

KS_LEVEL = 0.01


def bessel_i(nu: int, t: float, terms: int = 40) -> float:
    acc = 0.0
    for k in range(terms):
        acc += (t / 2.0) ** (2 * k + nu) / (math.factorial(k) * math.factorial(k + nu))
    return acc


def annealed_point_prob(x: int, t: float) -> float:
    return math.exp(-t) * bessel_i(abs(x), t)


# frozen from the series above at t = 1
POINT_MASS_T1 = {0: 0.4657596076, 1: 0.2079104154, 2: 0.0499387768}
