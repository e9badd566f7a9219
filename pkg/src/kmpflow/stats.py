"""Streaming moment accumulation for Monte-Carlo sweeps.

Batches are folded with the parallel mean/M2 merge rule, so a long run
never subtracts two huge running sums from each other.
"""
from __future__ import annotations

import numpy as np


class RunningMoments:
    """Count, mean and sample variance; batches may be scalars or arrays.

    ``add`` treats axis 0 of its argument as the replica axis.  For a
    single observation (possibly an array statistic) use ``add_one``.
    """

    def __init__(self) -> None:
        self.n = 0
        self.mean = None
        self._m2 = None

    def add(self, batch) -> None:
        batch = np.asarray(batch, dtype=float)
        if batch.ndim == 0:
            batch = batch[None]
        k = batch.shape[0]
        if k == 0:
            return
        bmean = batch.mean(axis=0)
        bm2 = ((batch - bmean) ** 2).sum(axis=0)
        if self.n == 0:
            self.n = k
            self.mean = bmean
            self._m2 = bm2
            return
        delta = bmean - self.mean
        tot = self.n + k
        self.mean = self.mean + delta * (k / tot)
        self._m2 = self._m2 + bm2 + delta * delta * (self.n * k / tot)
        self.n = tot

    def add_one(self, value) -> None:
        self.add(np.asarray(value, dtype=float)[None, ...])

    @property
    def variance(self):
        if self.n < 2:
            return np.full(np.shape(self.mean), np.nan)
        return self._m2 / (self.n - 1)

    @property
    def stderr(self):
        return np.sqrt(self.variance / self.n)


def _product_ks_stat(u: np.ndarray, v: np.ndarray) -> float:
    # sup over sample points of |joint ecdf - u*v|, evaluated at the points
    le_u = u[:, None] <= u[None, :]
    le_v = v[:, None] <= v[None, :]
    joint = np.logical_and(le_u, le_v).mean(axis=0)
    return float(np.max(np.abs(joint - u * v)))


def product_law_ks(x, y, cdf_x, cdf_y, n_cal: int = 200, seed: int = 0) -> dict:
    """Two-sample-free test that (x, y) follows cdf_x (x) cdf_y independently.

    Both coordinates are pushed through their stated marginal cdfs; under the
    null the pair is then an independent uniform pair, so the sup distance of
    the joint ecdf from u*v is distribution free.  The null law of the
    statistic is calibrated by Monte Carlo at the same sample size.
    """
    u = np.asarray(cdf_x(np.asarray(x, dtype=float)))
    v = np.asarray(cdf_y(np.asarray(y, dtype=float)))
    if u.shape != v.shape or u.ndim != 1:
        raise ValueError("x and y must be equal-length 1d samples")
    d_obs = _product_ks_stat(u, v)
    gen = np.random.default_rng(seed)
    n = len(u)
    cal = np.empty(n_cal)
    for k in range(n_cal):
        cal[k] = _product_ks_stat(gen.random(n), gen.random(n))
    p = float((np.count_nonzero(cal >= d_obs) + 1) / (n_cal + 1))
    return {"stat": d_obs, "p_value": p, "n": n, "n_cal": n_cal}
