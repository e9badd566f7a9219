"""Discrete-time cousins of the energy flow: four coupled models.

A walker on Z jumps right with probability B_{n,x} drawn fresh per
(step, site) from Beta(alpha, alpha); its quenched mass obeys

    p_n(x) = p_{n-1}(x-1) B_{n-1,x-1} + p_{n-1}(x+1) (1 - B_{n-1,x+1}),

nonzero only when n and x share parity.  On a segment 0..N the same
recursion runs with lazy reflection at the ends (site 0 steps right with
probability B_{n,0}, otherwise stays; site N steps left with probability
1 - B_{n,N}, otherwise stays) and B_{n,x} ~ Beta(alpha_{x+1}, alpha_x);
that rule conserves mass and makes the product of independent
Gamma(alpha_x + alpha_{x+1}) site marginals exactly stationary via the
Beta-Gamma splitting identity.  A brick-wall energy exchange (active
bonds alternate parity, each active bond splits its energy sum as
(1-B, B)) tracks the walker exactly on shared draws: active bond sums
equal p_n.  Finally a unitary circuit routes per-site amplitude blocks
through Haar matrices; squared block shares reproduce a Beta environment
and per-site squared norms again equal p_n.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .env import TAG_MISC, keyed_generator

_SUM_TOL = 1e-12


# -- infinite-line walk recursion ---------------------------------------

@dataclass
class BetaRwreState:
    """Quenched occupation masses of the walker after n steps."""

    probs: dict[int, float]
    n: int = 0
    parity: int = field(init=False)

    def __post_init__(self) -> None:
        self.parity = self.n & 1
        total = 0.0
        for x, p in self.probs.items():
            if p < 0.0:
                raise ValueError("negative mass")
            if p != 0.0 and (x - self.n) & 1:
                raise ValueError(f"site {x} has the wrong parity for step {self.n}")
            total += p
        if abs(total - 1.0) > _SUM_TOL:
            raise ValueError(f"masses sum to {total}, not 1")


def rwre_delta0() -> BetaRwreState:
    return BetaRwreState(probs={0: 1.0}, n=0)


def rwre_step(state: BetaRwreState, draws: Mapping[int, float]) -> BetaRwreState:
    """One application of the recursion; draws keyed by occupied site."""
    new: dict[int, float] = {}
    for x, p in state.probs.items():
        if p == 0.0:
            continue
        if x not in draws:
            raise ValueError(f"missing draw for occupied site {x}")
        b = float(draws[x])
        if not 0.0 < b < 1.0:
            raise ValueError(f"draw at site {x} outside (0,1)")
        new[x + 1] = new.get(x + 1, 0.0) + p * b
        new[x - 1] = new.get(x - 1, 0.0) + p * (1.0 - b)
    return BetaRwreState(probs=new, n=state.n + 1)


def _line_sweep(rows: np.ndarray, bees: np.ndarray) -> np.ndarray:
    """Vectorized recursion step for (replicas, width) mass rows."""
    new = np.zeros_like(rows)
    new[:, 1:] += rows[:, :-1] * bees[:, :-1]
    new[:, :-1] += rows[:, 1:] * (1.0 - bees[:, 1:])
    return new


def annealed_rwre_pmf(n: int, alpha: float, envs: int, seed: int = 0):
    """Mean and stderr of p_n(x) over independent environments.

    Returns (sites, mean, stderr) for sites -n..n.
    """
    if n < 1 or envs < 2:
        raise ValueError("need n >= 1 and envs >= 2")
    gen = keyed_generator(seed, TAG_MISC, 91)
    width = 2 * n + 1
    rows = np.zeros((envs, width))
    rows[:, n] = 1.0
    for _ in range(n):
        bees = gen.beta(alpha, alpha, size=(envs, width))
        rows = _line_sweep(rows, bees)
    mean = rows.mean(axis=0)
    se = rows.std(axis=0, ddof=1) / math.sqrt(envs)
    return np.arange(-n, n + 1), mean, se


def quenched_origin_variance(n: int, alpha: float, envs: int, seed: int = 0) -> float:
    """Var across environments of p_n(0); positive for n >= 2 (even n)."""
    sites, mean, se = annealed_rwre_pmf(n, alpha, envs, seed=seed)
    return float((se[n] * math.sqrt(envs)) ** 2)


# -- segment with lazy-reflecting ends ----------------------------------

@dataclass(frozen=True)
class SegmentEnv:
    """Sites 0..N with boundary-inclusive shape parameters alpha_0..alpha_{N+1}."""

    N: int
    alphas: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.N < 1:
            raise ValueError("segment needs N >= 1")
        if len(self.alphas) != self.N + 2:
            raise ValueError("need N+2 shape parameters alpha_0..alpha_{N+1}")
        if not all(a > 0.0 for a in self.alphas):
            raise ValueError("shape parameters must be positive")

    def stationary_shapes(self) -> np.ndarray:
        a = np.asarray(self.alphas)
        return a[:-1] + a[1:]

    def draw_bees(self, gen: np.random.Generator, rows: int | None = None) -> np.ndarray:
        """B_{t,x} ~ Beta(alpha_{x+1}, alpha_x) for x = 0..N."""
        a = np.asarray(self.alphas)
        size = (self.N + 1,) if rows is None else (rows, self.N + 1)
        return gen.beta(a[1:], a[:-1], size=size)


def segment_step(probs: np.ndarray, bees: np.ndarray) -> np.ndarray:
    """One sweep of the segment recursion; conserves each row total exactly.

    Interior sites receive right-flow from the left neighbor and left-flow
    from the right neighbor; the would-be off-segment flows at the two ends
    stay in place instead (lazy reflection).
    """
    probs = np.asarray(probs, dtype=float)
    bees = np.asarray(bees, dtype=float)
    if probs.shape != bees.shape:
        raise ValueError("probs and bees must have matching shapes")
    if np.any(probs < 0.0):
        raise ValueError("masses must be nonnegative")
    right = probs * bees
    left = probs * (1.0 - bees)
    new = np.zeros_like(probs)
    new[..., 1:] += right[..., :-1]
    new[..., :-1] += left[..., 1:]
    new[..., 0] += left[..., 0]
    new[..., -1] += right[..., -1]
    return new


def segment_stationary_sample(
    env: SegmentEnv, sweeps: int, replicas: int, seed: int = 0
) -> np.ndarray:
    """Evolve replicas of the unnormalized Gamma-product start; (R, N+1)."""
    gen = keyed_generator(seed, TAG_MISC, 92)
    shapes = env.stationary_shapes()
    rows = gen.gamma(shapes, size=(replicas, env.N + 1))
    for _ in range(sweeps):
        rows = segment_step(rows, env.draw_bees(gen, rows=replicas))
    return rows


def beta_gamma_identity_test(a: float, b: float, samples: int, seed: int = 0) -> dict:
    """Empirical check of the Gamma-splitting identity behind stationarity.

    nu ~ Gamma(a+b) and an independent B ~ Beta(a,b) give nu*B ~ Gamma(a),
    nu*(1-B) ~ Gamma(b), and the two products are independent.
    """
    from scipy import stats as spstats

    if not (a > 0.0 and b > 0.0):
        raise ValueError("shape parameters must be positive")
    gen = keyed_generator(seed, TAG_MISC, 93)
    nu1 = gen.gamma(a + b, size=samples)
    nu2 = gen.gamma(a + b, size=samples)
    b1 = gen.beta(a, b, size=samples)
    b2 = gen.beta(a, b, size=samples)
    xa = nu1 * b1
    yb = nu2 * (1.0 - b2)
    ks_a = spstats.kstest(xa, spstats.gamma(a).cdf)
    ks_b = spstats.kstest(yb, spstats.gamma(b).cdf)
    # joint pair from one (nu, B): independence is the claim under test
    jx = nu1 * b1
    jy = nu1 * (1.0 - b1)
    rho = spstats.spearmanr(jx, jy)
    rank_z = float(rho.statistic * math.sqrt(samples - 1))
    mean_a = float(xa.mean())
    mean_a_se = float(xa.std(ddof=1) / math.sqrt(samples))
    from .stats import product_law_ks

    sub = slice(0, min(samples, 1000))
    joint = product_law_ks(
        jx[sub], jy[sub], spstats.gamma(a).cdf, spstats.gamma(b).cdf, seed=seed + 1
    )
    return {
        "a": a,
        "b": b,
        "samples": samples,
        "ks_p_gamma_a": float(ks_a.pvalue),
        "ks_p_gamma_b": float(ks_b.pvalue),
        "rank_corr": float(rho.statistic),
        "rank_corr_z": rank_z,
        "mean_a": mean_a,
        "mean_a_z": (mean_a - a) / mean_a_se,
        "joint_ks_stat": joint["stat"],
        "joint_ks_p": joint["p_value"],
    }


# -- brick-wall energy exchange -----------------------------------------

@dataclass
class BrickWallState:
    """Energies on a site window; bonds (x, x+1) with x = n (mod 2) are active."""

    energies: np.ndarray
    wlo: int
    n: int = 0

    def __post_init__(self) -> None:
        self.energies = np.asarray(self.energies, dtype=float)
        if np.any(self.energies < 0.0):
            raise ValueError("energies must be nonnegative")

    @property
    def active_parity(self) -> int:
        return self.n & 1

    def site_index(self, x: int) -> int:
        return x - self.wlo

    def total(self) -> float:
        return float(self.energies.sum())


def brickwall_step(state: BrickWallState, bees: Mapping[int, float]) -> BrickWallState:
    """Split each active bond's energy sum as (1-B, B); draws keyed by left site."""
    e = state.energies.copy()
    whi = state.wlo + len(e) - 1
    x0 = state.wlo if (state.wlo - state.n) % 2 == 0 else state.wlo + 1
    for x in range(x0, whi, 2):
        i = x - state.wlo
        s = e[i] + e[i + 1]
        if s == 0.0:
            continue
        if x not in bees:
            raise ValueError(f"missing draw for active bond at {x}")
        b = float(bees[x])
        if not 0.0 < b < 1.0:
            raise ValueError(f"draw at bond {x} outside (0,1)")
        e[i] = (1.0 - b) * s
        e[i + 1] = b * s
    return BrickWallState(energies=e, wlo=state.wlo, n=state.n + 1)


@dataclass
class CouplingReport:
    steps: int
    sup_site: float
    sup_bond: float
    per_step: list  # dicts with n, site_gap, bond_gap


def brickwall_coupling_run(
    steps: int, alpha: float, seed: int = 0, split: float = 0.35
) -> CouplingReport:
    """Drive brick-wall and walker recursion on shared draws; report gaps.

    Start: walker mass 1 at the origin; the active origin bond carries the
    same total split (split, 1-split) across its two sites.  Thereafter the
    bond sums must reproduce p_n and each site must match the one-step
    transfer formulas, up to float accumulation only.
    """
    if not 0.0 <= split <= 1.0:
        raise ValueError("split must lie in [0,1]")
    gen = keyed_generator(seed, TAG_MISC, 94)
    wlo = -(steps + 4)
    width = 2 * (steps + 4) + 2
    probs = np.zeros(width)
    probs[-wlo] = 1.0
    e = np.zeros(width)
    e[-wlo] = split
    e[-wlo + 1] = 1.0 - split
    bw = BrickWallState(energies=e, wlo=wlo, n=0)
    per_step = []
    sup_site = 0.0
    sup_bond = 0.0
    for n in range(steps):
        x0 = wlo if (wlo - n) % 2 == 0 else wlo + 1
        actives = list(range(x0, wlo + width - 1, 2))
        draws = {x: gen.beta(alpha, alpha) for x in actives}
        bw = brickwall_step(bw, draws)
        brow = np.zeros(width)
        for x, bv in draws.items():
            brow[x - wlo] = bv
        new = np.zeros(width)
        new[1:] += probs[:-1] * brow[:-1]
        new[:-1] += probs[1:] * (1.0 - brow[1:])
        # site-level identities at time n+1
        site_gap = 0.0
        for x in actives:
            i = x - wlo
            got = bw.energies[i + 1]
            want = brow[i] * probs[i]
            site_gap = max(site_gap, abs(got - want))
            got_stay = bw.energies[i]
            want_stay = (1.0 - brow[i]) * probs[i]
            site_gap = max(site_gap, abs(got_stay - want_stay))
        probs = new
        # bond sums at the new active parity equal p_{n+1}
        x1 = wlo if (wlo - (n + 1)) % 2 == 0 else wlo + 1
        bond_gap = 0.0
        for x in range(x1, wlo + width - 1, 2):
            i = x - wlo
            bond_gap = max(bond_gap, abs(bw.energies[i] + bw.energies[i + 1] - probs[i]))
        sup_site = max(sup_site, site_gap)
        sup_bond = max(sup_bond, bond_gap)
        per_step.append({"n": n + 1, "site_gap": site_gap, "bond_gap": bond_gap})
    return CouplingReport(steps=steps, sup_site=sup_site, sup_bond=sup_bond, per_step=per_step)


# -- Haar-unitary wave circuit ------------------------------------------

@dataclass
class WaveState:
    """Per-site amplitude blocks; right block routes to x+1, left to x-1."""

    right: np.ndarray  # (width, N) complex
    left: np.ndarray  # (width, M) complex
    wlo: int
    n: int = 0

    def __post_init__(self) -> None:
        self.right = np.asarray(self.right, dtype=complex)
        self.left = np.asarray(self.left, dtype=complex)
        if self.right.ndim != 2 or self.left.ndim != 2:
            raise ValueError("amplitude blocks must be (width, dim) arrays")
        if self.right.shape[0] != self.left.shape[0]:
            raise ValueError("blocks must cover the same site window")

    @property
    def dims(self) -> tuple[int, int]:
        return self.right.shape[1], self.left.shape[1]

    def site_norm_sq(self) -> np.ndarray:
        return (np.abs(self.right) ** 2).sum(axis=1) + (np.abs(self.left) ** 2).sum(axis=1)

    def total_norm_sq(self) -> float:
        return float(self.site_norm_sq().sum())


def haar_unitaries(gen: np.random.Generator, count: int, dim: int) -> np.ndarray:
    """Batch of Haar matrices via complex-Gaussian QR with phase fix.

    A draw failing the unitarity check (or a degenerate QR diagonal) is
    rejected and re-drawn.
    """
    out = np.empty((count, dim, dim), dtype=complex)
    todo = count
    filled = 0
    while todo > 0:
        z = (gen.standard_normal((todo, dim, dim)) + 1j * gen.standard_normal((todo, dim, dim))) / math.sqrt(2)
        q, r = np.linalg.qr(z)
        d = np.diagonal(r, axis1=-2, axis2=-1)
        mag = np.abs(d)
        ok = np.all(mag > 1e-12, axis=-1)
        phases = np.where(mag > 0, d / np.where(mag > 0, mag, 1.0), 1.0)
        u = q * phases[:, None, :]
        gram = np.einsum("kij,kil->kjl", u.conj(), u)
        eye = np.eye(dim)
        ok &= np.max(np.abs(gram - eye), axis=(-2, -1)) < 1e-10
        good = np.count_nonzero(ok)
        out[filled : filled + good] = u[ok]
        filled += good
        todo -= good
    return out


def haar_step(state: WaveState, unitaries: Mapping[int, np.ndarray]) -> WaveState:
    """Route each occupied site's blocks through its unitary to the neighbors."""
    N, M = state.dims
    dim = N + M
    width = state.right.shape[0]
    nr = np.zeros_like(state.right)
    nl = np.zeros_like(state.left)
    occ = state.site_norm_sq() > 0.0
    for i in np.nonzero(occ)[0]:
        x = state.wlo + i
        if x not in unitaries:
            raise ValueError(f"missing unitary for occupied site {x}")
        u = np.asarray(unitaries[x])
        if u.shape != (dim, dim):
            raise ValueError(f"unitary at {x} has wrong shape")
        vec = np.concatenate([state.right[i], state.left[i]])
        outv = u @ vec
        if i + 1 < width:
            nr[i + 1] = outv[:N]
        elif np.any(np.abs(outv[:N]) > 0):
            raise ValueError("amplitude escaped the window on the right")
        if i - 1 >= 0:
            nl[i - 1] = outv[N:]
        elif np.any(np.abs(outv[N:]) > 0):
            raise ValueError("amplitude escaped the window on the left")
    return WaveState(right=nr, left=nl, wlo=state.wlo, n=state.n + 1)


def haar_bees(state: WaveState, unitaries: Mapping[int, np.ndarray]) -> dict[int, float]:
    """Right-routed squared-norm share per site for the given draws.

    At occupied sites this is the realized routing share of the in-state;
    at empty sites the first Haar column stands in (same law, and the value
    multiplies zero mass in any coupling).
    """
    N, M = state.dims
    norms = state.site_norm_sq()
    bees: dict[int, float] = {}
    for x, u in unitaries.items():
        u = np.asarray(unitaries[x])
        i = x - state.wlo
        if 0 <= i < len(norms) and norms[i] > 0.0:
            vec = np.concatenate([state.right[i], state.left[i]]) / math.sqrt(norms[i])
            outv = u @ vec
            bees[x] = float((np.abs(outv[:N]) ** 2).sum())
        else:
            bees[x] = float((np.abs(u[:N, 0]) ** 2).sum())
    return bees


def haar_split_samples(dims: tuple[int, int], count: int, seed: int = 0) -> np.ndarray:
    """Environment samples B = right-block share of a Haar frame column."""
    N, M = dims
    gen = keyed_generator(seed, TAG_MISC, 95)
    us = haar_unitaries(gen, count, N + M)
    return (np.abs(us[:, :N, 0]) ** 2).sum(axis=1)


def wave_walk_coupling(steps: int, seed: int = 0, dims: tuple[int, int] = (1, 1)) -> dict:
    """Evolve circuit and walker on the extracted environment; report sup gap."""
    N, M = dims
    gen = keyed_generator(seed, TAG_MISC, 96)
    wlo = -(steps + 2)
    width = 2 * (steps + 2) + 1
    right = np.zeros((width, N), dtype=complex)
    left = np.zeros((width, M), dtype=complex)
    # unit-norm start split across both blocks, generic phases
    v = gen.standard_normal(N + M) + 1j * gen.standard_normal(N + M)
    v /= np.linalg.norm(v)
    right[-wlo] = v[:N]
    left[-wlo] = v[N:]
    state = WaveState(right=right, left=left, wlo=wlo, n=0)
    probs = np.zeros(width)
    probs[-wlo] = 1.0
    gaps = [0.0]
    for _ in range(steps):
        occ = np.nonzero(state.site_norm_sq() > 0.0)[0]
        us = haar_unitaries(gen, len(occ), N + M)
        table = {int(state.wlo + i): us[k] for k, i in enumerate(occ)}
        bees = haar_bees(state, table)
        state = haar_step(state, table)
        brow = np.zeros(width)
        for x, bv in bees.items():
            brow[x - wlo] = bv
        new = np.zeros(width)
        new[1:] += probs[:-1] * brow[:-1]
        new[:-1] += probs[1:] * (1.0 - brow[1:])
        probs = new
        gaps.append(float(np.max(np.abs(state.site_norm_sq() - probs))))
    return {
        "steps": steps,
        "dims": dims,
        "max_gap": max(gaps),
        "per_step": gaps,
    }
