"""Stochastic flow of quenched random-walk kernels and the particle dual.

A :class:`KernelMatrix` holds probability rows K_{s,t}(y, .) driven by one
shared environment; rows evolve by the same bond update as the energy
process (new row(x) = B*(row(x)+row(x+1)), new row(x+1) = (1-B)*(...)),
through the same code path, so the point-mass coupling is bitwise.

The dual dynamics replaces the deterministic split by a BetaBinomial
redistribution of the particle counts on the ringing bond, sampled as
Binomial(n, B) with the environment's own split B; the coin for event
(bond, index) comes from its own keyed stream so replays and window
enlargements are exact.

Markov duality identity checked here:

    E_KMP[ D(eta(t), xi(0)) ] = E_dual[ D(eta(0), xi(t)) ]

with D(eta, xi) = prod_x eta(x)^xi(x) * Gamma(a) / Gamma(a + xi(x)).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .env import (
    TAG_DUAL,
    EnvParams,
    Environment,
    chunk_generator,
    keyed_generator,
    poisson_event_lists,
)
from .kmp import (
    EnergyConfig,
    drive_vectors,
    mc_multi_sweep,
    mc_single_sweep,
    window_margin,
)


@dataclass
class KernelMatrix:
    """Probability rows K_{s,t}(y, .) over an interval [s, t]."""

    rows: dict[int, dict[int, float]]
    s: float
    t: float
    params: EnvParams
    pruned_mass: float = 0.0

    def row(self, y: int) -> dict[int, float]:
        return self.rows[y]

    def prob(self, y: int, x: int) -> float:
        return self.rows[y].get(x, 0.0)

    def max_row_sum_error(self) -> float:
        errs = [abs(math.fsum(r.values()) - 1.0) for r in self.rows.values()]
        return max(errs) if errs else 0.0


@dataclass
class DualConfig:
    """Nonnegative integer particle counts over sites."""

    counts: dict[int, int]
    total: int = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.counts = {int(x): int(k) for x, k in self.counts.items() if k != 0}
        for x, k in self.counts.items():
            if k < 0:
                raise ValueError(f"negative particle count at site {x}")
        tot = sum(self.counts.values())
        if self.total is None:
            self.total = tot
        elif self.total != tot:
            raise ValueError(f"total {self.total} does not match counts sum {tot}")

    def count(self, x: int) -> int:
        return self.counts.get(x, 0)


def identity_kernel(starts, t: float, params: EnvParams) -> KernelMatrix:
    """K_{t,t} = identity on the given start sites."""
    rows = {int(y): {int(y): 1.0} for y in starts}
    return KernelMatrix(rows=rows, s=float(t), t=float(t), params=params)


def evolve_kernel(K: KernelMatrix, u: float, env: Environment) -> KernelMatrix:
    """Evolve every row of K from K.t to u under the shared environment."""
    if env.params != K.params:
        raise ValueError("kernel and environment disagree on parameters")
    if u < K.t:
        raise ValueError(f"cannot evolve backwards: {u} < {K.t}")
    if u == K.t:
        return KernelMatrix(
            rows={y: dict(r) for y, r in K.rows.items()},
            s=K.s,
            t=K.t,
            params=K.params,
            pruned_mass=K.pruned_mass,
        )
    starts = sorted(K.rows)
    res = drive_vectors(env, [K.rows[y] for y in starts], K.t, u)
    rows = {y: res.vectors[i] for i, y in enumerate(starts)}
    return KernelMatrix(
        rows=rows,
        s=K.s,
        t=float(u),
        params=K.params,
        pruned_mass=K.pruned_mass + res.pruned_mass,
    )


def compose(K1: KernelMatrix, K2: KernelMatrix) -> KernelMatrix:
    """(K1 o K2)(y, x) = sum_z K1(y, z) K2(z, x) over [K1.s, K2.t]."""
    if K1.params != K2.params:
        raise ValueError("cannot compose kernels from different environments")
    if K1.t != K2.s:
        raise ValueError(f"interval mismatch: [{K1.s},{K1.t}] then [{K2.s},{K2.t}]")
    rows: dict[int, dict[int, float]] = {}
    for y, row1 in K1.rows.items():
        acc: dict[int, float] = {}
        for z, w in row1.items():
            row2 = K2.rows.get(z)
            if row2 is None:
                raise ValueError(f"second kernel is missing the row at site {z}")
            for x, p in row2.items():
                acc[x] = acc.get(x, 0.0) + w * p
        rows[y] = acc
    return KernelMatrix(
        rows=rows,
        s=K1.s,
        t=K2.t,
        params=K1.params,
        pruned_mass=K1.pruned_mass + K2.pruned_mass,
    )


def apply_density(rho0: dict[int, float], K: KernelMatrix) -> EnergyConfig:
    """rho_t(x) = sum_y rho0(y) K(y, x); needs a row for every support site."""
    acc: dict[int, float] = {}
    for y, w in rho0.items():
        if w == 0.0:
            continue
        row = K.rows.get(y)
        if row is None:
            raise ValueError(f"kernel has no row at site {y}")
        for x, p in row.items():
            acc[x] = acc.get(x, 0.0) + w * p
    return EnergyConfig(values=acc, time=K.t)


# -- k-point annealed kernel -------------------------------------------


@dataclass
class KPointEstimate:
    starts: tuple[int, ...]
    grids: tuple[tuple[int, ...], ...]
    t: float
    n_replicas: int
    est: np.ndarray
    se: np.ndarray
    total: float
    total_se: float


def kpoint_kernel(
    starts,
    targets,
    t: float,
    params: EnvParams,
    n_replicas: int,
    tag: int = 21,
) -> KPointEstimate:
    """Monte-Carlo estimate of E[K_t(x1,y1) ... K_t(xk,yk)] over environments.

    ``targets`` gives one entry per start: either a single site or a grid of
    sites; the estimate is returned on the product grid with entrywise
    standard errors.  ``total`` is the per-replica product of in-grid row
    masses (equal to 1 when the grids cover the light cone).
    """
    starts = tuple(int(x) for x in starts)
    if len(starts) != len(targets):
        raise ValueError("need one target spec per start")
    grids = []
    for g in targets:
        if isinstance(g, (int, np.integer)):
            grids.append((int(g),))
        else:
            grids.append(tuple(int(y) for y in g))
    grids = tuple(grids)
    shape = tuple(len(g) for g in grids)
    k = len(starts)

    state = {
        "n": 0,
        "mean": np.zeros(shape),
        "m2": np.zeros(shape),
        "tmean": 0.0,
        "tm2": 0.0,
    }
    extra = tuple(y for g in grids for y in g)

    def reduce_fn(rows, wlo):
        vecs = []
        for row, grid in zip(rows, grids):
            arr = np.asarray(row)
            idx = np.asarray(grid, dtype=np.int64) - wlo
            vecs.append(arr[idx])
        prod = vecs[0]
        for v in vecs[1:]:
            prod = np.multiply.outer(prod, v)
        state["n"] += 1
        n = state["n"]
        delta = prod - state["mean"]
        state["mean"] += delta / n
        state["m2"] += delta * (prod - state["mean"])
        tot = 1.0
        for v in vecs:
            tot *= v.sum()
        td = tot - state["tmean"]
        state["tmean"] += td / n
        state["tm2"] += td * (tot - state["tmean"])
        return None

    mc_multi_sweep(
        params,
        t,
        n_replicas,
        tag,
        reduce_fn,
        inits=[{x: 1.0} for x in starts],
        extra_sites=extra,
    )
    n = state["n"]
    se = np.sqrt(state["m2"] / (n - 1) / n) if n > 1 else np.full(shape, np.nan)
    total_se = math.sqrt(state["tm2"] / (n - 1) / n) if n > 1 else float("nan")
    return KPointEstimate(
        starts=starts,
        grids=grids,
        t=float(t),
        n_replicas=n,
        est=state["mean"],
        se=se,
        total=state["tmean"],
        total_se=total_se,
    )


# -- dual dynamics ------------------------------------------------------


def dual_step(xi: DualConfig, bond: int, alpha: float, key) -> DualConfig:
    """Redistribute the particles on (bond, bond+1) by BetaBinomial(n, a, a).

    ``key`` is either an integer stream key or a ready Generator.
    """
    n = xi.count(bond) + xi.count(bond + 1)
    if n == 0:
        return DualConfig(counts=dict(xi.counts))
    gen = key if isinstance(key, np.random.Generator) else keyed_generator(
        int(key), TAG_DUAL, bond
    )
    b = float(gen.beta(alpha, alpha))
    r = int(gen.binomial(n, b))
    counts = dict(xi.counts)
    counts.pop(bond, None)
    counts.pop(bond + 1, None)
    if r:
        counts[bond] = r
    if n - r:
        counts[bond + 1] = n - r
    return DualConfig(counts=counts)


def run_dual(xi0: DualConfig, T: float, env: Environment, t0: float = 0.0) -> DualConfig:
    """Evolve the dual particle configuration over (t0, T] on ``env``.

    Uses the environment's bond events; each event's Binomial coin comes
    from the keyed per-(bond, index) stream, so the result is independent
    of the window size and of any replay.
    """
    if not (T > t0):
        if T == t0:
            return DualConfig(counts=dict(xi0.counts))
        raise ValueError(f"need T >= t0, got ({t0}, {T})")
    if not xi0.counts:
        return DualConfig(counts={})
    slo, shi = min(xi0.counts), max(xi0.counts)
    # an exposed particle feels at most two bond clocks
    margin = window_margin(2.0 * env.params.rate * (T - t0))
    while True:
        wlo = slo - margin
        whi = shi + margin
        width = whi - wlo + 1
        xi = [0] * width
        for x, k in xi0.counts.items():
            xi[x - wlo] = k
        merged = []
        for bond in range(wlo, whi):
            times, splits = env.bond_arrays(bond, T)
            lo = int(np.searchsorted(times, t0, side="right"))
            hi = int(np.searchsorted(times, T, side="right"))
            for j in range(lo, hi):
                merged.append((times[j], bond, j, splits[j]))
        merged.sort()
        lo_edge, hi_edge = 1, width - 2
        cur_lo, cur_hi = slo - wlo, shi - wlo
        escaped = False
        for _t, bond, idx, b in merged:
            i = bond - wlo
            n = xi[i] + xi[i + 1]
            if n == 0:
                continue
            coin = env.dual_coin_generator(bond, idx)
            r = int(coin.binomial(n, b))
            xi[i] = r
            xi[i + 1] = n - r
            if i < cur_lo:
                cur_lo = i
                if cur_lo <= lo_edge:
                    escaped = True
                    break
            elif i + 1 > cur_hi:
                cur_hi = i + 1
                if cur_hi >= hi_edge:
                    escaped = True
                    break
        if escaped:
            margin *= 2
            continue
        return DualConfig(
            counts={x + wlo: k for x, k in enumerate(xi) if k != 0}
        )


def mc_dual_sweep(
    params: EnvParams,
    t: float,
    n_replicas: int,
    tag: int,
    reduce_fn,
    *,
    init_counts: dict[int, int],
    chunk_size: int | None = None,
):
    """Dual-dynamics replica sweep over independent environments.

    ``reduce_fn(xi_window_list, wlo) -> value``.  Bond events come from the
    chunk's stream 0, Binomial coins from stream 1, so the two are
    independent and the layout is worker-free deterministic.
    """
    if not init_counts:
        raise ValueError("dual sweep needs at least one particle")
    slo, shi = min(init_counts), max(init_counts)
    margin = window_margin(2.0 * params.rate * t)
    wlo = slo - margin
    whi = shi + margin
    width = whi - wlo + 1
    nb = width - 1
    if chunk_size is None:
        per_replica = max(1.0, nb * params.rate * t)
        chunk_size = max(1, min(2048, int(2.0e6 / per_replica)))
    base = [0] * width
    for x, k in init_counts.items():
        base[x - wlo] = int(k)
    out = []
    n_chunks = (n_replicas + chunk_size - 1) // chunk_size
    for c in range(n_chunks):
        n_here = min(chunk_size, n_replicas - c * chunk_size)
        gen = chunk_generator(params, tag, c)
        coins = chunk_generator(params, tag, c, stream=1)
        binomial = coins.binomial
        events = poisson_event_lists(gen, params.alpha, nb, t, n_here, params.rate)
        for bonds, splits, _times in events:
            xi = list(base)
            lo_c, hi_c = slo - wlo, shi - wlo
            for i, b in zip(bonds, splits):
                n = xi[i] + xi[i + 1]
                if n == 0:
                    continue
                r = int(binomial(n, b))
                xi[i] = r
                xi[i + 1] = n - r
                if i < lo_c:
                    lo_c = i
                    if lo_c <= 1:
                        raise RuntimeError("dual support reached the window edge")
                elif i + 1 > hi_c:
                    hi_c = i + 1
                    if hi_c >= width - 2:
                        raise RuntimeError("dual support reached the window edge")
            out.append(reduce_fn(xi, wlo))
    return np.asarray(out)


# -- duality ------------------------------------------------------------


def duality_weight(eta, xi: DualConfig, alpha: float) -> float:
    """D(eta, xi) = prod_x eta(x)^xi(x) Gamma(a)/Gamma(a + xi(x))."""
    vals = eta.values if isinstance(eta, EnergyConfig) else eta
    w = 1.0
    lg = math.lgamma(alpha)
    for x, k in xi.counts.items():
        w *= vals.get(x, 0.0) ** k * math.exp(lg - math.lgamma(alpha + k))
    return w


@dataclass
class DualityReport:
    eta0: dict[int, float]
    xi0: dict[int, int]
    t: float
    alpha: float
    n_replicas: int
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float

    @property
    def z(self) -> float:
        spread = math.hypot(self.lhs_se, self.rhs_se)
        if spread == 0.0:
            return 0.0 if self.lhs == self.rhs else math.inf
        return (self.lhs - self.rhs) / spread

    def as_dict(self) -> dict:
        return {
            "eta0": {str(k): v for k, v in sorted(self.eta0.items())},
            "xi0": {str(k): v for k, v in sorted(self.xi0.items())},
            "t": self.t,
            "alpha": self.alpha,
            "replicas": self.n_replicas,
            "lhs": self.lhs,
            "lhs_stderr": self.lhs_se,
            "rhs": self.rhs,
            "rhs_stderr": self.rhs_se,
            "z": self.z,
        }


def duality_check(
    eta0: EnergyConfig,
    xi0: DualConfig,
    t: float,
    params: EnvParams,
    n_replicas: int,
    base_tag: int = 900,
) -> DualityReport:
    """Monte-Carlo check of the duality identity; both sides at equal size."""
    alpha = params.alpha
    if not xi0.counts:
        return DualityReport(
            eta0=dict(eta0.values),
            xi0={},
            t=t,
            alpha=alpha,
            n_replicas=n_replicas,
            lhs=1.0,
            lhs_se=0.0,
            rhs=1.0,
            rhs_se=0.0,
        )
    coef = math.exp(
        sum(math.lgamma(alpha) - math.lgamma(alpha + k) for k in xi0.counts.values())
    )
    pairs = sorted(xi0.counts.items())

    def weight_lhs(eta, wlo):
        w = coef
        for x, k in pairs:
            w *= eta[x - wlo] ** k
        return w

    lhs_vals = mc_single_sweep(
        params, t, n_replicas, base_tag, weight_lhs, init=dict(eta0.values)
    )

    eta0_vals = eta0.values
    lg = math.lgamma(alpha)

    def weight_rhs(xi, wlo):
        w = 1.0
        for i, k in enumerate(xi):
            if k:
                w *= eta0_vals.get(i + wlo, 0.0) ** k * math.exp(
                    lg - math.lgamma(alpha + k)
                )
        return w

    rhs_vals = mc_dual_sweep(
        params, t, n_replicas, base_tag + 1, weight_rhs, init_counts=dict(xi0.counts)
    )
    return DualityReport(
        eta0=dict(eta0.values),
        xi0=dict(xi0.counts),
        t=t,
        alpha=alpha,
        n_replicas=n_replicas,
        lhs=float(lhs_vals.mean()),
        lhs_se=float(lhs_vals.std(ddof=1) / math.sqrt(len(lhs_vals))),
        rhs=float(rhs_vals.mean()),
        rhs_se=float(rhs_vals.std(ddof=1) / math.sqrt(len(rhs_vals))),
    )
