"""Noise variance of the bond-activity discretized walk.

One walker: per time step every lattice bond is independently active
with probability eps; the walker crosses its unique active neighbor
bond (right with probability 1 - B, left with probability B, where B is
that bond's Beta(alpha, alpha) share) and freezes when zero or two
neighbors are active.  A pair of walkers a gap z apart and driven by
one shared environment yields, per step, a numerator term (the
Beta-level covariance of their quenched mean displacements at frozen
activity pattern, averaged over patterns) and a denominator term (the
annealed growth of the mean absolute gap).  Both are exact polynomials
in eps and the Beta moments; terms vanish identically for |z| > 1.
Weighted by the pair measure pi_inv and scaled by floor(1/eps) steps
they assemble into

    gamma_sq_eps = N_eps / D_eps = 1 / (4 alpha)    exactly, at every eps,

while N_eps -> 1/(2 alpha) and D_eps -> 2 separately at rate eps.  The
indicator-level covariance of the pattern-averaged displacements is not
part of the numerator; the Monte-Carlo path mirrors this by differencing
two fresh Beta fields drawn on one shared activity pattern.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .env import EnvParams, TAG_MISC, chunk_generator, keyed_generator
from .flow import KPointEstimate
from .kmp import mc_multi_sweep, window_margin
from .stats import RunningMoments

# gaps with nonvanishing one-step terms
GAMMA_Z_TERMS = (-1, 0, 1)

_MC_CHUNK = 1 << 17


def pi_inv(z: int, alpha):
    """Stationary pair-gap weight: (alpha + 1)/alpha at gap 0, else 1."""
    if z == 0:
        return (alpha + 1) / alpha
    return 1


def gamma_sq_limit(alpha):
    """Small-eps limit of the noise variance, 1/(4 alpha)."""
    if isinstance(alpha, (int, Fraction)):
        return Fraction(1) / (4 * alpha)
    return 1.0 / (4.0 * alpha)


def _check_eps(eps) -> None:
    if not (0 < eps < 1):
        raise ValueError("eps must lie in (0, 1)")


def _beta_moments(alpha):
    # E[B] and E[B^2] for Beta(alpha, alpha)
    if isinstance(alpha, int):
        alpha = Fraction(alpha)
    if isinstance(alpha, Fraction):
        return Fraction(1, 2), (alpha + 1) / (2 * (2 * alpha + 1))
    return 0.5, (alpha + 1.0) / (2.0 * (2.0 * alpha + 1.0))


# polynomials in the per-bond Beta variables: {sorted bond-id tuple: coef}


def _pmul(p: dict, q: dict) -> dict:
    out: dict = {}
    for kp, vp in p.items():
        for kq, vq in q.items():
            k = tuple(sorted(kp + kq))
            out[k] = out.get(k, 0) + vp * vq
    return out


def _pexpect(p: dict, m1, m2):
    """Expectation over independent bond Betas; degree <= 2 per bond."""
    tot = 0
    for k, v in p.items():
        f = v
        for b in set(k):
            f = f * (m2 if k.count(b) == 2 else m1)
        tot = tot + f
    return tot


def _walker_outcomes(w: int, active: dict):
    """One-step outcome list [(position, probability-poly)] at frozen pattern.

    Bond b sits between sites b and b + 1; the walker at w watches bonds
    w - 1 and w.
    """
    left = active.get(w - 1, 0)
    right = active.get(w, 0)
    if left == right:
        return [(w, {(): 1})]
    if right:
        return [(w + 1, {(): 1, (w,): -1}), (w, {(w,): 1})]
    b = w - 1
    return [(w - 1, {(b,): 1}), (w, {(): 1, (b,): -1})]


def _mean_shift(outcomes, w: int) -> dict:
    d: dict = {}
    for pos, poly in outcomes:
        if pos == w:
            continue
        for k, v in poly.items():
            d[k] = d.get(k, 0) + (pos - w) * v
    return d


def exact_cov_terms(alpha, eps, z_values=GAMMA_Z_TERMS) -> dict:
    """Per-gap numerator and denominator terms by full pattern enumeration.

    Returns {z: {"num": ..., "den": ...}}.  With int or Fraction inputs the
    arithmetic is exact rational; no small-eps truncation is performed.
    """
    _check_eps(eps)
    if isinstance(alpha, int):
        alpha = Fraction(alpha)
    if isinstance(eps, int):
        eps = Fraction(eps)
    m1, m2 = _beta_moments(alpha)
    one = Fraction(1) if isinstance(eps, Fraction) else 1.0
    out = {}
    for z in z_values:
        z = int(z)
        bonds = sorted({z - 1, z, -1, 0})
        num = 0
        den = 0
        for pattern in itertools.product((0, 1), repeat=len(bonds)):
            weight = one
            for bit in pattern:
                weight = weight * (eps if bit else one - eps)
            active = dict(zip(bonds, pattern))
            ox = _walker_outcomes(z, active)
            oy = _walker_outcomes(0, active)
            dx = _mean_shift(ox, z)
            dy = _mean_shift(oy, 0)
            cov = _pexpect(_pmul(dx, dy), m1, m2) - _pexpect(dx, m1, m2) * _pexpect(
                dy, m1, m2
            )
            gap = 0
            for xp, px in ox:
                for yp, py in oy:
                    gap = gap + abs(xp - yp) * _pexpect(_pmul(px, py), m1, m2)
            num = num + weight * cov
            den = den + weight * gap
        out[z] = {"num": num, "den": den - abs(z)}
    return out


@dataclass
class GammaReport:
    """Assembled noise-variance numbers, exact or Monte-Carlo."""

    alpha: float
    eps: float
    N_eps: float
    D_eps: float
    gamma_sq_eps: float
    gamma_sq_limit: float
    method: str
    replicas: int | None = None
    N_se: float | None = None
    D_se: float | None = None
    gamma_sq_se: float | None = None
    terms: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {
            "alpha": float(self.alpha),
            "eps": float(self.eps),
            "N_eps": float(self.N_eps),
            "D_eps": float(self.D_eps),
            "gamma_sq_eps": float(self.gamma_sq_eps),
            "gamma_sq_limit": float(self.gamma_sq_limit),
            "method": self.method,
        }
        if self.replicas is not None:
            out["replicas"] = int(self.replicas)
            out["N_se"] = float(self.N_se)
            out["D_se"] = float(self.D_se)
            out["gamma_sq_se"] = float(self.gamma_sq_se)
        return out


def steps_for(eps) -> int:
    """Step count floor(1/eps) matching the chain's unit-time horizon."""
    _check_eps(eps)
    if isinstance(eps, Fraction):
        return int(Fraction(1) / eps)  # floor for positive rationals is int()
    return math.floor(1.0 / eps)


def gamma_eps_exact(alpha, eps) -> GammaReport:
    """Exact-moment noise variance report at discretization eps."""
    terms = exact_cov_terms(alpha, eps)
    n = steps_for(eps)
    N = 0
    D = 0
    for z in GAMMA_Z_TERMS:
        w = pi_inv(z, alpha)
        N = N + w * terms[z]["num"]
        D = D + w * terms[z]["den"]
    N = n * N
    D = n * D
    if not D > 0:
        raise RuntimeError("internal error: drift-gap denominator not positive")
    return GammaReport(
        alpha=alpha,
        eps=eps,
        N_eps=N,
        D_eps=D,
        gamma_sq_eps=N / D,
        gamma_sq_limit=gamma_sq_limit(alpha),
        method="exact-moment",
        terms=terms,
    )


# -- Monte-Carlo cross-checks -------------------------------------------


def eps_step(x: int, i_left: int, i_right: int, b_left: float, b_right: float, coin: float) -> int:
    """Single-walker update from explicit environment draws and one coin."""
    if bool(i_left) == bool(i_right):
        return x
    if i_right:
        return x + 1 if coin < 1.0 - b_right else x
    return x - 1 if coin < b_left else x


def eps_move_stats(alpha: float, eps: float, n: int, seed: int = 0) -> dict:
    """Annealed one-step move frequencies over n fresh environments."""
    gen = keyed_generator(seed, TAG_MISC, 45)
    act = gen.random((n, 2)) < eps
    b = gen.beta(alpha, alpha, size=(n, 2))
    coin = gen.random(n)
    right_only = act[:, 1] & ~act[:, 0]
    left_only = act[:, 0] & ~act[:, 1]
    moved_r = right_only & (coin < 1.0 - b[:, 1])
    moved_l = left_only & (coin < b[:, 0])
    return {
        "n": n,
        "right": float(moved_r.mean()),
        "left": float(moved_l.mean()),
        "stay": float(1.0 - moved_r.mean() - moved_l.mean()),
    }


def _drift_and_move(w: int, idx: dict, act: np.ndarray, b: np.ndarray):
    """Quenched mean displacement and the (prob, step) move law at site w."""
    left = act[:, idx[w - 1]]
    right = act[:, idx[w]]
    bl = b[:, idx[w - 1]]
    br = b[:, idx[w]]
    right_only = right & ~left
    left_only = left & ~right
    drift = np.where(right_only, 1.0 - br, 0.0) - np.where(left_only, bl, 0.0)
    p_move = np.where(right_only, 1.0 - br, np.where(left_only, bl, 0.0))
    step = np.where(right_only, 1, np.where(left_only, -1, 0))
    return drift, p_move, step


def gamma_eps_mc(
    alpha: float,
    eps: float,
    replicas: int,
    seed: int = 0,
    z_values=GAMMA_Z_TERMS,
    tag: int = 41,
) -> GammaReport:
    """Monte-Carlo one-step terms on shared environments, assembled like
    :func:`gamma_eps_exact`.

    Per replica and gap z the numerator sample is the paired difference
    0.5 (d_z(B) - d_z(B')) (d_0(B) - d_0(B')) of quenched drifts under two
    Beta fields sharing one activity pattern; the denominator sample is
    the exact conditional mean gap growth under the first field.
    """
    _check_eps(eps)
    if not set(GAMMA_Z_TERMS) <= set(int(z) for z in z_values):
        raise ValueError("z_values must cover -1, 0, 1")
    params = EnvParams(alpha=float(alpha), seed=seed)
    acc = {}
    for zi, z in enumerate(z_values):
        z = int(z)
        bonds = sorted({z - 1, z, -1, 0})
        idx = {b: j for j, b in enumerate(bonds)}
        a_num = RunningMoments()
        a_den = RunningMoments()
        done = 0
        chunk = 0
        while done < replicas:
            r = min(_MC_CHUNK, replicas - done)
            gen = chunk_generator(params, tag, chunk, stream=zi)
            act = gen.random((r, len(bonds))) < eps
            b1 = gen.beta(alpha, alpha, size=(r, len(bonds)))
            b2 = gen.beta(alpha, alpha, size=(r, len(bonds)))
            dz1, px, sx = _drift_and_move(z, idx, act, b1)
            d01, py, sy = _drift_and_move(0, idx, act, b1)
            dz2, _, _ = _drift_and_move(z, idx, act, b2)
            d02, _, _ = _drift_and_move(0, idx, act, b2)
            a_num.add(0.5 * (dz1 - dz2) * (d01 - d02))
            gap = (
                (1.0 - px) * (1.0 - py) * abs(z)
                + (1.0 - px) * py * np.abs(z - sy)
                + px * (1.0 - py) * np.abs(z + sx)
                + px * py * np.abs(z + sx - sy)
            )
            a_den.add(gap - abs(z))
            done += r
            chunk += 1
        acc[z] = (a_num, a_den)
    n = steps_for(eps)
    terms = {}
    for z, (a_num, a_den) in acc.items():
        terms[z] = {
            "num": float(a_num.mean),
            "num_se": float(a_num.stderr),
            "den": float(a_den.mean),
            "den_se": float(a_den.stderr),
        }
    N = n * sum(pi_inv(z, alpha) * terms[z]["num"] for z in GAMMA_Z_TERMS)
    D = n * sum(pi_inv(z, alpha) * terms[z]["den"] for z in GAMMA_Z_TERMS)
    # z streams are disjoint keyed draws, so their errors add in quadrature
    N_se = n * math.sqrt(
        sum((pi_inv(z, alpha) * terms[z]["num_se"]) ** 2 for z in GAMMA_Z_TERMS)
    )
    D_se = n * math.sqrt(
        sum((pi_inv(z, alpha) * terms[z]["den_se"]) ** 2 for z in GAMMA_Z_TERMS)
    )
    gamma_sq = N / D
    gamma_se = abs(gamma_sq) * math.hypot(N_se / N, D_se / D) if N else float("nan")
    return GammaReport(
        alpha=alpha,
        eps=eps,
        N_eps=N,
        D_eps=D,
        gamma_sq_eps=gamma_sq,
        gamma_sq_limit=float(gamma_sq_limit(alpha)),
        method="monte-carlo",
        replicas=replicas,
        N_se=N_se,
        D_se=D_se,
        gamma_sq_se=gamma_se,
        terms=terms,
    )


# -- n-step kernels of the discretized chain ----------------------------


def _eps_evolve_rows(gen, alpha: float, eps: float, rows: np.ndarray, steps: int):
    """Evolve replica mass rows (r, k, width) through ``steps`` updates.

    Bonds outside the window are treated as never active; the window must
    be wide enough that edge mass is negligible.
    """
    r, _k, width = rows.shape
    for _ in range(steps):
        act = gen.random((r, width - 1)) < eps
        b = gen.beta(alpha, alpha, size=(r, width - 1))
        a_l = np.zeros((r, width), dtype=bool)
        a_r = np.zeros((r, width), dtype=bool)
        a_l[:, 1:] = act
        a_r[:, :-1] = act
        b_l = np.zeros((r, width))
        b_r = np.zeros((r, width))
        b_l[:, 1:] = b
        b_r[:, :-1] = b
        p_r = np.where(a_r & ~a_l, 1.0 - b_r, 0.0)[:, None, :]
        p_l = np.where(a_l & ~a_r, b_l, 0.0)[:, None, :]
        new = rows * (1.0 - p_r - p_l)
        new[:, :, 1:] += rows[:, :, :-1] * p_r[:, :, :-1]
        new[:, :, :-1] += rows[:, :, 1:] * p_l[:, :, 1:]
        rows = new
    return rows


def eps_kpoint_kernel(
    alpha: float,
    eps: float,
    starts,
    targets,
    replicas: int,
    seed: int = 0,
    tag: int = 42,
    chunk_size: int = 4096,
) -> KPointEstimate:
    """Annealed product kernel of the discretized chain after floor(1/eps)
    steps, on the product target grid.

    Mirrors the continuous-time estimator's report shape; the ``t`` field
    holds the step count.
    """
    _check_eps(eps)
    steps = steps_for(eps)
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
    sites = list(starts) + [y for g in grids for y in g]
    margin = window_margin(2.0 * eps * steps)
    wlo = min(sites) - margin
    whi = max(sites) + margin
    width = whi - wlo + 1
    params = EnvParams(alpha=float(alpha), seed=seed)
    acc = RunningMoments()
    acc_tot = RunningMoments()
    done = 0
    chunk = 0
    while done < replicas:
        r = min(chunk_size, replicas - done)
        gen = chunk_generator(params, tag, chunk)
        rows = np.zeros((r, len(starts), width))
        for i, x in enumerate(starts):
            rows[:, i, x - wlo] = 1.0
        rows = _eps_evolve_rows(gen, alpha, eps, rows, steps)
        batch = []
        tots = []
        for j in range(r):
            vecs = [rows[j, i][np.asarray(g, dtype=np.int64) - wlo] for i, g in enumerate(grids)]
            prod = vecs[0]
            for v in vecs[1:]:
                prod = np.multiply.outer(prod, v)
            batch.append(prod)
            tot = 1.0
            for i in range(len(starts)):
                tot *= rows[j, i].sum()
            tots.append(tot)
        acc.add(np.stack(batch))
        acc_tot.add(np.asarray(tots))
        done += r
        chunk += 1
    return KPointEstimate(
        starts=starts,
        grids=grids,
        t=float(steps),
        n_replicas=replicas,
        est=np.asarray(acc.mean),
        se=np.asarray(acc.stderr),
        total=float(acc_tot.mean),
        total_se=float(acc_tot.stderr),
    )


# -- continuous-time gap kernel -----------------------------------------


@dataclass
class PdifTable:
    """Monte-Carlo gap kernel p_dif(z, a) with invariance diagnostics."""

    alpha: float
    t: float
    z_values: tuple
    a_values: tuple
    est: np.ndarray
    se: np.ndarray
    row_total: np.ndarray
    row_total_se: np.ndarray
    inv_est: np.ndarray
    inv_se: np.ndarray
    n_replicas: int


def pdif_estimate(
    alpha: float,
    t: float,
    zmax: int,
    amax: int,
    replicas: int,
    seed: int = 0,
    tag: int = 43,
) -> PdifTable:
    """Annealed two-walker gap transition table for the continuous flow.

    p_dif(z, a) = E[sum_y K_t(z, y + a) K_t(0, y)] estimated with all rows
    sharing one environment per replica; ``inv_est`` additionally carries
    the per-replica pi_inv-weighted column sums over |z| <= zmax, whose
    stderr is exact despite cross-row correlation.
    """
    params = EnvParams(alpha=float(alpha), seed=seed)
    z_values = tuple(range(-zmax, zmax + 1))
    a_values = tuple(range(-amax, amax + 1))
    i0 = z_values.index(0)
    w_pi = np.array([float(pi_inv(z, alpha)) for z in z_values])
    acc = RunningMoments()
    acc_tot = RunningMoments()
    acc_inv = RunningMoments()

    def reduce_fn(rows, wlo):
        arrs = [np.asarray(row) for row in rows]
        r0 = arrs[i0]
        width = len(r0)
        mat = np.empty((len(z_values), len(a_values)))
        for iz, rz in enumerate(arrs):
            for ia, a in enumerate(a_values):
                if a >= 0:
                    mat[iz, ia] = float(np.dot(rz[a:], r0[: width - a]))
                else:
                    mat[iz, ia] = float(np.dot(rz[: width + a], r0[-a:]))
        s0 = r0.sum()
        acc.add_one(mat)
        acc_tot.add_one(np.array([rz.sum() * s0 for rz in arrs]))
        acc_inv.add_one(w_pi @ mat)
        return None

    mc_multi_sweep(
        params,
        t,
        replicas,
        tag,
        reduce_fn,
        inits=[{z: 1.0} for z in z_values],
    )
    return PdifTable(
        alpha=alpha,
        t=t,
        z_values=z_values,
        a_values=a_values,
        est=np.asarray(acc.mean),
        se=np.asarray(acc.stderr),
        row_total=np.asarray(acc_tot.mean),
        row_total_se=np.asarray(acc_tot.stderr),
        inv_est=np.asarray(acc_inv.mean),
        inv_se=np.asarray(acc_inv.stderr),
        n_replicas=replicas,
    )


def pdif_invariance(table: PdifTable) -> list[dict]:
    """Stationarity check rows: sum_z pi_inv(z) p_dif(z, a) against pi_inv(a)."""
    out = []
    for ia, a in enumerate(table.a_values):
        lhs = float(table.inv_est[ia])
        se = float(table.inv_se[ia])
        target = float(pi_inv(a, table.alpha))
        out.append(
            {
                "a": a,
                "lhs": lhs,
                "se": se,
                "target": target,
                "z": (lhs - target) / se if se > 0 else float("inf"),
            }
        )
    return out
