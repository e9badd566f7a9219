"""Event-driven simulation of the KMP energy-redistribution process.

Each bond (x, x+1) carries a Poisson clock; at a ring with split B the pair
(eta(x), eta(x+1)) becomes (B*S, (1-B)*S) with S the pair sum.  The engine
processes premerged per-bond event streams on a window sized from the
ballistic light cone plus a large-deviation margin.  Events on bonds where
both endpoints are zero are exact no-ops, so the windowed run coincides
with the infinite-lattice dynamics as long as the support stays inside the
window; the support is tracked and the window is enlarged (and the segment
replayed from its saved entry state) in the vanishing-probability case
where it gets close to the edge.

The same inner sweep drives kernel rows in :mod:`kmpflow.flow`; bit-for-bit
agreement between the energy process started from a point mass and the
kernel's point row is a structural property of sharing this code path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .env import EnvParams, Environment, chunk_generator, poisson_event_lists

PRUNE_EPS = 1e-300

_CHUNK = 2048


@dataclass
class EnergyConfig:
    """Sparse nonnegative energy profile with cached mass and a time stamp."""

    values: dict[int, float]
    time: float = 0.0
    mass: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.values = {x: float(v) for x, v in self.values.items() if v != 0.0}
        for x, v in self.values.items():
            if not (v > 0.0 and math.isfinite(v)):
                raise ValueError(f"energy at site {x} must be positive finite, got {v}")
        if self.mass is None:
            self.mass = float(sum(self.values.values()))

    def energy(self, x: int) -> float:
        return self.values.get(x, 0.0)

    def support(self) -> tuple[int, int] | None:
        if not self.values:
            return None
        keys = self.values.keys()
        return min(keys), max(keys)


@dataclass
class Trajectory:
    """Snapshots at requested times plus event counters for one run."""

    params: EnvParams
    snapshots: list[EnergyConfig]
    events_applied: int
    pruned_mass: float
    ties_nudged: int


def redistribute(config: EnergyConfig, bond: int, split: float) -> EnergyConfig:
    """One bond update: pair (x, x+1) -> (B*S, (1-B)*S)."""
    if not (0.0 < split < 1.0):
        raise ValueError(f"split must lie in (0,1), got {split}")
    vals = dict(config.values)
    s = vals.pop(bond, 0.0) + vals.pop(bond + 1, 0.0)
    if s != 0.0:
        vals[bond] = split * s
        vals[bond + 1] = (1.0 - split) * s
    return EnergyConfig(values=vals, time=config.time, mass=config.mass)


def window_margin(duration: float, rate: float = 1.0) -> int:
    """Sites beyond the support that the light cone cannot plausibly reach."""
    lam = max(rate * duration, 0.0)
    return int(lam + 7.0 * math.sqrt(lam) + 14.0) + 1


def _premerge(env: Environment, wlo: int, whi: int, t0: float, t1: float):
    """Time-sorted (bond window index, split) streams over bonds [wlo, whi)."""
    times_parts, bonds_parts, splits_parts = [], [], []
    for bond in range(wlo, whi):
        times, splits = env.bond_arrays(bond, t1)
        lo = int(np.searchsorted(times, t0, side="right"))
        hi = int(np.searchsorted(times, t1, side="right"))
        if hi > lo:
            times_parts.append(times[lo:hi])
            splits_parts.append(splits[lo:hi])
            bonds_parts.append(np.full(hi - lo, bond - wlo, dtype=np.int64))
    if not times_parts:
        return [], [], 0
    ts = np.concatenate(times_parts)
    bs = np.concatenate(bonds_parts)
    ss = np.concatenate(splits_parts)
    order = np.lexsort((bs, ts))
    ts, bs, ss = ts[order], bs[order], ss[order]
    # exact cross-bond time ties have probability zero; resolve by nudging the
    # later event (bond order) to the next float so the order stays total
    ties = 0
    while True:
        eq = np.nonzero(np.diff(ts) == 0.0)[0]
        if not len(eq):
            break
        ties += len(eq)
        ts[eq + 1] = np.nextafter(ts[eq + 1], np.inf)
        order = np.lexsort((bs, ts))
        ts, bs, ss = ts[order], bs[order], ss[order]
    return bs.tolist(), ss.tolist(), ties


def _sweep_single(eta, bonds, splits, slo, shi, lo_edge, hi_edge):
    """Apply events to one window list; returns (slo, shi, applied, escaped)."""
    applied = 0
    for i, b in zip(bonds, splits):
        e0 = eta[i]
        e1 = eta[i + 1]
        if e0 == 0.0 and e1 == 0.0:
            continue
        s = e0 + e1
        eta[i] = b * s
        eta[i + 1] = (1.0 - b) * s
        applied += 1
        if i < slo:
            slo = i
            if slo <= lo_edge:
                return slo, shi, applied, True
        elif i + 1 > shi:
            shi = i + 1
            if shi >= hi_edge:
                return slo, shi, applied, True
    return slo, shi, applied, False


def _sweep_multi(rows, bonds, splits, slo, shi, lo_edge, hi_edge):
    applied = 0
    for i, b in zip(bonds, splits):
        touched = False
        for eta in rows:
            e0 = eta[i]
            e1 = eta[i + 1]
            if e0 == 0.0 and e1 == 0.0:
                continue
            s = e0 + e1
            eta[i] = b * s
            eta[i + 1] = (1.0 - b) * s
            touched = True
        if touched:
            applied += 1
            if i < slo:
                slo = i
                if slo <= lo_edge:
                    return slo, shi, applied, True
            elif i + 1 > shi:
                shi = i + 1
                if shi >= hi_edge:
                    return slo, shi, applied, True
    return slo, shi, applied, False


class DriveResult:
    __slots__ = ("vectors", "snapshots", "events_applied", "pruned_mass", "ties_nudged")

    def __init__(self, vectors, snapshots, events_applied, pruned_mass, ties_nudged):
        self.vectors = vectors
        self.snapshots = snapshots
        self.events_applied = events_applied
        self.pruned_mass = pruned_mass
        self.ties_nudged = ties_nudged


def drive_vectors(
    env: Environment,
    vectors: list[dict[int, float]],
    t0: float,
    t1: float,
    snapshot_times: tuple[float, ...] = (),
) -> DriveResult:
    """Evolve sparse vectors under the shared environment over (t0, t1].

    All vectors see the same events; this is the one code path for both the
    energy process and kernel rows.  ``snapshot_times`` must lie in (t0, t1];
    a snapshot is the state after every event with time <= the snapshot time.
    """
    if not (t1 > t0):
        raise ValueError(f"need t1 > t0, got ({t0}, {t1})")
    for s in snapshot_times:
        if not (t0 < s <= t1):
            raise ValueError(f"snapshot time {s} outside ({t0}, {t1}]")

    sites = [x for v in vectors for x in v.keys() if v[x] != 0.0]
    if not sites:
        snaps = [[dict() for _ in vectors] for _ in snapshot_times]
        return DriveResult([dict() for _ in vectors], snaps, 0, 0.0, 0)
    slo, shi = min(sites), max(sites)

    margin = window_margin(t1 - t0, env.params.rate)
    applied_total = 0
    pruned = 0.0
    ties_total = 0
    snaps: list[list[dict[int, float]]] = []

    seg_bounds = sorted(set(snapshot_times) | {t1})
    while True:  # window-size attempt loop
        wlo = slo - margin
        whi = shi + margin
        width = whi - wlo + 1
        rows = []
        for v in vectors:
            row = [0.0] * width
            for x, val in v.items():
                row[x - wlo] = val
            rows.append(row)
        cur_lo, cur_hi = slo - wlo, shi - wlo
        applied_total = 0
        ties_total = 0
        snaps = []
        t_prev = t0
        escaped = False
        single = len(rows) == 1
        for t_seg in seg_bounds:
            bonds, splits, ties = _premerge(env, wlo, whi - 1, t_prev, t_seg)
            ties_total += ties
            if single:
                cur_lo, cur_hi, applied, esc = _sweep_single(
                    rows[0], bonds, splits, cur_lo, cur_hi, 1, width - 2
                )
            else:
                cur_lo, cur_hi, applied, esc = _sweep_multi(
                    rows, bonds, splits, cur_lo, cur_hi, 1, width - 2
                )
            if esc:
                # replay with a larger window; nothing outside was touched yet
                escaped = True
                break
            applied_total += applied
            snaps.append([
                {x + wlo: val for x, val in enumerate(r) if val != 0.0} for r in rows
            ])
            t_prev = t_seg
        if escaped:
            margin *= 2
            continue
        break

    # prune denormal dust, tracking the discarded mass
    cleaned_snaps = []
    for per_time in snaps:
        cleaned = []
        for d in per_time:
            small = [x for x, v in d.items() if v < PRUNE_EPS]
            for x in small:
                pruned += d.pop(x)
            cleaned.append(d)
        cleaned_snaps.append(cleaned)
    out_vectors = cleaned_snaps[-1] if cleaned_snaps else [dict() for _ in vectors]

    want = sorted(set(snapshot_times))
    keyed = dict(zip(seg_bounds, cleaned_snaps))
    snap_out = [keyed[t] for t in want]
    return DriveResult(out_vectors, snap_out, applied_total, pruned, ties_total)


def run_kmp(
    init: EnergyConfig,
    T: float,
    env: Environment,
    snapshot_times: tuple[float, ...] | None = None,
) -> Trajectory:
    """Run the KMP process from ``init.time`` to absolute time ``T``."""
    if not snapshot_times:
        snapshot_times = (T,)
    if T == init.time:
        # degenerate horizon: the identity evolution
        if any(t != T for t in snapshot_times):
            raise ValueError("zero-length run can only snapshot its own time")
        return Trajectory(
            params=env.params,
            snapshots=[EnergyConfig(values=dict(init.values), time=T)],
            events_applied=0,
            pruned_mass=0.0,
            ties_nudged=0,
        )
    res = drive_vectors(env, [init.values], init.time, T, tuple(snapshot_times))
    snaps = [
        EnergyConfig(values=vecs[0], time=t)
        for t, vecs in zip(sorted(set(snapshot_times)), res.snapshots)
    ]
    return Trajectory(
        params=env.params,
        snapshots=snaps,
        events_applied=res.events_applied,
        pruned_mass=res.pruned_mass,
        ties_nudged=res.ties_nudged,
    )


def stationary_draw(window: tuple[int, int], env: Environment, key: int = 0) -> EnergyConfig:
    """I.i.d. Gamma(alpha) energies on sites [lo, hi]; exactly stationary."""
    lo, hi = window
    if hi < lo:
        raise ValueError("window must satisfy lo <= hi")
    draws = env.sample_gamma(env.params.alpha, key=(lo, hi, key), size=hi - lo + 1)
    return EnergyConfig(values={lo + i: float(v) for i, v in enumerate(draws)})


# -- bulk Monte-Carlo sweep over independent environments ---------------


def mc_single_sweep(
    params: EnvParams,
    t: float,
    n_replicas: int,
    tag: int,
    reduce_fn,
    *,
    init: dict[int, float] | None = None,
    chunk_size: int | None = None,
    progress=None,
):
    """Evolve one vector per independent environment; reduce each replica.

    ``reduce_fn(eta_list, wlo) -> value`` sees the final window list.  The
    replica layout is fixed-size chunks keyed by (seed, tag, chunk), so the
    output is a pure function of (params, t, n_replicas, tag, init).
    """
    if init is None:
        init = {0: 1.0}
    if not init:
        raise ValueError("bulk sweep needs a nonempty initial vector")
    slo, shi = min(init), max(init)
    margin = window_margin(t, params.rate)
    wlo = slo - margin
    whi = shi + margin
    width = whi - wlo + 1
    nb = width - 1  # bonds [wlo, whi)
    if chunk_size is None:
        # keep each chunk's event draw around 2e6 variates
        per_replica = max(1.0, nb * params.rate * t)
        chunk_size = max(1, min(_CHUNK, int(2.0e6 / per_replica)))
    base = [0.0] * width
    for x, v in init.items():
        base[x - wlo] = float(v)
    out = []
    n_chunks = (n_replicas + chunk_size - 1) // chunk_size
    for c in range(n_chunks):
        n_here = min(chunk_size, n_replicas - c * chunk_size)
        gen = chunk_generator(params, tag, c)
        events = poisson_event_lists(gen, params.alpha, nb, t, n_here, params.rate)
        for bonds, splits, _times in events:
            eta = list(base)
            _, _, _, esc = _sweep_single(
                eta, bonds, splits, slo - wlo, shi - wlo, 1, width - 2
            )
            if esc:
                raise RuntimeError(
                    "support reached the bulk window edge; enlarge window_margin"
                )
            out.append(reduce_fn(eta, wlo))
        if progress is not None:
            progress(c + 1, n_chunks)
    return np.asarray(out)


def mc_multi_sweep(
    params: EnvParams,
    t: float,
    n_replicas: int,
    tag: int,
    reduce_fn,
    *,
    inits: list[dict[int, float]],
    extra_sites: tuple[int, ...] = (),
    chunk_size: int | None = None,
):
    """Like :func:`mc_single_sweep` but several vectors share each environment.

    ``reduce_fn(rows, wlo) -> value`` sees the final window lists in the
    order of ``inits``.  ``extra_sites`` widens the window hull (useful when
    a reducer reads sites away from the initial supports).  A reducer may
    accumulate internally and return None; then the sweep returns None.
    """
    sites = [x for v in inits for x in v] + list(extra_sites)
    if not sites:
        raise ValueError("bulk sweep needs a nonempty hull")
    slo, shi = min(sites), max(sites)
    margin = window_margin(t, params.rate)
    wlo = slo - margin
    whi = shi + margin
    width = whi - wlo + 1
    nb = width - 1
    if chunk_size is None:
        per_replica = max(1.0, nb * params.rate * t)
        chunk_size = max(1, min(_CHUNK, int(2.0e6 / per_replica)))
    bases = []
    for v in inits:
        base = [0.0] * width
        for x, val in v.items():
            base[x - wlo] = float(val)
        bases.append(base)
    sup = [x for v in inits for x in v]
    s_lo, s_hi = (min(sup), max(sup)) if sup else (slo, shi)
    out = []
    got_values = False
    n_chunks = (n_replicas + chunk_size - 1) // chunk_size
    for c in range(n_chunks):
        n_here = min(chunk_size, n_replicas - c * chunk_size)
        gen = chunk_generator(params, tag, c)
        events = poisson_event_lists(gen, params.alpha, nb, t, n_here, params.rate)
        for bonds, splits, _times in events:
            rows = [list(b) for b in bases]
            _, _, _, esc = _sweep_multi(
                rows, bonds, splits, s_lo - wlo, s_hi - wlo, 1, width - 2
            )
            if esc:
                raise RuntimeError(
                    "support reached the bulk window edge; enlarge window_margin"
                )
            val = reduce_fn(rows, wlo)
            if val is not None:
                got_values = True
                out.append(val)
    return np.asarray(out) if got_values else None
