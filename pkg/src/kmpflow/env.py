"""Deterministic keyed random environment for bond-driven lattice dynamics.

The environment is the shared randomness behind every process in this
package: a rate-``rate`` Poisson clock on every lattice bond ``(x, x+1)``
and one Beta(alpha, alpha) split per clock ring.  All draws are pure
functions of (seed, purpose tag, bond, position): re-querying never
re-rolls, extending a horizon never changes what was already materialized,
and replicas get independent environments by using distinct seeds.

Streams are counter-based (numpy Philox) with 128-bit keys derived from a
splitmix64 mix of the seed, a small purpose tag and the zigzag-encoded
bond index.  Per-bond caches extend in fixed blocks of 64 events (64
exponential gaps, then 2x64 Gamma(alpha) variates giving the Beta splits
through the Gamma-ratio construction G1/(G1+G2)), so materialized values
do not depend on the order or granularity of queries.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1
_BLOCK = 64

# purpose tags; part of the stream-key contract, never renumber
TAG_BOND = 1      # per-bond event times + splits
TAG_GAMMA = 2     # Gamma initial-data draws
TAG_DUAL = 3      # binomial thinning coins for the dual process
TAG_CHUNK = 4     # bulk replica-chunk sampling in Monte-Carlo sweeps
TAG_MISC = 5


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _zigzag(n: int) -> int:
    return 2 * n if n >= 0 else -2 * n - 1


def derive_key(seed: int, tag: int, *parts: int) -> np.ndarray:
    """128-bit Philox key from (seed, tag, parts); pure and collision-mixed."""
    h = _splitmix64(seed & _MASK64)
    h = _splitmix64(h ^ ((tag * 0xA24BAED4963EE407) & _MASK64))
    for p in parts:
        h = _splitmix64(h ^ (_zigzag(int(p)) & _MASK64))
    k0 = _splitmix64(h)
    k1 = _splitmix64(k0)
    return np.array([k0, k1], dtype=np.uint64)


def keyed_generator(seed: int, tag: int, *parts: int) -> np.random.Generator:
    """Fresh Generator on a counter-based stream keyed by (seed, tag, parts)."""
    return np.random.Generator(np.random.Philox(key=derive_key(seed, tag, *parts)))


@dataclass(frozen=True)
class EnvParams:
    """Immutable keying data: one (alpha, seed, rate) triple = one environment."""

    alpha: float
    seed: int
    rate: float = 1.0

    def __post_init__(self) -> None:
        if not (self.alpha > 0.0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be positive and finite, got {self.alpha}")
        if not (self.rate > 0.0 and math.isfinite(self.rate)):
            raise ValueError(f"rate must be positive and finite, got {self.rate}")
        if not (0 <= int(self.seed) <= _MASK64):
            raise ValueError("seed must fit in 64 bits")


@dataclass(frozen=True)
class BondEvent:
    """One clock ring on bond (bond, bond+1).

    ``index`` is the 0-based position in that bond's full event stream from
    time 0, so (bond, index) is a stable key for the split.
    """

    bond: int
    index: int
    time: float
    split: float


class _BondCache:
    __slots__ = ("state", "times", "splits")

    def __init__(self) -> None:
        self.state = None          # saved Philox state dict after the last block
        self.times = np.empty(0, dtype=np.float64)
        self.splits = np.empty(0, dtype=np.float64)


class Environment:
    """Lazy materialization of the keyed environment.

    Thread-safe for concurrent readers; the cache behaves as if each block
    had been computed exactly once.  Instances are cheap; all state is
    derived from ``params``.
    """

    def __init__(self, params: EnvParams):
        self.params = params
        self._bonds: dict[int, _BondCache] = {}
        self._lock = threading.Lock()
        self._bg = np.random.Philox(key=np.zeros(2, dtype=np.uint64))
        self._gen = np.random.Generator(self._bg)
        self.degenerate_redraws = 0

    # -- materialization ------------------------------------------------

    def _extend(self, bond: int, cache: _BondCache) -> None:
        """Append one fixed block of events to the bond's cache."""
        if cache.state is None:
            self._bg.state = {
                "bit_generator": "Philox",
                "state": {
                    "counter": np.zeros(4, dtype=np.uint64),
                    "key": derive_key(self.params.seed, TAG_BOND, bond),
                },
                "buffer": np.zeros(4, dtype=np.uint64),
                "buffer_pos": 4,
                "has_uint32": 0,
                "uinteger": 0,
            }
        else:
            self._bg.state = cache.state
        gen = self._gen
        alpha = self.params.alpha
        gaps = gen.standard_exponential(_BLOCK) / self.params.rate
        g1 = gen.standard_gamma(alpha, _BLOCK)
        g2 = gen.standard_gamma(alpha, _BLOCK)
        denom = g1 + g2
        bad = ~((g1 > 0.0) & (g2 > 0.0) & np.isfinite(denom))
        while bad.any():
            # degenerate split (underflowed Gamma pair): redraw those pairs
            # from the same stream; deterministic because the stream position
            # only depends on how many redraws happened before.
            k = int(bad.sum())
            self.degenerate_redraws += k
            g1[bad] = gen.standard_gamma(alpha, k)
            g2[bad] = gen.standard_gamma(alpha, k)
            denom = g1 + g2
            bad = ~((g1 > 0.0) & (g2 > 0.0) & np.isfinite(denom))
        splits = g1 / denom
        cache.state = self._bg.state
        last = cache.times[-1] if len(cache.times) else 0.0
        cache.times = np.concatenate([cache.times, last + np.cumsum(gaps)])
        cache.splits = np.concatenate([cache.splits, splits])

    def _cache_through_time(self, bond: int, t1: float) -> _BondCache:
        cache = self._bonds.get(bond)
        if cache is not None and len(cache.times) and cache.times[-1] > t1:
            return cache
        with self._lock:
            cache = self._bonds.setdefault(bond, _BondCache())
            while not len(cache.times) or cache.times[-1] <= t1:
                self._extend(bond, cache)
        return cache

    def _cache_through_count(self, bond: int, n: int) -> _BondCache:
        cache = self._bonds.get(bond)
        if cache is not None and len(cache.times) >= n:
            return cache
        with self._lock:
            cache = self._bonds.setdefault(bond, _BondCache())
            while len(cache.times) < n:
                self._extend(bond, cache)
        return cache

    # -- queries --------------------------------------------------------

    def events_in(self, bond: int, t0: float, t1: float) -> list[BondEvent]:
        """Ordered events on one bond with time in the half-open window (t0, t1]."""
        if not (t0 < t1) or t0 < 0.0 or not math.isfinite(t1):
            raise ValueError(f"need 0 <= t0 < t1 finite, got ({t0}, {t1})")
        cache = self._cache_through_time(bond, t1)
        lo = int(np.searchsorted(cache.times, t0, side="right"))
        hi = int(np.searchsorted(cache.times, t1, side="right"))
        return [
            BondEvent(bond, i, float(cache.times[i]), float(cache.splits[i]))
            for i in range(lo, hi)
        ]

    def bond_arrays(self, bond: int, t1: float) -> tuple[np.ndarray, np.ndarray]:
        """(times, splits) arrays covering at least [0, t1]; shared, do not mutate."""
        cache = self._cache_through_time(bond, t1)
        return cache.times, cache.splits

    def sample_beta(self, key: tuple[int, int]) -> float:
        """Split value for (bond, index); same value the event stream carries."""
        bond, index = key
        if index < 0:
            raise ValueError("index must be >= 0")
        cache = self._cache_through_count(bond, index + 1)
        return float(cache.splits[index])

    def sample_gamma(self, shape, key: tuple[int, ...], size=None):
        """Gamma(shape, 1) draws on the stream keyed by (seed, TAG_GAMMA, key)."""
        gen = keyed_generator(self.params.seed, TAG_GAMMA, *key)
        return gen.standard_gamma(shape, size=size)

    def dual_coin_generator(self, bond: int, index: int) -> np.random.Generator:
        """Stream for the dual process's thinning draw at event (bond, index)."""
        return keyed_generator(self.params.seed, TAG_DUAL, bond, index)


def events_in(env: Environment, bond: int, t0: float, t1: float) -> list[BondEvent]:
    return env.events_in(bond, t0, t1)


def sample_beta(env: Environment, key: tuple[int, int]) -> float:
    return env.sample_beta(key)


def sample_gamma(env: Environment, shape, key: tuple[int, ...], size=None):
    return env.sample_gamma(shape, key, size=size)


# -- bulk replica sampling for Monte-Carlo sweeps -----------------------

def chunk_generator(
    params: EnvParams, tag: int, chunk_index: int, stream: int = 0
) -> np.random.Generator:
    """Master stream for one fixed-size replica chunk of a Monte-Carlo sweep.

    Sweeps draw whole chunks from one keyed stream, so results depend only on
    (seed, config, chunk layout), never on worker count or scheduling.
    ``stream`` separates independent substreams of the same chunk (for
    example bond events versus redistribution coins).
    """
    return keyed_generator(params.seed, TAG_CHUNK, tag, chunk_index, stream)


def poisson_event_lists(
    gen: np.random.Generator,
    alpha: float,
    n_bonds: int,
    t1: float,
    n_replicas: int,
    rate: float = 1.0,
):
    """Premerged event lists for a chunk of replicas over ``n_bonds`` bonds.

    Returns a list of (bond_index_list, split_list, times_array) triples,
    one per replica, with events time-sorted within each replica.  Bond
    indices are 0-based positions in the caller's window, not lattice bonds.
    """
    counts = gen.poisson(rate * t1, size=(n_replicas, n_bonds))
    per_rep = counts.sum(axis=1)
    total = int(per_rep.sum())
    times = gen.uniform(0.0, t1, size=total)
    g1 = gen.standard_gamma(alpha, total)
    g2 = gen.standard_gamma(alpha, total)
    denom = g1 + g2
    bad = ~((g1 > 0.0) & (g2 > 0.0) & np.isfinite(denom))
    while bad.any():
        k = int(bad.sum())
        g1[bad] = gen.standard_gamma(alpha, k)
        g2[bad] = gen.standard_gamma(alpha, k)
        denom = g1 + g2
        bad = ~((g1 > 0.0) & (g2 > 0.0) & np.isfinite(denom))
    splits = g1 / denom
    rep_of = np.repeat(np.arange(n_replicas), per_rep)
    bond_of = np.concatenate(
        [np.repeat(np.arange(n_bonds), counts[r]) for r in range(n_replicas)]
    ) if total else np.empty(0, dtype=np.int64)
    order = np.lexsort((times, rep_of))
    bond_s = bond_of[order]
    time_s = times[order]
    split_s = splits[order]
    offsets = np.concatenate([[0], np.cumsum(per_rep)]).astype(np.int64)
    out = []
    for r in range(n_replicas):
        a, b = offsets[r], offsets[r + 1]
        out.append((bond_s[a:b].tolist(), split_s[a:b].tolist(), time_s[a:b]))
    return out
