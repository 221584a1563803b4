"""Exact event-driven simulation of the four reaction schemes.

Each trajectory draws from its own counter-based Philox stream: the key is
derived from the base seed and the trajectory index occupies one word of the
counter, so trajectory ``i`` sees the same random numbers whichever worker
runs it.  Workers return exact integer tallies (value -> count per sample
time); the parent merges them, so the ensemble statistics are bit-identical
for any number of jobs.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .core import DistributionSnapshot, DomainError, Engine, Kind, MomentSet, ProcessSpec, ResourceError, validate

__all__ = [
    "PopulationState",
    "EnsembleStats",
    "stream",
    "simulate_one",
    "run_ensemble",
]

CHUNK = 4096
K_MAX = 4
MAX_HISTOGRAM_CELLS = 1 << 26
_BLOCK = 64
_TO_UNIT = 2.0**-53


@dataclass(frozen=True)
class PopulationState:
    """Counts of progenitor (``m``) and post-mitotic (``n``) cells.

    For immigration ``m`` includes the stem cell, so it is at least 1.
    """

    m: int
    n: int = 0
    stem_active: bool = False

    def __post_init__(self):
        if self.m < 0 or self.n < 0:
            raise DomainError("cell counts must be nonnegative")

    @classmethod
    def initial(cls, spec: ProcessSpec) -> "PopulationState":
        if spec.kind is Kind.TWOTYPE:
            return cls(0, 0, stem_active=True)
        return cls(1, 0, stem_active=spec.kind is Kind.IMMIGRATION)


def _key(base_seed: int) -> np.ndarray:
    return np.random.SeedSequence(int(base_seed)).generate_state(2, np.uint64)


def stream(base_seed: int, index: int) -> np.random.Philox:
    """Random stream of trajectory ``index`` under ``base_seed``."""
    if index < 0:
        raise DomainError("trajectory index must be nonnegative")
    return np.random.Philox(key=_key(base_seed), counter=[0, 0, int(index), 0])


class _Streams:
    """Reuses one Philox generator, repositioning its counter per trajectory."""

    def __init__(self, base_seed):
        self._bg = np.random.Philox(key=_key(base_seed))
        self._state = self._bg.state

    def at(self, index):
        st = self._state
        st["state"]["counter"][:] = (0, 0, index, 0)
        st["buffer_pos"] = 4
        st["has_uint32"] = 0
        self._bg.state = st
        return self._bg


def _uniforms(bitgen):
    """Endless iterator of doubles in [0, 1) from 53 high bits of each draw."""
    while True:
        raw = bitgen.random_raw(_BLOCK) >> np.uint64(11)
        yield from (raw * _TO_UNIT).tolist()


def _bitgen(rng):
    if isinstance(rng, np.random.Generator):
        return rng.bit_generator
    if isinstance(rng, np.random.BitGenerator):
        return rng
    raise TypeError("rng must be a numpy Generator or BitGenerator")


# -- kernels ------------------------------------------------------------------
# Each kernel returns the state at every sample time.  The state at time s
# includes all events at times <= s.


def _one_type(kind, beta, times, draw):
    log = math.log
    out = []
    nt = len(times)
    i = 0
    t = 0.0
    m = 1
    critical = kind is Kind.CRITICAL
    immigration = kind is Kind.IMMIGRATION
    while True:
        if immigration:
            birth = beta + (m - 1)
            rate = birth + (m - 1)
        elif critical:
            birth = m
            rate = 2 * m
        else:
            birth = m
            rate = 2 * m - 1 if m == 1 else 2 * m
        if rate == 0:
            break
        t -= log(1.0 - next(draw)) / rate
        while i < nt and times[i] < t:
            out.append(m)
            i += 1
        if i == nt:
            return out
        if next(draw) * rate < birth:
            m += 1
        else:
            m -= 1
    out.extend([m] * (nt - i))
    return out


def _two_type(beta, r, gamma, times, draw):
    log = math.log
    out = []
    nt = len(times)
    i = 0
    t = 0.0
    m = n = 0
    while True:
        rate = beta + m + gamma * n
        if rate == 0:
            break
        t -= log(1.0 - next(draw)) / rate
        while i < nt and times[i] < t:
            out.append((m, n))
            i += 1
        if i == nt:
            return out
        u = next(draw) * rate
        if u < beta:
            m += 1
        elif u < beta + r * m:
            m += 1
        elif u < beta + (1.0 - r) * m:
            n += 1
        elif u < beta + m:
            m -= 1
            n += 2
        else:
            n -= 1
    out.extend([(m, n)] * (nt - i))
    return out


def _kernel(spec):
    if spec.kind is Kind.TWOTYPE:
        return lambda times, draw: _two_type(spec.beta, spec.r, spec.gamma, times, draw)
    beta = spec.beta if spec.kind is Kind.IMMIGRATION else 0.0
    return lambda times, draw: _one_type(spec.kind, beta, times, draw)


def _check_times(sample_times, t_max):
    times = [float(s) for s in sample_times]
    if not times:
        raise DomainError("at least one sample time is required")
    if any(not math.isfinite(s) or s < 0 for s in times):
        raise DomainError("sample times must be finite and nonnegative")
    if any(b <= a for a, b in zip(times, times[1:])):
        raise DomainError("sample times must be strictly increasing")
    if times[-1] > t_max:
        raise DomainError("sample times must not exceed t_max")
    return times


def simulate_one(spec: ProcessSpec, t_max: float, sample_times, rng) -> list[PopulationState]:
    """Simulate one trajectory and return its state at each sample time.

    Parameters
    ----------
    spec : ProcessSpec
        Process to simulate; validated here.
    t_max : float
        End of the simulated window; sample times must not exceed it.
    sample_times : sequence of float
        Strictly increasing observation times.
    rng : numpy.random.Generator or BitGenerator
        Source of randomness, typically ``stream(seed, i)``.
    """
    validate(spec)
    times = _check_times(sample_times, t_max)
    draw = _uniforms(_bitgen(rng))
    raw = _kernel(spec)(times, draw)
    if spec.kind is Kind.TWOTYPE:
        return [PopulationState(m, n, True) for m, n in raw]
    stem = spec.kind is Kind.IMMIGRATION
    return [PopulationState(m, 0, stem) for m in raw]


# -- ensembles ----------------------------------------------------------------


def _run_chunk(args):
    spec_json, times, base_seed, start, stop = args
    spec = ProcessSpec.from_json(spec_json)
    kernel = _kernel(spec)
    streams = _Streams(base_seed)
    tallies = [Counter() for _ in times]
    for idx in range(start, stop):
        states = kernel(times, _uniforms(streams.at(idx)))
        for tally, s in zip(tallies, states):
            tally[s] += 1
    return tallies


def _power_sums(tally, component, k_top):
    sums = [0] * (k_top + 1)
    for state, count in tally.items():
        x = state[component] if isinstance(state, tuple) else state
        p = count
        for k in range(k_top + 1):
            sums[k] += p
            p *= x
    return sums


def _moment(sums, k, N):
    value = Fraction(sums[k], N)
    if N > 1:
        var = Fraction(N * sums[2 * k] - sums[k] ** 2, N * (N - 1))
        err = math.sqrt(float(var) / N)
    else:
        err = math.inf
    return float(value), err


@dataclass(frozen=True)
class EnsembleStats:
    """Histograms and moment estimates of a Monte Carlo ensemble.

    ``histograms[j]`` counts trajectories by state at ``sample_times[j]``.
    One-type bins are indexed by m = 0..bin_cap with a final overflow bin;
    two-type bins flatten (m, n), m, n <= bin_cap, row-major, again followed
    by an overflow bin.  ``power_sums[j][c][k]`` is the exact integer sum of
    x^k over trajectories for count c (0 = m, 1 = n), k = 0..2*k_max.
    """

    spec: ProcessSpec
    base_seed: int
    trajectories: int
    sample_times: tuple
    bin_cap: int
    histograms: np.ndarray
    power_sums: tuple = field(repr=False)
    k_max: int = K_MAX

    @property
    def two_type(self) -> bool:
        return self.spec.kind is Kind.TWOTYPE

    def moments(self, j: int, component: int = 0) -> MomentSet:
        """<x^k>, k = 0..k_max, at sample index ``j``; stderr = std / sqrt(N)."""
        sums = self.power_sums[j][component]
        pairs = [_moment(sums, k, self.trajectories) for k in range(self.k_max + 1)]
        return MomentSet(
            time=self.sample_times[j],
            values=tuple(v for v, _ in pairs),
            stderr=tuple(e for _, e in pairs),
        )

    def overflow(self, j: int) -> int:
        return int(self.histograms[j, -1])

    def to_snapshot(self, j: int) -> DistributionSnapshot:
        """Empirical distribution at sample index ``j``.

        ``meta["counts"]`` and ``meta["stderr"]`` align with ``probs``; the
        stderr is the binomial sqrt(p(1-p)/N).
        """
        N = self.trajectories
        row = self.histograms[j]
        cap = self.bin_cap
        if self.two_type:
            counts = row[:-1].reshape(cap + 1, cap + 1)
            origin, extinct = 0, 0.0
        elif self.spec.kind is Kind.CRITICAL:
            counts = row[1:-1]
            origin, extinct = 1, float(row[0]) / N
        else:
            counts = row[1:-1]
            origin, extinct = 1, 0.0
        probs = counts / N
        return DistributionSnapshot(
            time=self.sample_times[j],
            probs=probs,
            tail_mass=float(row[-1]) / N,
            engine=Engine.MONTE_CARLO,
            origin=origin,
            extinct_mass=extinct,
            tolerance=0.0,
            meta={
                "counts": counts.copy(),
                "stderr": np.sqrt(probs * (1.0 - probs) / N),
                "trajectories": N,
                "extinct_count": int(row[0]) if self.spec.kind is Kind.CRITICAL else 0,
            },
        )

    def to_dict(self) -> dict:
        moments = []
        for j in range(len(self.sample_times)):
            entries = []
            for c in range(2 if self.two_type else 1):
                ms = self.moments(j, c)
                for k in range(1, self.k_max + 1):
                    item = {"k": k, "value": ms.values[k], "stderr": ms.stderr[k]}
                    if self.two_type:
                        item["count"] = "mn"[c]
                    entries.append(item)
            moments.append(entries)
        return {
            "spec": self.spec.to_dict(),
            "base_seed": self.base_seed,
            "trajectories": self.trajectories,
            "sample_times": list(self.sample_times),
            "bin_cap": self.bin_cap,
            "histograms": self.histograms.tolist(),
            "moments": moments,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def default_bin_cap(spec: ProcessSpec) -> int:
    return 64 if spec.kind is Kind.TWOTYPE else 1024


def run_ensemble(
    spec: ProcessSpec,
    t_max: float,
    sample_times,
    trajectories: int,
    base_seed: int,
    jobs: int = 1,
    bin_cap: int | None = None,
    k_max: int = K_MAX,
) -> EnsembleStats:
    """Simulate ``trajectories`` independent trajectories and tally them.

    Trajectory ``i`` uses ``stream(base_seed, i)``.  Work is split into fixed
    chunks of trajectory indices; ``jobs > 1`` runs chunks in worker
    processes.  The result does not depend on ``jobs``.

    Raises
    ------
    ResourceError
        If the histogram array would exceed ``MAX_HISTOGRAM_CELLS``.
    """
    validate(spec)
    times = _check_times(sample_times, t_max)
    if trajectories < 1:
        raise DomainError("trajectories must be >= 1")
    if jobs < 1:
        raise DomainError("jobs must be >= 1")
    cap = default_bin_cap(spec) if bin_cap is None else int(bin_cap)
    if cap < 1:
        raise DomainError("bin_cap must be >= 1")
    two_type = spec.kind is Kind.TWOTYPE
    bins = (cap + 1) ** 2 + 1 if two_type else cap + 2
    if bins * len(times) > MAX_HISTOGRAM_CELLS:
        raise ResourceError(f"histogram of {bins} bins x {len(times)} times exceeds the memory cap")

    spec_json = spec.to_json()
    tasks = [
        (spec_json, times, base_seed, start, min(start + CHUNK, trajectories))
        for start in range(0, trajectories, CHUNK)
    ]
    if jobs == 1 or len(tasks) == 1:
        parts = map(_run_chunk, tasks)
    else:
        pool = ProcessPoolExecutor(max_workers=jobs)
        parts = pool.map(_run_chunk, tasks)
    tallies = [Counter() for _ in times]
    try:
        for part in parts:
            for total, chunk in zip(tallies, part):
                total.update(chunk)
    finally:
        if jobs != 1 and len(tasks) > 1:
            pool.shutdown()

    hist = np.zeros((len(times), bins), dtype=np.int64)
    sums = []
    for j, tally in enumerate(tallies):
        for state, count in tally.items():
            if two_type:
                m, n = state
                b = m * (cap + 1) + n if m <= cap and n <= cap else bins - 1
            else:
                b = state if state <= cap else bins - 1
            hist[j, b] += count
        comps = 2 if two_type else 1
        sums.append(tuple(tuple(_power_sums(tally, c, 2 * k_max)) for c in range(comps)))
    if spec.kind is Kind.NOEXT and hist[:, 0].any():
        raise AssertionError("no-extinction trajectory reached m = 0")
    return EnsembleStats(
        spec=spec,
        base_seed=int(base_seed),
        trajectories=int(trajectories),
        sample_times=tuple(times),
        bin_cap=cap,
        histograms=hist,
        power_sums=tuple(sums),
        k_max=k_max,
    )
