"""Deterministic replication harness.

Every random draw in the package is pulled from a counter-based stream that
is derived, statelessly, from a triple ``(master_seed, replication_id,
component_id)``.  Replications therefore do not share state, results do not
depend on how work is scheduled across workers, and any single replication
can be reproduced in isolation.

Collision note: the triple is absorbed into a 128-bit Philox key through
three rounds of the splitmix64 finalizer with distinct round constants.
The map is not injective over the full 192-bit input space, but for any
realistic number of streams m the chance that two distinct triples collide
is about m^2 / 2^129 (birthday bound on the derived key), i.e. negligible
below ~2^50 streams.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

_MASK64 = (1 << 64) - 1

# Round constants for absorbing the three key fields.  Arbitrary odd 64-bit
# words; they only need to be distinct so that permuting field values does
# not produce the same key.
_C_MASTER = 0x9E3779B97F4A7C15
_C_REP = 0xC2B2AE3D27D4EB4F
_C_COMP = 0x165667B19E3779F9
_C_LO = 0xD6E8FEB86659FD93
_C_HI = 0x2545F4914F6CDD1D

# 95% two-sided normal quantile, used for confidence intervals.
Z95 = 1.959963984540054


def _mix64(z: int) -> int:
    """splitmix64 finalizer (Python int, wraps modulo 2**64)."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class StreamKey:
    """Address of one random stream: (master seed, replication, component).

    ``component_id`` separates the independent noise sources inside a single
    replication (one per arm, per integrator, plus the raw-word stream of a
    pre-limit trajectory).  See the COMPONENT_* constants in the modules
    that own each source.
    """

    master_seed: int
    replication_id: int
    component_id: int

    def __post_init__(self):
        if self.replication_id < 0:
            raise ValueError("replication_id must be >= 0")
        if self.component_id < 0:
            raise ValueError("component_id must be >= 0")

    def words(self) -> tuple[int, int]:
        """128-bit Philox key for this stream, as two 64-bit words."""
        h = _mix64((self.master_seed & _MASK64) ^ _C_MASTER)
        h = _mix64(h ^ _mix64(self.replication_id ^ _C_REP))
        h = _mix64(h ^ _mix64(self.component_id ^ _C_COMP))
        return _mix64(h ^ _C_LO), _mix64(h ^ _C_HI)


def derive_stream(key: StreamKey) -> np.random.Generator:
    """Independent generator for ``key``; stateless and order-free."""
    k0, k1 = key.words()
    bg = np.random.Philox(key=np.array([k0, k1], dtype=np.uint64))
    return np.random.Generator(bg)


def _mix64_vec(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(0xBF58476D1CE4E5B9)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def stream_key_words(master_seed: int, replication_ids, component_id: int):
    """Vectorized ``StreamKey.words`` over an array of replication ids.

    Returns a (len, 2) uint64 array matching the scalar derivation exactly.
    """
    reps = np.asarray(replication_ids, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h0 = _mix64(np.uint64((master_seed & _MASK64) ^ _C_MASTER))
        h = _mix64_vec(np.uint64(h0) ^ _mix64_vec(reps ^ np.uint64(_C_REP)))
        h = _mix64_vec(h ^ np.uint64(_mix64(component_id ^ _C_COMP)))
        lo = _mix64_vec(h ^ np.uint64(_C_LO))
        hi = _mix64_vec(h ^ np.uint64(_C_HI))
    return np.stack([lo, hi], axis=1)


@dataclass
class Aggregate:
    """Mergeable running statistics (count, mean, M2, min, max).

    Uses the pairwise-combination form of Welford's update, so merging is
    associative and commutative up to floating-point rounding: splitting a
    job across any number of workers yields the same moments.

    A statistic may additionally retain its raw per-replication samples
    (``keep_samples=True``), tagged by replication id so that merged sample
    sets are also independent of scheduling.
    """

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    minimum: float = np.inf
    maximum: float = -np.inf
    keep_samples: bool = False
    sample_ids: np.ndarray = field(default_factory=lambda: np.empty(0, np.uint64))
    sample_values: np.ndarray = field(default_factory=lambda: np.empty(0))

    @classmethod
    def from_block(cls, values, rep_ids=None, keep_samples=False) -> "Aggregate":
        """Aggregate one block of per-replication values in a single pass."""
        v = np.asarray(values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("block values must be one-dimensional")
        agg = cls(keep_samples=keep_samples)
        if v.size == 0:
            return agg
        agg.count = int(v.size)
        agg.mean = float(v.mean())
        agg.m2 = float(np.sum((v - agg.mean) ** 2))
        agg.minimum = float(v.min())
        agg.maximum = float(v.max())
        if keep_samples:
            if rep_ids is None:
                raise ValueError("rep_ids required when keep_samples=True")
            ids = np.asarray(rep_ids, dtype=np.uint64)
            order = np.argsort(ids, kind="stable")
            agg.sample_ids = ids[order]
            agg.sample_values = v[order]
        return agg

    def update(self, x: float, rep_id: int | None = None) -> None:
        """Single-value Welford update."""
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)
        self.minimum = min(self.minimum, x)
        self.maximum = max(self.maximum, x)
        if self.keep_samples:
            if rep_id is None:
                raise ValueError("rep_id required when keep_samples=True")
            self.sample_ids = np.append(self.sample_ids, np.uint64(rep_id))
            self.sample_values = np.append(self.sample_values, x)

    def merge(self, other: "Aggregate") -> "Aggregate":
        """Combine two disjoint aggregates; does not mutate either input."""
        if self.count == 0:
            return other.copy()
        if other.count == 0:
            return self.copy()
        total = self.count + other.count
        delta = other.mean - self.mean
        out = Aggregate(
            count=total,
            mean=self.mean + delta * other.count / total,
            m2=self.m2 + other.m2 + delta * delta * self.count * other.count / total,
            minimum=min(self.minimum, other.minimum),
            maximum=max(self.maximum, other.maximum),
            keep_samples=self.keep_samples or other.keep_samples,
        )
        if out.keep_samples:
            ids = np.concatenate([self.sample_ids, other.sample_ids])
            vals = np.concatenate([self.sample_values, other.sample_values])
            order = np.argsort(ids, kind="stable")
            out.sample_ids = ids[order]
            out.sample_values = vals[order]
        return out

    def copy(self) -> "Aggregate":
        return Aggregate(
            count=self.count,
            mean=self.mean,
            m2=self.m2,
            minimum=self.minimum,
            maximum=self.maximum,
            keep_samples=self.keep_samples,
            sample_ids=self.sample_ids.copy(),
            sample_values=self.sample_values.copy(),
        )

    @property
    def variance(self) -> float:
        """Unbiased sample variance."""
        if self.count < 2:
            return float("nan")
        return self.m2 / (self.count - 1)

    @property
    def stderr(self) -> float:
        if self.count < 2:
            return float("nan")
        return float(np.sqrt(self.variance / self.count))

    def ci95(self) -> tuple[float, float]:
        """Two-sided 95% normal confidence interval for the mean."""
        half = Z95 * self.stderr
        return self.mean - half, self.mean + half


def default_workers() -> int:
    """Worker-count default; override with DIFFBANDIT_WORKERS."""
    env = os.environ.get("DIFFBANDIT_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


# Replications are processed in fixed-size blocks regardless of worker
# count, and block aggregates are merged in block order, so results do not
# depend on scheduling.
BLOCK_SIZE = 4096


def run_replications(job, reps: int, master_seed: int, *, workers: int | None = None,
                     block_size: int | None = None) -> dict[str, Aggregate]:
    """Run ``reps`` independent replications of ``job`` and aggregate.

    ``job`` must provide ``run_block(master_seed, rep_lo, rep_hi) -> dict``
    mapping statistic names to per-replication float arrays, and may expose
    ``retained``, an iterable of statistic names whose raw samples should be
    kept (tagged by replication id).

    Returns one Aggregate per statistic.  The result is a pure function of
    (job, reps, master_seed): blocks have a fixed size and their aggregates
    are merged in block order, so worker count does not affect the output.
    """
    if reps <= 0:
        raise ValueError("reps must be positive")
    if workers is None:
        workers = default_workers()
    if block_size is None:
        block_size = getattr(job, "block_size", None) or BLOCK_SIZE
    retained = frozenset(getattr(job, "retained", ()) or ())

    bounds = [(lo, min(lo + block_size, reps)) for lo in range(0, reps, block_size)]

    def one_block(span):
        lo, hi = span
        stats = job.run_block(master_seed, lo, hi)
        ids = np.arange(lo, hi, dtype=np.uint64)
        out = {}
        for name, values in stats.items():
            out[name] = Aggregate.from_block(
                values, rep_ids=ids, keep_samples=name in retained
            )
        return out

    if workers == 1 or len(bounds) == 1:
        block_aggs = [one_block(span) for span in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            block_aggs = list(pool.map(one_block, bounds))

    merged: dict[str, Aggregate] = {}
    for aggs in block_aggs:  # block order is fixed
        for name, agg in aggs.items():
            merged[name] = merged[name].merge(agg) if name in merged else agg
    return merged
