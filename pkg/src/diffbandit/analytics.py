"""Monte Carlo experiments and closed-form comparisons.

Builds on the replication harness: every experiment is a deterministic
function of its parameters and a master seed.  Profile-style experiments
reuse one set of noise draws across all parameter cells (common random
numbers), so cell-to-cell differences are not washed out by sampling noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import ks_2samp

from . import diffusion
from .harness import Aggregate, run_replications
from .model import BanditInstance, PolicySpec
from .prelimit import simulate_block


def ks_distance(a, b) -> float:
    """Two-sample Kolmogorov distance (statistic only)."""
    return float(ks_2samp(a, b, method="asymp").statistic)


def default_tempering(c: float, d: Optional[float]) -> float:
    """Two-arm tempering default: a tiny floor when c = 0, else none.

    The undersmoothed two-arm rule has an unbounded posterior precision
    ratio as t -> 0; a d of 1e-8 regularizes the first few warm-start steps
    without measurably moving terminal statistics.
    """
    if d is not None:
        return d
    return 1e-8 if c == 0.0 else 0.0


def _instance_for(family: str, gap: float, sigma: float) -> BanditInstance:
    if family == "ts1":
        return BanditInstance((gap,), (sigma,))
    if family == "ts2":
        if gap == 0.0:
            raise ValueError("two-arm experiments need a nonzero gap")
        return BanditInstance((abs(gap), 0.0), (sigma, sigma))
    raise ValueError("family must be 'ts1' or 'ts2'")


def _policy_for(family: str, c: float, d: Optional[float]) -> PolicySpec:
    if family == "ts1":
        return PolicySpec("ts1", c=c)
    return PolicySpec("ts2", c=c, d=default_tempering(c, d))


# ---------------------------------------------------------------------------
# Replication jobs


@dataclass(frozen=True)
class DiffusionJob:
    """Harness job: integrate one (instance, policy) at the diffusion scale.

    Statistics produced per replication: 'regret', 'q1' (terminal scaled
    allocation of arm 1), per-snapshot scaled rewards 's[t][k]' and
    allocations 'q[t][k]', and, when ``eta`` is set, the window-crossing
    indicators 'hit_high' / 'hit_low' / 'hit_both' for arm 1's sampling
    probability over grid times in [t0, eps).
    """

    inst: BanditInstance
    policy: PolicySpec
    grid: diffusion.TimeGrid
    method: str = "time-change"
    snap_times: tuple = ()
    eta: Optional[float] = None
    eps: Optional[float] = None
    retained: tuple = ()
    block_size: Optional[int] = None
    backend: Optional[str] = None

    def _snap_idx(self):
        return np.array([nearest_index(self.grid, t) for t in self.snap_times],
                        dtype=np.int64)

    def _pi_window(self):
        if self.eta is None:
            return None
        if self.eps is None:
            raise ValueError("eps required with eta")
        if self.grid.t0 >= self.eps:
            raise ValueError("grid must start below eps to observe the window")
        return (0, self.grid.index_at(self.eps))

    def run_block(self, master_seed: int, rep_lo: int, rep_hi: int) -> dict:
        out = diffusion.simulate_batch(
            self.inst, self.policy, self.grid, self.method, master_seed,
            rep_lo, rep_hi, snap_idx=self._snap_idx(),
            pi_window=self._pi_window(), backend=self.backend,
        )
        stats = {"regret": out["regret"], "q1": out["q"][:, 0]}
        for si, t in enumerate(self.snap_times):
            for k in range(out["q"].shape[1]):
                stats[f"q[{t}][{k}]"] = out["snap_q"][:, si, k]
                stats[f"s[{t}][{k}]"] = out["snap_s"][:, si, k]
        if self.eta is not None:
            high = out["pi_max"] >= 1.0 - self.eta
            low = out["pi_min"] <= self.eta
            stats["hit_high"] = high.astype(float)
            stats["hit_low"] = low.astype(float)
            stats["hit_both"] = (high & low).astype(float)
        return stats


@dataclass(frozen=True)
class PrelimitJob:
    """Harness job: simulate one finite-horizon configuration.

    Statistics: 'regret' (raw regret / sqrt(n)), 'q1' (terminal pull share
    of arm 1), and per-snapshot scaled 'q[t][k]' / 's[t][k]'.
    """

    inst: BanditInstance
    policy: PolicySpec
    horizon: int
    family: str = "gaussian"
    snap_times: tuple = ()
    retained: tuple = ()
    block_size: int = 1024

    def run_block(self, master_seed: int, rep_lo: int, rep_hi: int) -> dict:
        out = simulate_block(self.inst, self.policy, self.horizon, self.family,
                             master_seed, rep_lo, rep_hi,
                             snap_times=np.asarray(self.snap_times))
        stats = {"regret": out["regret"], "q1": out["q"][:, 0]}
        for si, t in enumerate(self.snap_times):
            for k in range(out["q"].shape[1]):
                stats[f"q[{t}][{k}]"] = out["snap_q"][:, si, k]
                stats[f"s[{t}][{k}]"] = out["snap_s"][:, si, k]
        return stats


def nearest_index(grid: diffusion.TimeGrid, t: float) -> int:
    """Grid index closest to time t."""
    times = grid.times
    j = int(np.searchsorted(times, t))
    if j == 0:
        return 0
    if j >= len(times):
        return len(times) - 1
    return j if times[j] - t <= t - times[j - 1] else j - 1


def run_diffusion_cells(cells, reps: int, master_seed: int, *,
                        grid: diffusion.TimeGrid, method: str = "time-change",
                        workers: int | None = None,
                        block_size: int | None = None) -> list[dict]:
    """Run several (instance, policy) cells on shared noise draws.

    ``cells`` is a sequence of (inst, policy).  All cells must use the same
    noisy-arm layout so one noise cube per block serves every cell (common
    random numbers across cells).  Returns one dict of Aggregates
    ('regret', 'q1') per cell, in order.
    """
    cells = list(cells)
    specs = [diffusion.noise_spec(inst, pol, method) for inst, pol in cells]
    noisy_arms, comp_base, layout = specs[0]
    for sp in specs[1:]:
        if sp != specs[0]:
            raise ValueError("cells must share a noise layout to share draws")

    class _CellsJob:
        retained = ()

        def run_block(self, seed, lo, hi):
            cube = diffusion.noise_cube(seed, lo, hi, noisy_arms, comp_base,
                                        grid.n_steps, layout)
            stats = {}
            for ci, (inst, pol) in enumerate(cells):
                out = diffusion.simulate_batch(inst, pol, grid, method, seed,
                                               lo, hi, noise=cube)
                stats[f"{ci}:regret"] = out["regret"]
                stats[f"{ci}:q1"] = out["q"][:, 0]
            return stats

    job = _CellsJob()
    job.block_size = block_size
    merged = run_replications(job, reps, master_seed, workers=workers)
    results = []
    for ci in range(len(cells)):
        results.append({
            "regret": merged[f"{ci}:regret"],
            "q1": merged[f"{ci}:q1"],
        })
    return results


# ---------------------------------------------------------------------------
# Experiments


@dataclass(frozen=True)
class ProfileRow:
    family: str
    gap: float
    c: float
    mean_regret: float
    stderr: float
    mean_q1: float
    reps: int


def regret_profile(family: str, gaps, cs, reps: int, master_seed: int, *,
                   sigma: float = 1.0, d: Optional[float] = None,
                   grid: diffusion.TimeGrid | None = None,
                   method: str = "time-change",
                   workers: int | None = None) -> list[ProfileRow]:
    """Mean terminal regret over a (gap, c) grid, with shared draws.

    Cells sharing a replication index reuse the same noise, so profiles are
    smooth in (gap, c) up to the policy's own response.
    """
    grid = grid or diffusion.default_grid()
    gaps = [float(g) for g in gaps]
    cs = [float(c) for c in cs]
    cells = []
    names = []
    for gap in gaps:
        for c in cs:
            cells.append((_instance_for(family, gap, sigma),
                          _policy_for(family, c, d)))
            names.append((gap, c))
    results = run_diffusion_cells(cells, reps, master_seed, grid=grid,
                                  method=method, workers=workers)
    rows = []
    for (gap, c), aggs in zip(names, results):
        rows.append(ProfileRow(
            family=family, gap=gap, c=c,
            mean_regret=aggs["regret"].mean, stderr=aggs["regret"].stderr,
            mean_q1=aggs["q1"].mean, reps=aggs["regret"].count,
        ))
    return rows


@dataclass(frozen=True)
class HistogramResult:
    delta: float
    c: float
    edges: np.ndarray
    counts: np.ndarray
    n_below: int
    n_above: int
    reps: int

    def rows(self):
        return [(float(self.edges[i]), float(self.edges[i + 1]), int(self.counts[i]))
                for i in range(len(self.counts))]


def regret_histogram(delta: float, c: float, reps: int, master_seed: int, *,
                     bins: int = 60, d: Optional[float] = None,
                     sigma: float = 1.0,
                     grid: diffusion.TimeGrid | None = None,
                     method: str = "time-change",
                     workers: int | None = None) -> HistogramResult:
    """Terminal-regret histogram of the two-arm rule on [0, |gap|].

    The terminal regret equals |gap| times the losing arm's allocation, so
    all mass lies in [0, |gap|]; counts falling outside (floating-point
    slack only) are reported separately, not clipped into the edge bins.
    """
    delta = abs(float(delta))
    job = DiffusionJob(
        inst=_instance_for("ts2", delta, sigma),
        policy=_policy_for("ts2", c, d),
        grid=grid or diffusion.default_grid(),
        method=method,
        retained=("regret",),
    )
    aggs = run_replications(job, reps, master_seed, workers=workers)
    samples = aggs["regret"].sample_values
    counts, edges = np.histogram(samples, bins=bins, range=(0.0, delta))
    return HistogramResult(
        delta=delta, c=c, edges=edges, counts=counts,
        n_below=int((samples < 0.0).sum()),
        n_above=int((samples > delta).sum()),
        reps=len(samples),
    )


@dataclass(frozen=True)
class ScalingRow:
    gap: float
    c: float
    mean_regret: float
    stderr: float
    scaled_product: float  # mean_regret * |gap|**beta


@dataclass(frozen=True)
class ScalingResult:
    family: str
    c: float
    beta: float
    rows: list
    regret_increasing: bool  # strictly, in |gap| order
    product_decreasing: bool  # strictly, in |gap| order


def superdiffusive_check(family: str, gaps, c: float, reps: int,
                         master_seed: int, *, beta: float = 0.5,
                         sigma: float = 1.0, d: Optional[float] = None,
                         grid: diffusion.TimeGrid | None = None,
                         method: str = "time-change",
                         workers: int | None = None) -> ScalingResult:
    """Growth-versus-gap diagnostic for large gaps.

    With prior tightness c > 0 mean regret grows without bound as the gap
    widens; with c = 0 it vanishes faster than any power |gap|^-beta,
    beta < 1.  The result reports mean regret per gap plus the product
    mean * |gap|^beta and strict-monotonicity flags across the gap grid
    (ordered by |gap|).
    """
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    gaps = sorted((float(g) for g in gaps), key=abs)
    rows = []
    profile = regret_profile(family, gaps, [c], reps, master_seed, sigma=sigma,
                             d=d, grid=grid, method=method, workers=workers)
    for pr in profile:
        rows.append(ScalingRow(
            gap=pr.gap, c=c, mean_regret=pr.mean_regret, stderr=pr.stderr,
            scaled_product=pr.mean_regret * abs(pr.gap) ** beta,
        ))
    means = [r.mean_regret for r in rows]
    products = [r.scaled_product for r in rows]
    return ScalingResult(
        family=family, c=c, beta=beta, rows=rows,
        regret_increasing=all(b > a for a, b in zip(means, means[1:])),
        product_decreasing=all(b < a for a, b in zip(products, products[1:])),
    )


@dataclass(frozen=True)
class InstabilityResult:
    mu: float
    eps: float
    eta: float
    p_high: float
    p_low: float
    p_both: float
    stderr_high: float
    stderr_low: float
    stderr_both: float
    reps: int


def instability_frequencies(mu: float, eps: float, eta: float, reps: int,
                            master_seed: int, *, c: float = 0.0,
                            sigma: float = 1.0,
                            grid: diffusion.TimeGrid | None = None,
                            method: str = "time-change",
                            workers: int | None = None) -> InstabilityResult:
    """How often arm 1's sampling probability crosses both eta bands early.

    Measures, over grid times in [t0, eps), the fraction of paths whose
    probability reaches at least 1 - eta ('high'), at most eta ('low'),
    and both.  The undersmoothed one-arm rule oscillates across both bands
    on every path as eps -> 0 in continuous time; a finite grid resolves
    this down to its t0.
    """
    if not 0.0 < eta < 0.5:
        raise ValueError("eta must lie in (0, 1/2)")
    grid = grid or diffusion.instability_grid()
    if grid.t0 >= eps:
        raise ValueError("grid.t0 must lie below eps")
    job = DiffusionJob(
        inst=BanditInstance((mu,), (sigma,)),
        policy=PolicySpec("ts1", c=c),
        grid=grid, method=method, eta=eta, eps=eps,
    )
    aggs = run_replications(job, reps, master_seed, workers=workers)
    return InstabilityResult(
        mu=mu, eps=eps, eta=eta,
        p_high=aggs["hit_high"].mean, p_low=aggs["hit_low"].mean,
        p_both=aggs["hit_both"].mean,
        stderr_high=aggs["hit_high"].stderr, stderr_low=aggs["hit_low"].stderr,
        stderr_both=aggs["hit_both"].stderr,
        reps=aggs["hit_both"].count,
    )


# ---------------------------------------------------------------------------
# Finite-horizon versus limit


@dataclass(frozen=True)
class SnapshotStats:
    """Mean and stderr of arm 1's scaled allocation and reward at one time."""

    mean_q1: float
    stderr_q1: float
    mean_s1: float
    stderr_s1: float


@dataclass(frozen=True)
class ConvergenceResult:
    """Finite-horizon snapshot means against the diffusion reference.

    ``limit`` maps snapshot time t to SnapshotStats under the limit
    dynamics; ``finite`` maps (horizon, t) to the same under the pre-limit
    simulator; ``ks_terminal`` maps horizon to the Kolmogorov distance
    between terminal q1 samples (finite vs limit).
    """

    snap_times: tuple
    horizons: tuple
    limit: dict
    finite: dict
    ks_terminal: dict
    reps: int


def convergence_report(inst: BanditInstance, policy: PolicySpec, horizons,
                       reps: int, master_seed: int, *,
                       family: str = "gaussian",
                       snap_times=(0.25, 0.5, 0.75, 1.0),
                       grid: diffusion.TimeGrid | None = None,
                       method: str = "time-change",
                       workers: int | None = None) -> ConvergenceResult:
    """Compare finite-horizon runs to the diffusion limit at fixed times.

    Runs one diffusion reference and one pre-limit experiment per horizon,
    all with ``reps`` replications, and reports arm 1's scaled allocation
    and cumulative reward at each snapshot time plus the terminal
    Kolmogorov distance per horizon.  The limit and finite samples use
    disjoint stream components, so the distance estimates are between
    independent samples.
    """
    grid = grid or diffusion.default_grid()
    snap_times = tuple(float(t) for t in snap_times)
    horizons = tuple(int(n) for n in horizons)

    def stats_at(aggs, t):
        return SnapshotStats(
            mean_q1=aggs[f"q[{t}][0]"].mean, stderr_q1=aggs[f"q[{t}][0]"].stderr,
            mean_s1=aggs[f"s[{t}][0]"].mean, stderr_s1=aggs[f"s[{t}][0]"].stderr,
        )

    ref_job = DiffusionJob(inst=inst, policy=policy, grid=grid, method=method,
                           snap_times=snap_times, retained=("q1",))
    ref = run_replications(ref_job, reps, master_seed, workers=workers)
    limit = {t: stats_at(ref, t) for t in snap_times}
    limit_q1 = ref["q1"].sample_values

    finite = {}
    ks_terminal = {}
    for n in horizons:
        job = PrelimitJob(inst=inst, policy=policy, horizon=n, family=family,
                          snap_times=snap_times, retained=("q1",))
        aggs = run_replications(job, reps, master_seed, workers=workers)
        for t in snap_times:
            finite[(n, t)] = stats_at(aggs, t)
        ks_terminal[n] = ks_distance(aggs["q1"].sample_values, limit_q1)

    return ConvergenceResult(
        snap_times=snap_times, horizons=horizons, limit=limit, finite=finite,
        ks_terminal=ks_terminal, reps=reps,
    )


# ---------------------------------------------------------------------------
# Worst-case bound comparisons

BOUND_ALGORITHMS = ("ucb", "thompson", "moss", "improved-ucb", "oracle-etc")


def bound_raw(algorithm: str, gap: float, horizon: int, sigma: float = 1.0) -> float:
    """Published worst-case regret bound at a finite horizon (raw units).

    ``gap`` is the raw mean gap between the two arms.  The 'thompson'
    entry divides by the Gaussian information number gap^2 / (2 sigma^2).
    """
    if gap <= 0.0:
        raise ValueError("gap must be positive")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    n = float(horizon)
    if algorithm == "ucb":
        return 3.0 * gap + 16.0 * math.log(n) / gap
    if algorithm == "thompson":
        info = gap * gap / (2.0 * sigma * sigma)
        return math.log(n) * gap / info
    if algorithm == "moss":
        return 39.0 * math.sqrt(2.0 * n) + gap
    if algorithm == "improved-ucb":
        return min(gap + 32.0 * math.log(n * gap * gap) / gap + 96.0 / gap,
                   n * gap)
    if algorithm == "oracle-etc":
        return min((4.0 / gap) * (1.0 + max(math.log(n * gap * gap / 4.0), 0.0)),
                   n * gap)
    raise ValueError(f"unknown algorithm {algorithm!r}")


def bound_scaled(algorithm: str, delta: float, sigma: float = 1.0) -> float:
    """Diffusion-scale limit of the worst-case bound at scaled gap delta.

    Evaluated along gap = delta / sqrt(n): logarithmic-regret guarantees
    ('ucb', 'thompson') blow up, minimax-style ones stay finite.
    """
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    if algorithm in ("ucb", "thompson"):
        return math.inf
    if algorithm == "moss":
        return 39.0 * math.sqrt(2.0)
    if algorithm == "improved-ucb":
        return min(64.0 * math.log(delta) / delta + 96.0 / delta, delta)
    if algorithm == "oracle-etc":
        return min((4.0 / delta) * (1.0 + max(math.log(delta * delta / 4.0), 0.0)),
                   delta)
    raise ValueError(f"unknown algorithm {algorithm!r}")


# ---------------------------------------------------------------------------
# CSV emission

PROFILE_HEADER = "family,gap,c,mean_regret,stderr,mean_q1,reps"
HISTOGRAM_HEADER = "bin_lo,bin_hi,count"
BOUNDS_HEADER = "algorithm,delta,scaled_bound"


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
        if v == int(v) and abs(v) < 1e16:
            return str(int(v))
        return repr(v)
    return str(v)


def csv_lines(header: str, rows) -> list[str]:
    """Render rows (sequences of values) under a fixed header."""
    lines = [header]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    return lines


def profile_csv(rows: list[ProfileRow]) -> list[str]:
    return csv_lines(PROFILE_HEADER, [
        (r.family, r.gap, r.c, r.mean_regret, r.stderr, r.mean_q1, r.reps)
        for r in rows
    ])


def histogram_csv(result: HistogramResult) -> list[str]:
    return csv_lines(HISTOGRAM_HEADER, result.rows())


def bounds_csv(deltas, algorithms=BOUND_ALGORITHMS, sigma: float = 1.0) -> list[str]:
    rows = []
    for algorithm in algorithms:
        for delta in deltas:
            rows.append((algorithm, float(delta),
                         bound_scaled(algorithm, float(delta), sigma)))
    return csv_lines(BOUNDS_HEADER, rows)


CONVERGENCE_HEADER = ("n,t,mean_q1,stderr_q1,mean_s1,stderr_s1,"
                      "limit_mean_q1,limit_stderr_q1,limit_mean_s1,"
                      "limit_stderr_s1,ks_q1_terminal")


def convergence_csv(result: ConvergenceResult) -> list[str]:
    """One row per (horizon, snapshot time); the Kolmogorov distance of the
    terminal allocation appears on each horizon's last row only."""
    rows = []
    for n in result.horizons:
        for t in result.snap_times:
            f = result.finite[(n, t)]
            l = result.limit[t]
            ks = result.ks_terminal[n] if t == result.snap_times[-1] else ""
            rows.append((n, t, f.mean_q1, f.stderr_q1, f.mean_s1, f.stderr_s1,
                         l.mean_q1, l.stderr_q1, l.mean_s1, l.stderr_s1, ks))
    return csv_lines(CONVERGENCE_HEADER, rows)
