"""Diffusion-scale integration of randomized allocation experiments.

Two independent integration routes are provided and kept deliberately
separate, because their agreement in law is itself a checked property:

* ``integrate_time_change``: the allocation q_k evolves by the sampling
  probability, and each arm's reward process is read off a Brownian motion
  running on that arm's own allocation clock,
  s_k(t) = mu_k q_k(t) + sigma_k W_k(q_k(t)).
* ``integrate_sde_em``: direct Euler stepping of the coupled system
  dq_k = pi_k dt, ds_k = pi_k mu_k dt + sigma_k sqrt(pi_k) dB_k.

The two routes consume noise from streams with different component tags,
so their outputs are independent samples of (what should be) the same law.

One-armed problems are integrated with an explicit outside-option
component (zero mean, zero volatility) appended, so the allocation
identity sum_k q_k = t holds on every path.

Warm start: integration begins at t0 > 0 with q_k(t0) = t0/K, the arm
clocks advanced to t0/K without sampling, and s_k(t0) = mu_k t0/K.
"""

from __future__ import annotations

import math
import os
from bisect import bisect_left
from dataclasses import dataclass

import numpy as np

from .harness import StreamKey, derive_stream
from .model import BanditInstance, Path, PolicySpec, validate_instance
from . import policies

# Component-id layout for stream derivation (see harness.StreamKey):
# arm k of the time-change route uses COMPONENT_TC + k, arm k of the
# Euler route uses COMPONENT_EM + k, and a pre-limit trajectory uses
# COMPONENT_TRAJECTORY.  At most _MAX_ARMS arms keeps the ranges disjoint.
COMPONENT_TC = 0
COMPONENT_EM = 1024
COMPONENT_TRAJECTORY = 2048
_MAX_ARMS = 1024

_POLICY_CODES = {"const": 0, "ts1": 1, "ts2": 2, "greedy": 3, "luce": 4,
                 "explore-ts1": 5, "explore-ts2": 6}
_METHOD_CODES = {"time-change": 0, "euler": 1}


class IntegrationError(RuntimeError):
    """A path produced a non-finite state or sampling probability."""


@dataclass(frozen=True)
class TimeGrid:
    """Integration grid on [t0, 1]: geometric warm-up, then uniform steps.

    The geometric segment places ``geometric_points`` points between t0 and
    ``geometric_end`` (log-spaced), resolving the early regime where
    sampling probabilities move on the scale of log log(1/t).  From
    ``geometric_end`` to 1 the step is uniform with target ``dt`` (rounded
    so the last point lands exactly on 1).
    """

    t0: float = 1e-6
    geometric_end: float = 1e-3
    geometric_points: int = 64
    dt: float = 1.0 / 8192.0

    def __post_init__(self):
        if not (0.0 < self.t0 < 1.0):
            raise ValueError("t0 must lie in (0, 1)")
        if self.t0 < self.geometric_end:
            if self.geometric_points < 1:
                raise ValueError("geometric segment needs at least one point")
            if not self.geometric_end < 1.0:
                raise ValueError("geometric_end must be < 1")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")

    @property
    def times(self) -> np.ndarray:
        if not hasattr(self, "_times"):
            if self.t0 >= self.geometric_end:
                geo = np.empty(0)
                start = self.t0
            else:
                ratio = (self.geometric_end / self.t0) ** (1.0 / self.geometric_points)
                geo = self.t0 * ratio ** np.arange(1, self.geometric_points + 1)
                geo[-1] = self.geometric_end
                start = self.geometric_end
            n_uniform = max(1, round((1.0 - start) / self.dt))
            uni = np.linspace(start, 1.0, n_uniform + 1)[1:]
            times = np.concatenate([[self.t0], geo, uni])
            if np.any(np.diff(times) <= 0.0):
                raise ValueError("grid times must be strictly increasing")
            object.__setattr__(self, "_times", times)
        return self._times

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    def index_at(self, t: float) -> int:
        """First grid index with time >= t."""
        return bisect_left(self.times.tolist(), t)


def default_grid() -> TimeGrid:
    return TimeGrid()


def instability_grid() -> TimeGrid:
    """Fine early-time grid for oscillation statistics near t = 0."""
    return TimeGrid(t0=1e-9, geometric_points=512)


class ArmClockNoise:
    """Brownian increments for each arm, indexed by the arm's own clock.

    ``query(k, u)`` advances arm k's Brownian motion to clock position u
    and returns its value there.  Every query consumes exactly one draw
    from the arm's stream (a zero-length advance adds a zero-variance
    increment), which keeps stream positions aligned with the batch
    engines' one-draw-per-step layout.
    """

    def __init__(self, streams):
        self._streams = list(streams)
        self._u = np.zeros(len(self._streams))
        self._w = np.zeros(len(self._streams))

    @classmethod
    def from_key(cls, master_seed: int, replication_id: int, n_arms: int,
                 component_base: int = COMPONENT_TC) -> "ArmClockNoise":
        if n_arms > _MAX_ARMS:
            raise ValueError(f"at most {_MAX_ARMS} arms supported")
        streams = [
            derive_stream(StreamKey(master_seed, replication_id, component_base + k))
            for k in range(n_arms)
        ]
        return cls(streams)

    @property
    def n_arms(self) -> int:
        return len(self._streams)

    def clock(self, k: int) -> float:
        return float(self._u[k])

    def advance_to(self, k: int, u: float) -> None:
        """Move arm k's clock to u without sampling (warm start only)."""
        if u < self._u[k]:
            raise ValueError("clock cannot run backwards")
        self._u[k] = u

    def query(self, k: int, u: float) -> float:
        du = u - self._u[k]
        if du < -1e-15:
            raise ValueError("clock cannot run backwards")
        xi = self._streams[k].standard_normal()
        self._w[k] += math.sqrt(max(du, 0.0)) * xi
        self._u[k] = u
        return float(self._w[k])


def _effective(inst: BanditInstance, policy: PolicySpec):
    """Engine-facing arm arrays, appending the outside option for K = 1."""
    validate_instance(inst)
    kind = policy.base_kind
    if kind == "ts1":
        if inst.n_arms != 1:
            raise ValueError("one-arm rules require a single-arm instance")
        mu = np.array([inst.mu[0], 0.0])
        sigma = np.array([inst.sigma[0], 0.0])
        return mu, sigma, True
    if kind == "ts2":
        if inst.n_arms != 2:
            raise ValueError("two-arm rules require a two-arm instance")
        if abs(inst.sigma[0] - inst.sigma[1]) > 1e-12:
            raise ValueError("two-arm posterior rules assume a common volatility")
    elif kind == "const":
        if len(policy.probs) != inst.n_arms:
            raise ValueError("const policy length must match the arm count")
    elif inst.n_arms < 2:
        raise ValueError(f"{policy.kind} requires at least two arms")
    return np.asarray(inst.mu, float), np.asarray(inst.sigma, float), False


def _pack_params(policy: PolicySpec, n_arms: int) -> np.ndarray:
    params = np.zeros(8)
    kind = policy.base_kind
    if kind == "ts1":
        params[0] = policy.c
    elif kind == "ts2":
        params[0] = policy.c
        params[1] = policy.d
    elif kind == "greedy":
        params[0] = policy.alpha
        params[1] = policy.smoothing
    elif kind == "luce":
        params[0] = policy.alpha
    elif kind == "const":
        if n_arms > 8:
            raise ValueError("const policy supports at most 8 arms")
        params[:n_arms] = policy.probs
    return params


def _check_limit_policy(policy: PolicySpec) -> None:
    if policy.form != "limit":
        raise ValueError("diffusion integration takes limit-form policies")


# ---------------------------------------------------------------------------
# Backend selection: compiled extension if available, numpy otherwise.

from . import _engine_py  # noqa: E402

try:  # pragma: no cover - exercised through whichever backend is active
    from . import _kernels
    _HAVE_KERNELS = True
except ImportError:  # pragma: no cover
    _kernels = None
    _HAVE_KERNELS = False

_FORCED = os.environ.get("DIFFBANDIT_BACKEND", "auto").lower()
if _FORCED not in ("auto", "compiled", "python"):
    raise RuntimeError(f"DIFFBANDIT_BACKEND must be auto|compiled|python, got {_FORCED!r}")
if _FORCED == "compiled" and not _HAVE_KERNELS:
    raise RuntimeError("DIFFBANDIT_BACKEND=compiled but the extension is not built")

_ACTIVE_BACKEND = "python" if (_FORCED == "python" or not _HAVE_KERNELS) else "compiled"


def active_backend() -> str:
    return _ACTIVE_BACKEND


def set_backend(name: str) -> None:
    """Switch the batch engine ('compiled' or 'python'); mainly for tests."""
    global _ACTIVE_BACKEND
    if name not in ("compiled", "python"):
        raise ValueError("backend must be 'compiled' or 'python'")
    if name == "compiled" and not _HAVE_KERNELS:
        raise RuntimeError("compiled backend is not available")
    _ACTIVE_BACKEND = name


def _engine(backend=None):
    name = backend or _ACTIVE_BACKEND
    if name == "compiled" and _HAVE_KERNELS:
        return _kernels
    return _engine_py


def noise_cube(master_seed: int, rep_lo: int, rep_hi: int, noisy_arms,
               component_base: int, n_steps: int, layout: str) -> np.ndarray:
    """Per-replication standard-normal draws for a block of paths.

    Layouts: 'path' gives shape (B, A, M) with each (path, arm) row
    contiguous; 'step' gives (M, B, A) with each step contiguous.  Both
    contain the same per-stream sequences (draw j of arm a of path r).
    """
    n_paths = rep_hi - rep_lo
    n_noisy = len(noisy_arms)
    if layout == "path":
        cube = np.empty((n_paths, n_noisy, n_steps))
        for b, rep in enumerate(range(rep_lo, rep_hi)):
            for a, arm in enumerate(noisy_arms):
                gen = derive_stream(StreamKey(master_seed, rep, component_base + arm))
                cube[b, a, :] = gen.standard_normal(n_steps)
    elif layout == "step":
        cube = np.empty((n_steps, n_paths, n_noisy))
        for b, rep in enumerate(range(rep_lo, rep_hi)):
            for a, arm in enumerate(noisy_arms):
                gen = derive_stream(StreamKey(master_seed, rep, component_base + arm))
                cube[:, b, a] = gen.standard_normal(n_steps)
    else:
        raise ValueError("layout must be 'path' or 'step'")
    return cube


def noise_spec(inst: BanditInstance, policy: PolicySpec, method: str,
               backend: str | None = None):
    """(noisy arm indices, component base, cube layout) for noise reuse."""
    mu, sigma, _ = _effective(inst, policy)
    noisy_arms = [k for k in range(len(mu)) if sigma[k] > 0.0]
    comp_base = COMPONENT_TC if method == "time-change" else COMPONENT_EM
    return noisy_arms, comp_base, _engine(backend).NOISE_LAYOUT


def simulate_batch(inst: BanditInstance, policy: PolicySpec, grid: TimeGrid,
                   method: str, master_seed: int, rep_lo: int, rep_hi: int,
                   *, snap_idx=None, pi_window=None, record: bool = False,
                   backend: str | None = None, noise: np.ndarray | None = None) -> dict:
    """Integrate replications [rep_lo, rep_hi) and return final states.

    Returns a dict with final 'q' and 's' of shape (B, K); 'regret' (B,);
    'snap_q'/'snap_s' (B, S, K) at the requested grid indices; 'pi_min' /
    'pi_max' (B,), extrema of arm 1's sampling probability over the grid
    index window ``pi_window`` (default: the whole path); and optional
    full traces.  Raises IntegrationError if any path hits a non-finite
    state (no clamping).

    ``noise`` may carry a cube from ``noise_cube(...)`` built for the same
    (master_seed, rep range, method, arms) so several policy/mean variants
    can share one set of draws (common random numbers).
    """
    _check_limit_policy(policy)
    mu, sigma, one_armed = _effective(inst, policy)
    n_arms = len(mu)
    times = grid.times
    n_steps = grid.n_steps
    params = _pack_params(policy, n_arms)
    if method not in _METHOD_CODES:
        raise ValueError("method must be 'time-change' or 'euler'")
    method_code = _METHOD_CODES[method]
    comp_base = COMPONENT_TC if method == "time-change" else COMPONENT_EM

    noisy_arms = [k for k in range(n_arms) if sigma[k] > 0.0]
    noise_map = np.full(n_arms, -1, dtype=np.int64)
    for row, arm in enumerate(noisy_arms):
        noise_map[arm] = row

    eng = _engine(backend)
    if noise is None:
        cube = noise_cube(master_seed, rep_lo, rep_hi, noisy_arms, comp_base,
                          n_steps, layout=eng.NOISE_LAYOUT)
    else:
        cube = noise
        expect = ((rep_hi - rep_lo, len(noisy_arms), n_steps)
                  if eng.NOISE_LAYOUT == "path"
                  else (n_steps, rep_hi - rep_lo, len(noisy_arms)))
        if cube.shape != expect:
            raise ValueError(f"noise cube shape {cube.shape} != expected {expect}")

    if snap_idx is None:
        snap_idx = np.empty(0, dtype=np.int64)
    else:
        snap_idx = np.asarray(snap_idx, dtype=np.int64)
        if snap_idx.size and (snap_idx.min() < 0 or snap_idx.max() > n_steps):
            raise ValueError("snapshot indices outside the grid")
    if pi_window is None:
        pi_lo, pi_hi = 0, n_steps + 1
    else:
        pi_lo, pi_hi = pi_window

    out = eng.integrate_batch(
        method_code, _POLICY_CODES[policy.kind], params, mu, sigma,
        times, cube, noise_map, snap_idx, int(pi_lo), int(pi_hi), bool(record),
    )

    bad = np.flatnonzero(out["status"])
    if bad.size:
        b = int(bad[0])
        step = int(out["abort_step"][b])
        raise IntegrationError(
            f"non-finite state in replication {rep_lo + b} at t = "
            f"{times[min(step, n_steps)]:.6g} (step {step}): q = {out['q'][b]}, "
            f"s = {out['s'][b]}; {bad.size} of {rep_hi - rep_lo} paths affected"
        )

    out["regret"] = regret_from_allocation(out["q"], mu)
    out["one_armed"] = one_armed
    return out


def regret_from_allocation(q_final, mu) -> np.ndarray:
    """Scaled regret max_k mu_k - <q(1), mu> for final allocations.

    ``mu`` here is the engine-facing mean vector, i.e. it already includes
    the zero outside option for one-armed problems, so the max covers the
    do-nothing benchmark.
    """
    q = np.atleast_2d(np.asarray(q_final, dtype=float))
    mu = np.asarray(mu, dtype=float)
    return float(np.max(mu)) - q @ mu


def scaled_regret(path, mu) -> float:
    """Terminal scaled regret of a path against means ``mu``.

    For a one-armed problem (len(mu) == 1) the benchmark includes the zero
    outside option: max(mu_1, 0).  ``path`` may be a Path or a final
    allocation vector.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    q = path.q[-1] if isinstance(path, Path) else np.asarray(path, dtype=float)
    best = max(mu[0], 0.0) if len(mu) == 1 else float(mu.max())
    return float(best - np.dot(q[: len(mu)], mu))


def pi_path(path: Path):
    """Sampling-probability series (times, pi) of a recorded path."""
    if path.pi is None:
        raise ValueError("path was integrated without probability recording")
    return path.times, path.pi


def _reference_loop(inst, policy, grid, *, method, noise=None, master_seed=0,
                    replication_id=0, record_pi=True):
    """Plain single-path integration used as the reference implementation."""
    _check_limit_policy(policy)
    mu, sigma, _ = _effective(inst, policy)
    n_arms = len(mu)
    times = grid.times
    n_pts = len(times)

    if method == "time-change":
        if noise is None:
            noise = ArmClockNoise.from_key(master_seed, replication_id, n_arms,
                                           COMPONENT_TC)
        elif noise.n_arms != n_arms:
            raise ValueError("noise source arm count does not match")
    else:
        streams = [
            derive_stream(StreamKey(master_seed, replication_id, COMPONENT_EM + k))
            for k in range(n_arms)
        ]

    q = np.full(n_arms, times[0] / n_arms)
    s = mu * q
    if method == "time-change":
        for k in range(n_arms):
            noise.advance_to(k, q[k])

    qs = np.empty((n_pts, n_arms))
    ss = np.empty((n_pts, n_arms))
    pis = np.empty((n_pts, n_arms)) if record_pi else None
    qs[0], ss[0] = q, s

    sig = float(sigma[0])
    for j in range(n_pts):
        pi = policies.evaluate_limit(policy, q, s, float(times[j]), sig)
        if not np.all(np.isfinite(pi)):
            raise IntegrationError(
                f"non-finite probability at t = {times[j]:.6g}: q = {q}, s = {s}"
            )
        if record_pi:
            pis[j] = pi
        if j == n_pts - 1:
            break
        dt = times[j + 1] - times[j]
        dq = pi * dt
        q = q + dq
        if method == "time-change":
            for k in range(n_arms):
                w = noise.query(k, q[k])
                s[k] = mu[k] * q[k] + sigma[k] * w
        else:
            for k in range(n_arms):
                xi = streams[k].standard_normal() if sigma[k] > 0.0 else 0.0
                s[k] = s[k] + mu[k] * dq[k] + sigma[k] * math.sqrt(dq[k]) * xi
        if not np.all(np.isfinite(s)):
            raise IntegrationError(
                f"non-finite state at t = {times[j + 1]:.6g}: q = {q}, s = {s}"
            )
        qs[j + 1], ss[j + 1] = q, s

    regret = float(regret_from_allocation(q, mu)[0])
    return Path(times=times.copy(), q=qs, s=ss, regret=regret, pi=pis,
                method=method)


def integrate_time_change(inst: BanditInstance, policy: PolicySpec,
                          grid: TimeGrid | None = None, noise: ArmClockNoise | None = None,
                          *, master_seed: int = 0, replication_id: int = 0,
                          record_pi: bool = True) -> Path:
    """Integrate one path by running each arm's noise on its own clock."""
    return _reference_loop(inst, policy, grid or default_grid(),
                           method="time-change", noise=noise,
                           master_seed=master_seed, replication_id=replication_id,
                           record_pi=record_pi)


def integrate_sde_em(inst: BanditInstance, policy: PolicySpec,
                     grid: TimeGrid | None = None, *, master_seed: int = 0,
                     replication_id: int = 0, record_pi: bool = True) -> Path:
    """Integrate one path by direct Euler stepping of the coupled system."""
    return _reference_loop(inst, policy, grid or default_grid(),
                           method="euler", master_seed=master_seed,
                           replication_id=replication_id, record_pi=record_pi)
