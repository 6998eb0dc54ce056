"""Finite-horizon simulation of sequentially randomized experiments.

A run of horizon n draws, each period, an arm from the policy's probability
vector and then a reward for that arm.  Rewards are scaled so the mean per
pull of arm k is mu_k / sqrt(n) while the variance stays near sigma_k^2,
which is the regime in which the scaled trajectories approach the diffusion
dynamics in `diffusion`.

Raw-word protocol (stable across refactors, documented so replays never
shift): each trajectory owns one counter-based stream; period i (0-based)
consumes exactly two 64-bit words, word 2i for the action and word 2i+1
for the reward.  Words are consumed even when they are unused (forced
opening pulls, outside-option rewards), so trajectories can be replayed
and extended deterministically.  A word w maps to the open-interval
uniform u = ((w >> 11) + 0.5) * 2^-53.

One-armed problems carry an explicit outside-option arm (index 1) paying
exactly zero.  Two-arm posterior rules open with one deterministic pull of
each arm (arm 0, then arm 1) so their statistics are well defined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .diffusion import COMPONENT_TRAJECTORY
from .harness import StreamKey, derive_stream
from .model import BanditInstance, PolicySpec, validate_instance
from .policies import normal_cdf

_U53 = 2.0 ** -53
_SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class RawTrajectory:
    """One finite-horizon run, in raw (unscaled) units.

    ``pulls`` and ``sums`` are cumulative, with row i the state after i
    periods (row 0 is zero).  For one-armed problems the arrays include the
    outside-option column.
    """

    horizon: int
    actions: np.ndarray
    rewards: np.ndarray
    pulls: np.ndarray
    sums: np.ndarray

    @property
    def n_arms(self) -> int:
        return self.pulls.shape[1]


def _effective_finite(inst: BanditInstance, policy: PolicySpec, horizon: int,
                      family: str):
    """Finite-form policy plus engine-facing raw mean/volatility arrays."""
    validate_instance(inst, horizon=horizon, family=family)
    if policy.form == "limit":
        policy = policy.to_finite(horizon)
    elif policy.horizon != horizon:
        raise ValueError("policy horizon does not match the requested horizon")
    kind = policy.base_kind
    if kind == "ts1":
        if inst.n_arms != 1:
            raise ValueError("one-arm rules require a single-arm instance")
        mu_n = np.array([inst.mu[0] / math.sqrt(horizon), 0.0])
        sigma = np.array([inst.sigma[0], 0.0])
        return policy, mu_n, sigma, True
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
    mu_n = np.asarray(inst.mu, float) / math.sqrt(horizon)
    return policy, mu_n, np.asarray(inst.sigma, float), False


def _pi_finite_block(policy: PolicySpec, pulls, sums, period: int,
                     sigma0: float) -> np.ndarray:
    """Vectorized finite-form probabilities for a block of runs: (B, K)."""
    kind = policy.base_kind
    if kind == "ts1":
        inv_s2 = 1.0 / (sigma0 * sigma0)
        x = inv_s2 * sums[:, 0] / np.sqrt(inv_s2 * pulls[:, 0] + policy.nu ** -2)
        p = normal_cdf(x)
        pi = np.stack([p, 1.0 - p], axis=1)
    elif kind == "ts2":
        q1, q2 = pulls[:, 0], pulls[:, 1]
        inv_a2 = q1 * q2 / (sigma0 * sigma0 * period)
        gap = sums[:, 0] / q1 - sums[:, 1] / q2
        var = inv_a2 + policy.nu ** -2
        if policy.zeta is not None:
            var = var + policy.zeta ** -2 * (policy.horizon / period) ** 2
        p = normal_cdf(inv_a2 * gap / np.sqrt(var))
        pi = np.stack([p, 1.0 - p], axis=1)
    elif kind == "greedy":
        ratio = policy.alpha * sums / (pulls + policy.smoothing)
        w = np.exp(ratio - ratio.max(axis=1, keepdims=True))
        pi = w / w.sum(axis=1, keepdims=True)
    elif kind == "luce":
        w = np.maximum(sums, policy.alpha)
        pi = w / w.sum(axis=1, keepdims=True)
    elif kind == "const":
        pi = np.broadcast_to(np.asarray(policy.probs), pulls.shape).copy()
    else:  # pragma: no cover - POLICY_KINDS is closed
        raise ValueError(f"unsupported kind {policy.kind!r}")
    if policy.kind.startswith("explore-"):
        e = pi * (1.0 - pi)
        tot = e.sum(axis=1, keepdims=True)
        if np.any(tot <= 0.0):
            raise ValueError("exploration transform hit a simplex vertex")
        pi = e / tot
    return pi


def simulate_block(inst: BanditInstance, policy: PolicySpec, horizon: int,
                   family: str, master_seed: int, rep_lo: int, rep_hi: int,
                   *, snap_times=None, record: bool = False) -> dict:
    """Simulate replications [rep_lo, rep_hi); returns scaled summaries.

    Output dict: 'q'/'s' (B, K), the scaled terminal state; 'regret' (B,),
    raw regret divided by sqrt(n); 'snap_q'/'snap_s' (B, S, K), the scaled
    state linearly interpolated at ``snap_times``; with ``record=True``
    (single-path use) also the full cumulative arrays.
    """
    policy, mu_n, sigma, one_armed = _effective_finite(inst, policy, horizon, family)
    n_arms = len(mu_n)
    n_paths = rep_hi - rep_lo
    sqrt_n = math.sqrt(horizon)
    sigma0 = float(sigma[0])
    forced = 2 if policy.base_kind == "ts2" else 0

    # one stream per trajectory; two words per period
    words = np.empty((n_paths, 2 * horizon), dtype=np.uint64)
    for b, rep in enumerate(range(rep_lo, rep_hi)):
        gen = derive_stream(StreamKey(master_seed, rep, COMPONENT_TRAJECTORY))
        words[b] = gen.bit_generator.random_raw(2 * horizon)

    pulls = np.zeros((n_paths, n_arms))
    sums = np.zeros((n_paths, n_arms))
    rows = np.arange(n_paths)

    snap_times = np.asarray(snap_times if snap_times is not None else [], float)
    needed_rows: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    needed = set()
    for t in snap_times:
        if not 0.0 <= t <= 1.0:
            raise ValueError("snapshot times must lie in [0, 1]")
        i0 = min(int(math.floor(t * horizon)), horizon - 1)
        needed.update((i0, i0 + 1))
    if 0 in needed:
        needed_rows[0] = (pulls.copy(), sums.copy())

    if record:
        actions_out = np.empty((n_paths, horizon), dtype=np.int64)
        rewards_out = np.empty((n_paths, horizon))
        pulls_out = np.zeros((n_paths, horizon + 1, n_arms))
        sums_out = np.zeros((n_paths, horizon + 1, n_arms))

    p_bern = None
    if family == "shifted-bernoulli":
        with np.errstate(divide="ignore", invalid="ignore"):
            p_bern = np.where(sigma > 0.0, 0.5 + mu_n / (2.0 * sigma), 0.5)

    for i in range(horizon):
        if i < forced:
            act = np.full(n_paths, i, dtype=np.int64)
        else:
            pi = _pi_finite_block(policy, pulls, sums, i, sigma0)
            u_act = ((words[:, 2 * i] >> np.uint64(11)).astype(np.float64) + 0.5) * _U53
            cdf = np.cumsum(pi, axis=1)
            act = np.minimum((cdf <= u_act[:, None]).sum(axis=1), n_arms - 1)

        u_rew = ((words[:, 2 * i + 1] >> np.uint64(11)).astype(np.float64) + 0.5) * _U53
        mu_a = mu_n[act]
        sg_a = sigma[act]
        if family == "gaussian":
            reward = mu_a + sg_a * ndtri(u_rew)
        elif family == "shifted-bernoulli":
            reward = np.where(u_rew < p_bern[act], sg_a, -sg_a)
        else:  # shifted-uniform
            reward = mu_a + _SQRT3 * sg_a * (2.0 * u_rew - 1.0)
        if one_armed:
            reward = np.where(act == 1, 0.0, reward)

        pulls[rows, act] += 1.0
        sums[rows, act] += reward

        if record:
            actions_out[:, i] = act
            rewards_out[:, i] = reward
            pulls_out[:, i + 1] = pulls
            sums_out[:, i + 1] = sums
        if (i + 1) in needed:
            needed_rows[i + 1] = (pulls.copy(), sums.copy())

    best = float(mu_n.max())  # outside option included for one-armed runs
    regret_raw = horizon * best - pulls @ mu_n

    out = {
        "q": pulls / horizon,
        "s": sums / sqrt_n,
        "regret": regret_raw / sqrt_n,
    }
    if snap_times.size:
        snap_q = np.empty((n_paths, len(snap_times), n_arms))
        snap_s = np.empty((n_paths, len(snap_times), n_arms))
        for si, t in enumerate(snap_times):
            x = t * horizon
            i0 = min(int(math.floor(x)), horizon - 1)
            frac = x - i0
            p0, s0 = needed_rows[i0]
            p1, s1 = needed_rows[i0 + 1]
            snap_q[:, si] = ((1.0 - frac) * p0 + frac * p1) / horizon
            snap_s[:, si] = ((1.0 - frac) * s0 + frac * s1) / sqrt_n
        out["snap_q"] = snap_q
        out["snap_s"] = snap_s
    if record:
        out["actions"] = actions_out
        out["rewards"] = rewards_out
        out["pulls"] = pulls_out
        out["sums"] = sums_out
    return out


def simulate_srme(inst: BanditInstance, policy: PolicySpec, horizon: int,
                  *, family: str = "gaussian", master_seed: int = 0,
                  replication_id: int = 0) -> RawTrajectory:
    """Simulate one finite-horizon run; deterministic in all arguments."""
    out = simulate_block(inst, policy, horizon, family, master_seed,
                         replication_id, replication_id + 1, record=True)
    return RawTrajectory(
        horizon=horizon,
        actions=out["actions"][0],
        rewards=out["rewards"][0],
        pulls=out["pulls"][0],
        sums=out["sums"][0],
    )


def scale_trajectory(traj: RawTrajectory, times=None):
    """Diffusion-scaled trajectory: (times, q, s) with linear interpolation.

    q(t) interpolates the cumulative pull counts at fractional index t*n
    and divides by n; s(t) does the same for reward sums divided by
    sqrt(n).  Default times are the native period boundaries i/n.
    """
    n = traj.horizon
    if times is None:
        times = np.arange(n + 1) / n
    times = np.asarray(times, dtype=float)
    if np.any(times < 0.0) or np.any(times > 1.0):
        raise ValueError("times must lie in [0, 1]")
    x = times * n
    idx = np.arange(n + 1, dtype=float)
    q = np.column_stack([np.interp(x, idx, traj.pulls[:, k]) for k in range(traj.n_arms)])
    s = np.column_stack([np.interp(x, idx, traj.sums[:, k]) for k in range(traj.n_arms)])
    return times, q / n, s / math.sqrt(n)


def raw_regret(traj: RawTrajectory, inst: BanditInstance) -> float:
    """Raw expected-reward shortfall of one run against the best arm.

    n * max_k mu_k^n - <pulls(n), mu^n>, where the benchmark includes the
    zero outside option when the trajectory carries one.
    """
    n = traj.horizon
    mu_n = np.asarray(inst.mu, float) / math.sqrt(n)
    if traj.n_arms == inst.n_arms + 1:  # outside-option column appended
        mu_n = np.append(mu_n, 0.0)
    elif traj.n_arms != inst.n_arms:
        raise ValueError("trajectory and instance arm counts do not match")
    return float(n * mu_n.max() - traj.pulls[-1] @ mu_n)
