"""Vectorized numpy fallback for the batch path integrator.

Mirrors the compiled kernel in `_kernels.pyx` step for step: identical
state recursions, identical noise consumption (one draw per arm per step),
identical output contract.  Kept separate from the single-path reference
integrators in `diffusion`, which consume noise through ArmClockNoise.
"""

from __future__ import annotations

import numpy as np

from .policies import normal_cdf

NOISE_LAYOUT = "step"  # expects the noise cube as (n_steps, n_paths, n_noisy)


def _policy_pi(policy_code: int, params, mu, sigma, q, s, t: float) -> np.ndarray:
    """Sampling probabilities for a block of states; shape (B, K)."""
    n_arms = q.shape[1]
    if policy_code == 0:  # const
        return np.broadcast_to(params[:n_arms], q.shape).copy()

    if policy_code in (1, 5):  # one arm vs outside option
        c = params[0]
        sig = sigma[0]
        x = s[:, 0] / (sig * np.sqrt(q[:, 0] + sig * sig * c))
        p = normal_cdf(x)
        pi = np.stack([p, 1.0 - p], axis=1)
    elif policy_code in (2, 6):  # two arms, translation invariant
        c, d = params[0], params[1]
        inv_s2 = 1.0 / (sigma[0] * sigma[0])
        q1, q2 = q[:, 0], q[:, 1]
        tt = q1 + q2
        num = inv_s2 * (q2 * s[:, 0] - q1 * s[:, 1])
        den = np.sqrt(inv_s2 * tt * q1 * q2 + tt * tt * c + d)
        p = normal_cdf(num / den)
        pi = np.stack([p, 1.0 - p], axis=1)
    elif policy_code == 3:  # tempered greedy
        alpha, smoothing = params[0], params[1]
        ratio = alpha * s / (q + smoothing)
        w = np.exp(ratio - ratio.max(axis=1, keepdims=True))
        pi = w / w.sum(axis=1, keepdims=True)
    elif policy_code == 4:  # luce
        w = np.maximum(s, params[0])
        pi = w / w.sum(axis=1, keepdims=True)
    else:
        raise ValueError(f"unknown policy code {policy_code}")

    if policy_code in (5, 6):  # exploration transform of the base rule
        e = pi * (1.0 - pi)
        pi = e / e.sum(axis=1, keepdims=True)
    return pi


def integrate_batch(method_code: int, policy_code: int, params, mu, sigma,
                    times, noise, noise_map, snap_idx, pi_lo: int, pi_hi: int,
                    record: bool) -> dict:
    """Integrate a block of paths; see diffusion.simulate_batch for the contract."""
    times = np.asarray(times)
    mu = np.asarray(mu)
    sigma = np.asarray(sigma)
    n_steps = len(times) - 1
    n_paths = noise.shape[1]
    n_arms = len(mu)
    noisy = [(k, int(noise_map[k])) for k in range(n_arms) if noise_map[k] >= 0]

    q = np.full((n_paths, n_arms), times[0] / n_arms)
    s = q * mu  # warm start: clocks advanced without sampling
    w = np.zeros((n_paths, n_arms))

    status = np.zeros(n_paths, dtype=np.uint8)
    abort_step = np.full(n_paths, -1, dtype=np.int64)
    alive = np.ones(n_paths, dtype=bool)
    all_alive = True
    pi_min = np.full(n_paths, np.inf)
    pi_max = np.full(n_paths, -np.inf)

    snap_idx = np.asarray(snap_idx, dtype=np.int64)
    snap_q = np.zeros((n_paths, len(snap_idx), n_arms))
    snap_s = np.zeros((n_paths, len(snap_idx), n_arms))
    snap_ptr = 0

    if record:
        trace_q = np.full((n_paths, n_steps + 1, n_arms), np.nan)
        trace_s = np.full((n_paths, n_steps + 1, n_arms), np.nan)
        trace_pi = np.full((n_paths, n_steps + 1, n_arms), np.nan)

    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        for j in range(n_steps + 1):
            pi = _policy_pi(policy_code, params, mu, sigma, q, s, float(times[j]))
            finite = np.isfinite(pi).all(axis=1)
            if not finite.all():
                bad = alive & ~finite
                if bad.any():
                    status[bad] = 1
                    abort_step[bad] = j
                    alive &= ~bad
                    all_alive = False
            if not all_alive:
                # dead paths freeze: zero probability means zero motion below
                pi = np.where(alive[:, None], pi, 0.0)

            if pi_lo <= j < pi_hi:
                p0 = pi[:, 0]
                if all_alive:
                    np.minimum(pi_min, p0, out=pi_min)
                    np.maximum(pi_max, p0, out=pi_max)
                else:
                    pi_min[alive] = np.minimum(pi_min[alive], p0[alive])
                    pi_max[alive] = np.maximum(pi_max[alive], p0[alive])

            if record:
                trace_q[:, j] = q
                trace_s[:, j] = s
                trace_pi[alive, j] = pi[alive]

            while snap_ptr < len(snap_idx) and snap_idx[snap_ptr] == j:
                snap_q[:, snap_ptr] = q
                snap_s[:, snap_ptr] = s
                snap_ptr += 1

            if j == n_steps:
                break

            dt = times[j + 1] - times[j]
            dq = pi * dt
            q += dq
            if method_code == 0:  # time-change route
                for arm, row in noisy:
                    w[:, arm] += np.sqrt(dq[:, arm]) * noise[j, :, row]
                s = mu * q + sigma * w
            else:  # direct Euler route
                ds = mu * dq
                for arm, row in noisy:
                    ds[:, arm] += sigma[arm] * np.sqrt(dq[:, arm]) * noise[j, :, row]
                s += ds

            finite = np.isfinite(s).all(axis=1)
            if not finite.all():
                bad = alive & ~finite
                if bad.any():
                    status[bad] = 1
                    abort_step[bad] = j + 1
                    alive &= ~bad
                    all_alive = False

    out = {
        "q": q, "s": s, "status": status, "abort_step": abort_step,
        "snap_q": snap_q, "snap_s": snap_s, "pi_min": pi_min, "pi_max": pi_max,
    }
    if record:
        out["trace_q"] = trace_q
        out["trace_s"] = trace_s
        out["trace_pi"] = trace_pi
    return out
