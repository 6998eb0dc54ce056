# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled batch path integrator.

Semantics are kept in lockstep with `_engine_py.integrate_batch`: same
state recursion, same one-draw-per-arm-per-step noise consumption, same
freeze-on-abort handling, same output contract.  The backends are
interchangeable; this one exists because the per-step loop dominates the
cost of every large replication run.
"""

import numpy as np

from libc.math cimport exp, isfinite, sqrt, INFINITY
from scipy.special.cython_special cimport erfc, erfcx

NOISE_LAYOUT = "path"  # expects the noise cube as (n_paths, n_noisy, n_steps)

cdef double _SQRT1_2 = 0.7071067811865476
cdef double _TAIL_SPLIT = -2.0
cdef double _SPLITTER = 134217729.0  # 2**27 + 1
cdef int _MAX_K = 8


cdef inline double _phi(double x) noexcept nogil:
    """Normal CDF: plain erfc in the bulk, compensated erfcx in the tail.

    Matches policies.normal_cdf branch for branch so both backends agree
    to within a few ulp.
    """
    cdef double t, hi, lo, sq, resid, expo
    if x >= _TAIL_SPLIT:
        return 0.5 * erfc(-x * _SQRT1_2)
    t = x * _SPLITTER
    hi = t - (t - x)
    lo = x - hi
    sq = x * x
    resid = (hi * hi - sq) + 2.0 * hi * lo + lo * lo
    expo = exp(-0.5 * sq) * (1.0 - 0.5 * resid)
    return 0.5 * erfcx(-x * _SQRT1_2) * expo


cdef inline void _policy_pi(int policy_code, const double* params,
                            const double* mu, double sig0,
                            const double* q, const double* s, int n_arms,
                            double* pi) noexcept nogil:
    cdef int k
    cdef double c, d, x, p, inv_s2, q1, q2, tt, num, den, m, tot
    if policy_code == 0:  # const
        for k in range(n_arms):
            pi[k] = params[k]
        return
    if policy_code == 1 or policy_code == 5:  # one arm vs outside option
        c = params[0]
        x = s[0] / (sig0 * sqrt(q[0] + sig0 * sig0 * c))
        p = _phi(x)
        pi[0] = p
        pi[1] = 1.0 - p
    elif policy_code == 2 or policy_code == 6:  # two arms, translation invariant
        c = params[0]
        d = params[1]
        inv_s2 = 1.0 / (sig0 * sig0)
        q1 = q[0]
        q2 = q[1]
        tt = q1 + q2
        num = inv_s2 * (q2 * s[0] - q1 * s[1])
        den = sqrt(inv_s2 * tt * q1 * q2 + tt * tt * c + d)
        p = _phi(num / den)
        pi[0] = p
        pi[1] = 1.0 - p
    elif policy_code == 3:  # tempered greedy
        m = -INFINITY
        for k in range(n_arms):
            pi[k] = params[0] * s[k] / (q[k] + params[1])
            if pi[k] > m:
                m = pi[k]
        tot = 0.0
        for k in range(n_arms):
            pi[k] = exp(pi[k] - m)
            tot += pi[k]
        for k in range(n_arms):
            pi[k] /= tot
    elif policy_code == 4:  # luce
        tot = 0.0
        for k in range(n_arms):
            pi[k] = s[k] if s[k] > params[0] else params[0]
            tot += pi[k]
        for k in range(n_arms):
            pi[k] /= tot
    if policy_code >= 5:  # exploration transform of the base rule
        tot = 0.0
        for k in range(n_arms):
            pi[k] = pi[k] * (1.0 - pi[k])
            tot += pi[k]
        for k in range(n_arms):
            pi[k] /= tot


def integrate_batch(int method_code, int policy_code,
                    const double[::1] params, const double[::1] mu,
                    const double[::1] sigma, const double[::1] times,
                    const double[:, :, ::1] noise, const long[::1] noise_map,
                    const long[::1] snap_idx, int pi_lo, int pi_hi,
                    bint record):
    """Integrate a block of paths; see diffusion.simulate_batch for the contract."""
    cdef int n_steps = times.shape[0] - 1
    cdef int n_paths = noise.shape[0]
    cdef int n_arms = mu.shape[0]
    cdef int n_snap = snap_idx.shape[0]
    if n_arms > _MAX_K:
        raise ValueError(f"compiled engine supports at most {_MAX_K} arms")

    q_out = np.empty((n_paths, n_arms))
    s_out = np.empty((n_paths, n_arms))
    status_out = np.zeros(n_paths, dtype=np.uint8)
    abort_out = np.full(n_paths, -1, dtype=np.int64)
    snap_q_out = np.zeros((n_paths, n_snap, n_arms))
    snap_s_out = np.zeros((n_paths, n_snap, n_arms))
    pi_min_out = np.full(n_paths, np.inf)
    pi_max_out = np.full(n_paths, -np.inf)

    cdef double[:, ::1] q_v = q_out
    cdef double[:, ::1] s_v = s_out
    cdef unsigned char[::1] status_v = status_out
    cdef long[::1] abort_v = abort_out
    cdef double[:, :, ::1] snap_q_v = snap_q_out
    cdef double[:, :, ::1] snap_s_v = snap_s_out
    cdef double[::1] pi_min_v = pi_min_out
    cdef double[::1] pi_max_v = pi_max_out

    cdef double[:, :, ::1] tq_v = None
    cdef double[:, :, ::1] ts_v = None
    cdef double[:, :, ::1] tp_v = None
    trace = {}
    if record:
        trace_q = np.full((n_paths, n_steps + 1, n_arms), np.nan)
        trace_s = np.full((n_paths, n_steps + 1, n_arms), np.nan)
        trace_pi = np.full((n_paths, n_steps + 1, n_arms), np.nan)
        tq_v = trace_q
        ts_v = trace_s
        tp_v = trace_pi
        trace = {"trace_q": trace_q, "trace_s": trace_s, "trace_pi": trace_pi}

    cdef double q[8]
    cdef double s[8]
    cdef double w[8]
    cdef double pi[8]
    cdef double sig0 = sigma[0]
    cdef double t0 = times[0]
    cdef double dt, dq_k, xi
    cdef int r, j, k, snap_ptr, row
    cdef bint dead, bad

    with nogil:
        for r in range(n_paths):
            for k in range(n_arms):
                q[k] = t0 / n_arms
                s[k] = mu[k] * q[k]  # warm start: clocks advanced, no draw
                w[k] = 0.0
            dead = 0
            snap_ptr = 0

            for j in range(n_steps + 1):
                if not dead:
                    _policy_pi(policy_code, &params[0], &mu[0], sig0, q, s,
                               n_arms, pi)
                    bad = 0
                    for k in range(n_arms):
                        if not isfinite(pi[k]):
                            bad = 1
                    if bad:
                        dead = 1
                        status_v[r] = 1
                        abort_v[r] = j
                        for k in range(n_arms):
                            pi[k] = 0.0
                else:
                    for k in range(n_arms):
                        pi[k] = 0.0

                if not dead and pi_lo <= j < pi_hi:
                    if pi[0] < pi_min_v[r]:
                        pi_min_v[r] = pi[0]
                    if pi[0] > pi_max_v[r]:
                        pi_max_v[r] = pi[0]

                if record:
                    for k in range(n_arms):
                        tq_v[r, j, k] = q[k]
                        ts_v[r, j, k] = s[k]
                        if not dead:
                            tp_v[r, j, k] = pi[k]

                while snap_ptr < n_snap and snap_idx[snap_ptr] == j:
                    for k in range(n_arms):
                        snap_q_v[r, snap_ptr, k] = q[k]
                        snap_s_v[r, snap_ptr, k] = s[k]
                    snap_ptr += 1

                if j == n_steps:
                    break

                dt = times[j + 1] - times[j]
                if method_code == 0:  # time-change route
                    for k in range(n_arms):
                        dq_k = pi[k] * dt
                        q[k] += dq_k
                        row = noise_map[k]
                        if row >= 0:
                            w[k] += sqrt(dq_k) * noise[r, row, j]
                        s[k] = mu[k] * q[k] + sigma[k] * w[k]
                else:  # direct Euler route
                    for k in range(n_arms):
                        dq_k = pi[k] * dt
                        q[k] += dq_k
                        row = noise_map[k]
                        xi = noise[r, row, j] if row >= 0 else 0.0
                        s[k] = s[k] + mu[k] * dq_k + sigma[k] * sqrt(dq_k) * xi

                if not dead:
                    bad = 0
                    for k in range(n_arms):
                        if not isfinite(s[k]):
                            bad = 1
                    if bad:
                        dead = 1
                        status_v[r] = 1
                        abort_v[r] = j + 1

            for k in range(n_arms):
                q_v[r, k] = q[k]
                s_v[r, k] = s[k]

    out = {
        "q": q_out, "s": s_out, "status": status_out, "abort_step": abort_out,
        "snap_q": snap_q_out, "snap_s": snap_s_out,
        "pi_min": pi_min_out, "pi_max": pi_max_out,
    }
    out.update(trace)
    return out
