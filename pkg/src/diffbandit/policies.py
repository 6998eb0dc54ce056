"""Sampling rules, in scaled (limit) and raw-count (finite-horizon) form.

All rules map the current experiment state to a probability vector over
arms.  Limit forms take the diffusion-scaled state (q, s); finite forms
take raw pull counts and reward sums.  Vector-valued rules return arrays
normalized to unit sum.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erfc, erfcx

_SQRT1_2 = 1.0 / math.sqrt(2.0)
# Below this point the plain erfc evaluation of the normal CDF loses
# relative accuracy in the tail; switch to the scaled form with a
# compensated exponential.
_TAIL_SPLIT = -2.0


def normal_cdf(x):
    """Standard normal CDF via the complementary error function.

    Bulk: 0.5*erfc(-x/sqrt(2)).  Deep lower tail (x < -2): the scaled form
    0.5*erfcx(-x/sqrt(2))*exp(-x^2/2), with the exponent's rounding residual
    compensated through an exact Dekker split of x, keeping the relative
    error near 1e-15 across |x| <= 8 instead of the ~1e-14 of plain erfc.
    Accepts scalars or arrays.
    """
    x_arr = np.asarray(x, dtype=np.float64)
    scalar = x_arr.ndim == 0
    x_arr = np.atleast_1d(x_arr)
    out = 0.5 * erfc(-x_arr * _SQRT1_2)
    tail = x_arr < _TAIL_SPLIT
    if np.any(tail):
        xt = x_arr[tail]
        t = xt * 134217729.0  # 2**27 + 1
        hi = t - (t - xt)
        lo = xt - hi
        sq = xt * xt
        resid = (hi * hi - sq) + 2.0 * hi * lo + lo * lo
        expo = np.exp(-0.5 * sq) * (1.0 - 0.5 * resid)
        out[tail] = 0.5 * erfcx(-xt * _SQRT1_2) * expo
    return float(out[0]) if scalar else out


def as_simplex(pi, tol: float = 1e-12) -> np.ndarray:
    """Validate a probability vector: nonnegative, sums to 1 within tol."""
    pi = np.asarray(pi, dtype=float)
    if np.any(pi < -tol) or not np.isfinite(pi).all():
        raise ValueError("probabilities must be nonnegative and finite")
    if abs(float(pi.sum()) - 1.0) > tol:
        raise ValueError("probabilities must sum to 1")
    return pi


def pi_ts_one_arm_limit(q: float, s: float, c: float, sigma: float = 1.0) -> float:
    """Scaled posterior probability that the lone arm beats the zero option.

    Phi(s / (sigma*sqrt(q + sigma^2 c))).  At q = 0 with c = 0 the state
    carries no information and the rule is 1/2 by convention.
    """
    if q < 0.0:
        raise ValueError("q must be >= 0")
    if c < 0.0:
        raise ValueError("c must be >= 0")
    if sigma <= 0.0:
        raise ValueError("sigma must be > 0")
    den = sigma * math.sqrt(q + sigma * sigma * c)
    if den == 0.0:
        if s != 0.0:
            raise ValueError("s must be 0 when q = 0")
        return 0.5
    return normal_cdf(s / den)


def pi_ts_one_arm_finite(pulls: float, total_reward: float, nu: float,
                         sigma: float = 1.0) -> float:
    """Raw-count posterior probability for the one-arm rule.

    Phi( sigma^-2 * S / sqrt(sigma^-2 * Q + nu^-2) ) for a N(0, nu^2) prior
    on the per-period mean and known reward variance sigma^2.
    """
    if pulls < 0:
        raise ValueError("pulls must be >= 0")
    if nu <= 0.0 or not math.isfinite(nu):
        raise ValueError("nu must be positive and finite")
    if sigma <= 0.0:
        raise ValueError("sigma must be > 0")
    inv_s2 = 1.0 / (sigma * sigma)
    return normal_cdf(inv_s2 * total_reward / math.sqrt(inv_s2 * pulls + nu ** -2))


def pi_ts_two_arm_limit(q1: float, s1: float, s2: float, t: float, c: float,
                        d: float = 0.0, sigma: float = 1.0) -> float:
    """Scaled translation-invariant posterior probability of arm 1.

    Phi( sigma^-2 q1 q2 (s1/q1 - s2/q2) / sqrt(sigma^-2 t q1 q2 + t^2 c + d) )
    with q2 = t - q1.  At the allocation corners (q1 in {0, t}) the formula
    is taken by continuous extension of the numerator, degenerating to a
    sign rule when the denominator also vanishes; at t = 0 it is 1/2.
    """
    if t < 0.0 or q1 < -1e-15 or q1 > t + 1e-15:
        raise ValueError("need 0 <= q1 <= t")
    if c < 0.0 or d < 0.0:
        raise ValueError("c and d must be >= 0")
    if sigma <= 0.0:
        raise ValueError("sigma must be > 0")
    if t == 0.0:
        return 0.5
    q1 = min(max(q1, 0.0), t)
    q2 = t - q1
    inv_s2 = 1.0 / (sigma * sigma)
    num = inv_s2 * (q2 * s1 - q1 * s2)  # q1 q2 (s1/q1 - s2/q2), corners included
    den = math.sqrt(inv_s2 * t * q1 * q2 + t * t * c + d)
    if den == 0.0:
        return 0.5 if num == 0.0 else (1.0 if num > 0.0 else 0.0)
    return normal_cdf(num / den)


def pi_ts_two_arm_finite(pulls1: float, pulls2: float, reward1: float,
                         reward2: float, period: int, nu: float,
                         sigma: float = 1.0, zeta: float | None = None,
                         horizon: int | None = None) -> float:
    """Raw-count translation-invariant posterior probability of arm 1.

    With mean gap estimate D = R1/Q1 - R2/Q2 and its sampling precision
    a^-2 = Q1 Q2 / (sigma^2 i):

        Phi( a^-2 D / sqrt(a^-2 + nu^-2 + zeta^-2 (n/i)^2) )

    The zeta term (tempering) requires the horizon n.  Both arms must have
    been pulled at least once; the simulator guarantees this by opening
    every two-arm run with one deterministic pull of each arm.
    """
    if pulls1 <= 0 or pulls2 <= 0:
        raise ValueError("both arms need at least one pull")
    if period < pulls1 + pulls2 - 1e-9:
        raise ValueError("period must be >= total pulls")
    if nu <= 0.0 or not math.isfinite(nu):
        raise ValueError("nu must be positive and finite")
    if sigma <= 0.0:
        raise ValueError("sigma must be > 0")
    inv_a2 = pulls1 * pulls2 / (sigma * sigma * period)
    gap = reward1 / pulls1 - reward2 / pulls2
    var = inv_a2 + nu ** -2
    if zeta is not None:
        if horizon is None:
            raise ValueError("tempering requires the horizon")
        var += zeta ** -2 * (horizon / period) ** 2
    return normal_cdf(inv_a2 * gap / math.sqrt(var))


def pi_tempered_greedy(q, s, alpha: float, smoothing: float) -> np.ndarray:
    """Exponential weighting of smoothed mean-reward estimates.

    pi_k proportional to exp(alpha * s_k / (q_k + smoothing)).  Works on
    scaled state and, with gain alpha*sqrt(n) and offset smoothing*n, on
    raw counts.  smoothing = 0 requires every q_k > 0.
    """
    q = np.asarray(q, dtype=float)
    s = np.asarray(s, dtype=float)
    if q.shape != s.shape or q.ndim != 1:
        raise ValueError("q and s must be equal-length vectors")
    if alpha < 0.0:
        raise ValueError("alpha must be >= 0")
    if smoothing < 0.0:
        raise ValueError("smoothing must be >= 0")
    if np.any(q < 0.0):
        raise ValueError("q must be >= 0")
    den = q + smoothing
    if np.any(den == 0.0):
        raise ValueError("q + smoothing must be positive for every arm")
    ratio = alpha * s / den
    w = np.exp(ratio - ratio.max())
    return w / w.sum()


def pi_luce(s, alpha: float) -> np.ndarray:
    """Probability proportional to the floored cumulative reward.

    pi_k = max(s_k, alpha) / sum_l max(s_l, alpha), alpha > 0.  The floor
    keeps the rule defined when rewards are small or negative.
    """
    s = np.asarray(s, dtype=float)
    if s.ndim != 1:
        raise ValueError("s must be a vector")
    if alpha <= 0.0:
        raise ValueError("alpha must be > 0")
    w = np.maximum(s, alpha)
    return w / w.sum()


def exploration_transform(rho) -> np.ndarray:
    """Variance-matched exploration reweighting of a base rule.

    e_k = rho_k (1 - rho_k) / sum_l rho_l (1 - rho_l).  Undefined at the
    simplex vertices, where the base rule has stopped exploring.
    """
    rho = as_simplex(rho, tol=1e-9)
    w = rho * (1.0 - rho)
    total = w.sum()
    if total <= 0.0:
        raise ValueError("exploration transform undefined at a simplex vertex")
    return w / total


def evaluate_limit(spec, q, s, t: float, sigma: float = 1.0) -> np.ndarray:
    """Probability vector of a limit-form policy at scaled state (t, q, s).

    One-armed rules expect the outside option as the final component of
    q and s.
    """
    if spec.form != "limit":
        raise ValueError("evaluate_limit requires a limit-form policy")
    q = np.asarray(q, dtype=float)
    s = np.asarray(s, dtype=float)
    kind = spec.base_kind
    if kind == "ts1":
        p1 = pi_ts_one_arm_limit(float(q[0]), float(s[0]), spec.c, sigma)
        pi = np.array([p1, 1.0 - p1])
    elif kind == "ts2":
        p1 = pi_ts_two_arm_limit(float(q[0]), float(s[0]), float(s[1]), t,
                                 spec.c, spec.d, sigma)
        pi = np.array([p1, 1.0 - p1])
    elif kind == "greedy":
        pi = pi_tempered_greedy(q, s, spec.alpha, spec.smoothing)
    elif kind == "luce":
        pi = pi_luce(s, spec.alpha)
    elif kind == "const":
        pi = np.asarray(spec.probs, dtype=float)
    else:  # pragma: no cover - POLICY_KINDS is closed
        raise ValueError(f"unsupported kind {spec.kind!r}")
    if spec.kind.startswith("explore-"):
        pi = exploration_transform(pi)
    return pi


def evaluate_finite(spec, pulls, rewards, period: int, sigma: float = 1.0) -> np.ndarray:
    """Probability vector of a finite-form policy from raw counts and sums."""
    if spec.form != "finite":
        raise ValueError("evaluate_finite requires a finite-form policy")
    pulls = np.asarray(pulls, dtype=float)
    rewards = np.asarray(rewards, dtype=float)
    kind = spec.base_kind
    if kind == "ts1":
        p1 = pi_ts_one_arm_finite(float(pulls[0]), float(rewards[0]), spec.nu, sigma)
        pi = np.array([p1, 1.0 - p1])
    elif kind == "ts2":
        p1 = pi_ts_two_arm_finite(float(pulls[0]), float(pulls[1]),
                                  float(rewards[0]), float(rewards[1]),
                                  period, spec.nu, sigma,
                                  zeta=spec.zeta, horizon=spec.horizon)
        pi = np.array([p1, 1.0 - p1])
    elif kind == "greedy":
        pi = pi_tempered_greedy(pulls, rewards, spec.alpha, spec.smoothing)
    elif kind == "luce":
        pi = pi_luce(rewards, spec.alpha)
    elif kind == "const":
        pi = np.asarray(spec.probs, dtype=float)
    else:  # pragma: no cover - POLICY_KINDS is closed
        raise ValueError(f"unsupported kind {spec.kind!r}")
    if spec.kind.startswith("explore-"):
        pi = exploration_transform(pi)
    return pi
