"""Core types: problem instances, policy specifications, scaled states, paths.

Conventions used throughout the package:

* A one-armed problem (K=1) always carries an implicit outside option that
  pays exactly zero.  Engines represent it as an explicit second component
  with zero mean and zero volatility, so allocation fractions still sum to
  the elapsed time and "regret" means shortfall against max(mu_1, 0).
* Scaled quantities: q is the fraction-of-horizon pull allocation, s is the
  cumulative reward divided by the square root of the horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

POLICY_KINDS = ("ts1", "ts2", "greedy", "luce", "explore-ts1", "explore-ts2", "const")
POLICY_FORMS = ("limit", "finite")
REWARD_FAMILIES = ("gaussian", "shifted-bernoulli", "shifted-uniform")


@dataclass(frozen=True)
class BanditInstance:
    """Arm means and volatilities on the diffusion scale.

    ``mu`` holds the scaled mean rewards: the pre-limit experiment at
    horizon n pays mean ``mu_k / sqrt(n)`` per pull of arm k.
    """

    mu: tuple
    sigma: tuple

    def __init__(self, mu, sigma=None):
        mu = tuple(float(m) for m in np.atleast_1d(mu))
        if sigma is None:
            sigma = tuple(1.0 for _ in mu)
        else:
            sigma = tuple(float(s) for s in np.atleast_1d(sigma))
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def n_arms(self) -> int:
        return len(self.mu)


def validate_instance(inst: BanditInstance, horizon: int | None = None,
                      family: str = "gaussian") -> None:
    """Check an instance for use at the diffusion scale.

    With ``horizon`` given, also checks that the pre-limit reward family is
    realizable at that n (the shifted-bernoulli success probability
    1/2 + mu_k / (2 sigma_k sqrt(n)) must lie strictly inside (0, 1)).
    """
    if inst.n_arms < 1:
        raise ValueError("instance needs at least one arm")
    if len(inst.sigma) != inst.n_arms:
        raise ValueError("mu and sigma must have equal length")
    for k, (m, s) in enumerate(zip(inst.mu, inst.sigma)):
        if not math.isfinite(m):
            raise ValueError(f"arm {k}: mean must be finite")
        if not (math.isfinite(s) and s > 0.0):
            raise ValueError(f"arm {k}: volatility must be positive and finite")
    if family not in REWARD_FAMILIES:
        raise ValueError(f"unknown reward family {family!r}")
    if horizon is not None:
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        if family == "shifted-bernoulli":
            for k, (m, s) in enumerate(zip(inst.mu, inst.sigma)):
                if abs(m) / math.sqrt(horizon) >= s:
                    raise ValueError(
                        f"arm {k}: |mu|/sqrt(n) = {abs(m)/math.sqrt(horizon):.6g} "
                        f"reaches sigma = {s:.6g}; shifted-bernoulli rewards "
                        f"are not realizable at n = {horizon}"
                    )


def prelimit_mean(mu_k: float, horizon: int) -> float:
    """Per-pull mean reward of an arm at a finite horizon: mu_k / sqrt(n)."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    return mu_k / math.sqrt(horizon)


@dataclass(frozen=True)
class PolicySpec:
    """Serializable description of a sampling rule.

    kind:
        'ts1'           posterior-probability rule for one arm vs the zero
                        outside option;
        'ts2'           translation-invariant two-arm posterior rule;
        'greedy'        exponential weighting of smoothed empirical means;
        'luce'          proportional weighting of floored cumulative rewards;
        'explore-ts1'/'explore-ts2'
                        variance-matched transform rho(1-rho) of the
                        corresponding posterior rule;
        'const'         fixed probabilities (diagnostic use).
    form:
        'limit'  evaluates on diffusion-scaled state (q, s);
        'finite' evaluates on raw counts/sums at a given horizon.

    Limit-form parameters: ``c`` (prior tightness; 0 means an undersmoothed
    flat-prior rule), ``d`` (two-arm tempering), ``alpha`` (greedy/luce
    gain), ``smoothing`` (greedy denominator offset).  Finite-form
    parameters: ``nu`` (prior scale), ``zeta`` (tempering scale),
    ``horizon``.  ``to_finite`` maps one to the other.
    """

    kind: str
    form: str = "limit"
    c: float = 0.0
    d: float = 0.0
    alpha: float = 1.0
    smoothing: float = 0.0
    nu: Optional[float] = None
    zeta: Optional[float] = None
    horizon: Optional[int] = None
    probs: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.form not in POLICY_FORMS:
            raise ValueError(f"unknown policy form {self.form!r}")
        for name in ("c", "d", "smoothing"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0.0):
                raise ValueError(f"{name} must be finite and >= 0")
        if not math.isfinite(self.alpha):
            raise ValueError("alpha must be finite")
        if self.kind == "luce" and self.alpha <= 0.0:
            raise ValueError("luce requires alpha > 0")
        if self.kind == "greedy" and self.alpha < 0.0:
            raise ValueError("greedy requires alpha >= 0")
        if self.kind == "const":
            if self.probs is None:
                raise ValueError("const policy requires probs")
            p = np.asarray(self.probs, dtype=float)
            if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
                raise ValueError("probs must be a probability vector")
            object.__setattr__(self, "probs", tuple(float(x) for x in p))
        if self.form == "finite":
            if self.horizon is None or self.horizon < 1:
                raise ValueError("finite form requires horizon >= 1")
            if self.kind in ("ts1", "ts2", "explore-ts1", "explore-ts2"):
                if self.nu is None or not (math.isfinite(self.nu) and self.nu > 0):
                    raise ValueError("finite posterior rules require nu > 0")
            if self.zeta is not None and self.zeta <= 0:
                raise ValueError("zeta must be positive when given")

    @property
    def base_kind(self) -> str:
        """Underlying posterior rule for exploration variants."""
        return {"explore-ts1": "ts1", "explore-ts2": "ts2"}.get(self.kind, self.kind)

    @property
    def n_arms(self) -> int | None:
        """Arm count implied by the kind, if fixed."""
        if self.base_kind == "ts1":
            return 1
        if self.base_kind == "ts2":
            return 2
        if self.kind == "const":
            return len(self.probs)
        return None

    def to_finite(self, horizon: int) -> "PolicySpec":
        """Finite-horizon counterpart of a limit-form policy.

        Parameter correspondence at horizon n: prior scale nu with
        nu^-2 = n c (nu = 1 when c = 0, the common flat-prior practice),
        tempering scale zeta with zeta^-2 = n d, greedy gain alpha*sqrt(n)
        and denominator offset smoothing*n, luce floor alpha*sqrt(n).
        """
        if self.form != "limit":
            raise ValueError("to_finite applies to limit-form policies")
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        kw = dict(kind=self.kind, form="finite", c=self.c, d=self.d,
                  horizon=horizon, probs=self.probs)
        if self.base_kind in ("ts1", "ts2"):
            kw["nu"] = 1.0 if self.c == 0.0 else 1.0 / math.sqrt(horizon * self.c)
            kw["zeta"] = None if self.d == 0.0 else 1.0 / math.sqrt(horizon * self.d)
        if self.kind == "greedy":
            kw["alpha"] = self.alpha * math.sqrt(horizon)
            kw["smoothing"] = self.smoothing * horizon
        elif self.kind == "luce":
            kw["alpha"] = self.alpha * math.sqrt(horizon)
        else:
            kw["alpha"] = self.alpha
            kw["smoothing"] = self.smoothing
        return PolicySpec(**kw)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PolicySpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown PolicySpec fields: {sorted(unknown)}")
        kw = dict(data)
        if kw.get("probs") is not None:
            kw["probs"] = tuple(kw["probs"])
        return cls(**kw)


@dataclass(frozen=True)
class ScaledState:
    """Diffusion-scaled experiment state at time t: allocations and rewards."""

    t: float
    q: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "s", np.asarray(self.s, dtype=float))
        if self.q.shape != self.s.shape:
            raise ValueError("q and s must have equal shape")

    def check(self, tol: float = 1e-9) -> None:
        """Assert the allocation identity sum_k q_k = t and q >= 0."""
        if np.any(self.q < -tol):
            raise ValueError("negative allocation")
        if abs(float(self.q.sum()) - self.t) > tol * max(1.0, abs(self.t)):
            raise ValueError("allocations do not sum to elapsed time")


@dataclass(frozen=True)
class Path:
    """One integrated diffusion-scale trajectory on a time grid.

    ``q`` and ``s`` have shape (len(times), K); ``pi`` (optional) holds the
    sampling probabilities evaluated at each grid state.  ``regret`` is the
    terminal scaled regret against the instance the path was run on.
    """

    times: np.ndarray
    q: np.ndarray
    s: np.ndarray
    regret: float
    pi: Optional[np.ndarray] = None
    method: str = "time-change"

    @property
    def n_arms(self) -> int:
        return self.q.shape[1]

    def final_state(self) -> ScaledState:
        return ScaledState(float(self.times[-1]), self.q[-1], self.s[-1])
