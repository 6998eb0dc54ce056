"""Simulation and numerical analysis of randomized bandit experiments at
the diffusion scale: finite-horizon experiments, their weak-limit dynamics,
regret profiles, scaling diagnostics, and worst-case bound comparisons.
"""

from .harness import Aggregate, StreamKey, derive_stream, run_replications
from .model import (
    BanditInstance,
    Path,
    PolicySpec,
    ScaledState,
    prelimit_mean,
    validate_instance,
)
from .policies import (
    exploration_transform,
    normal_cdf,
    pi_luce,
    pi_tempered_greedy,
    pi_ts_one_arm_finite,
    pi_ts_one_arm_limit,
    pi_ts_two_arm_finite,
    pi_ts_two_arm_limit,
)
from .diffusion import (
    ArmClockNoise,
    IntegrationError,
    TimeGrid,
    active_backend,
    default_grid,
    instability_grid,
    integrate_sde_em,
    integrate_time_change,
    pi_path,
    scaled_regret,
)
from .prelimit import RawTrajectory, raw_regret, scale_trajectory, simulate_srme
from .analytics import (
    bound_raw,
    bound_scaled,
    convergence_report,
    instability_frequencies,
    ks_distance,
    regret_histogram,
    regret_profile,
    superdiffusive_check,
)

__version__ = "0.1.0"

__all__ = [
    "Aggregate", "ArmClockNoise", "BanditInstance", "IntegrationError",
    "bound_raw", "bound_scaled", "convergence_report",
    "instability_frequencies", "ks_distance", "regret_histogram",
    "regret_profile", "superdiffusive_check",
    "Path", "PolicySpec", "RawTrajectory", "ScaledState", "StreamKey",
    "TimeGrid", "active_backend", "default_grid", "derive_stream",
    "exploration_transform", "instability_grid", "integrate_sde_em",
    "integrate_time_change", "normal_cdf", "pi_luce", "pi_path",
    "pi_tempered_greedy", "pi_ts_one_arm_finite", "pi_ts_one_arm_limit",
    "pi_ts_two_arm_finite", "pi_ts_two_arm_limit", "prelimit_mean",
    "raw_regret", "run_replications", "scale_trajectory", "scaled_regret",
    "simulate_srme", "validate_instance",
]
