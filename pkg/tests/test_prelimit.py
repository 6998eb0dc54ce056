"""Finite-horizon runs: word protocol, forced pulls, scaling, families."""

import math

import numpy as np
import pytest
from scipy.special import ndtri

from diffbandit.diffusion import COMPONENT_TRAJECTORY
from diffbandit.harness import StreamKey, derive_stream
from diffbandit.model import BanditInstance, PolicySpec
from diffbandit.policies import (
    pi_ts_one_arm_finite,
    pi_ts_two_arm_finite,
    pi_tempered_greedy,
)
from diffbandit.prelimit import (
    _pi_finite_block,
    raw_regret,
    scale_trajectory,
    simulate_block,
    simulate_srme,
)

_U53 = 2.0 ** -53


def _uniforms(master_seed, rep, n_words):
    gen = derive_stream(StreamKey(master_seed, rep, COMPONENT_TRAJECTORY))
    words = gen.bit_generator.random_raw(n_words)
    return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * _U53


def test_trajectory_deterministic():
    inst = BanditInstance((-2.0,))
    pol = PolicySpec("ts1", c=0.0)
    a = simulate_srme(inst, pol, 50, master_seed=3, replication_id=7)
    b = simulate_srme(inst, pol, 50, master_seed=3, replication_id=7)
    np.testing.assert_array_equal(a.actions, b.actions)
    np.testing.assert_array_equal(a.rewards, b.rewards)
    c = simulate_srme(inst, pol, 50, master_seed=3, replication_id=8)
    assert not np.array_equal(a.actions, c.actions) or \
        not np.array_equal(a.rewards, c.rewards)


def test_word_protocol_const_policy():
    """Action word 2i, reward word 2i+1, exact down to the last bit."""
    inst = BanditInstance((1.0, -1.0), sigma=(1.0, 2.0))
    pol = PolicySpec("const", probs=(0.3, 0.7))
    n = 40
    traj = simulate_srme(inst, pol, n, master_seed=11, replication_id=2)
    u = _uniforms(11, 2, 2 * n)
    mu_n = np.array([1.0, -1.0]) / math.sqrt(n)
    sigma = np.array([1.0, 2.0])
    for i in range(n):
        act = 0 if u[2 * i] < 0.3 else 1
        assert traj.actions[i] == act
        assert traj.rewards[i] == mu_n[act] + sigma[act] * ndtri(u[2 * i + 1])


def test_forced_opening_pulls_consume_action_words():
    inst = BanditInstance((2.0, 0.0))
    pol = PolicySpec("ts2", c=0.0, d=1e-8)
    n = 30
    traj = simulate_srme(inst, pol, n, master_seed=5, replication_id=0)
    assert traj.actions[0] == 0
    assert traj.actions[1] == 1
    # reward words stay at odd offsets even though action words 0 and 2
    # went unused during the forced pulls
    u = _uniforms(5, 0, 6)
    mu_n = np.array([2.0, 0.0]) / math.sqrt(n)
    assert traj.rewards[0] == mu_n[0] + ndtri(u[1])
    assert traj.rewards[1] == mu_n[1] + ndtri(u[3])


def test_outside_option_pays_zero_but_consumes_words():
    inst = BanditInstance((-3.0,))
    pol = PolicySpec("ts1", c=0.0)
    n = 60
    traj = simulate_srme(inst, pol, n, master_seed=9, replication_id=4)
    outside = traj.actions == 1
    assert outside.any()  # a negative arm gets abandoned quickly
    assert np.all(traj.rewards[outside] == 0.0)
    # arm-0 rewards still follow the word protocol at their own periods
    u = _uniforms(9, 4, 2 * n)
    inside = np.flatnonzero(~outside)
    mu0 = -3.0 / math.sqrt(n)
    for i in inside[:5]:
        assert traj.rewards[i] == mu0 + ndtri(u[2 * i + 1])


def test_cumulative_arrays_consistent():
    inst = BanditInstance((0.5, -0.5))
    pol = PolicySpec("greedy", alpha=1.0, smoothing=0.01)
    n = 80
    traj = simulate_srme(inst, pol, n, master_seed=21, replication_id=1)
    assert traj.pulls.shape == (n + 1, 2)
    assert np.all(traj.pulls[0] == 0.0)
    for i in range(n):
        dp = traj.pulls[i + 1] - traj.pulls[i]
        ds = traj.sums[i + 1] - traj.sums[i]
        a = traj.actions[i]
        assert dp[a] == 1.0 and dp.sum() == 1.0
        assert ds[a] == pytest.approx(traj.rewards[i], abs=1e-12)
    assert traj.pulls[-1].sum() == n


def test_block_matches_single_runs():
    inst = BanditInstance((2.0, 0.0))
    pol = PolicySpec("ts2", c=0.25, d=1e-8)
    n = 50
    out = simulate_block(inst, pol, n, "gaussian", 13, 3, 6)
    for b, rep in enumerate(range(3, 6)):
        traj = simulate_srme(inst, pol, n, master_seed=13, replication_id=rep)
        np.testing.assert_array_equal(out["q"][b], traj.pulls[-1] / n)
        np.testing.assert_allclose(out["s"][b], traj.sums[-1] / math.sqrt(n),
                                   rtol=0, atol=1e-15)
        assert out["regret"][b] == pytest.approx(
            raw_regret(traj, inst) / math.sqrt(n), abs=1e-12)


def test_snapshots_interpolate_the_recorded_path():
    inst = BanditInstance((-2.0,))
    pol = PolicySpec("ts1", c=1.0)
    n = 40
    snap = (0.0, 0.25, 0.31, 1.0)
    out = simulate_block(inst, pol, n, "gaussian", 2, 0, 3,
                         snap_times=snap, record=True)
    assert out["snap_q"].shape == (3, 4, 2)
    for si, t in enumerate(snap):
        x = t * n
        i0 = min(int(math.floor(x)), n - 1)
        frac = x - i0
        expect_q = ((1 - frac) * out["pulls"][:, i0] + frac * out["pulls"][:, i0 + 1]) / n
        expect_s = ((1 - frac) * out["sums"][:, i0] + frac * out["sums"][:, i0 + 1]) \
            / math.sqrt(n)
        np.testing.assert_allclose(out["snap_q"][:, si], expect_q, atol=1e-15)
        np.testing.assert_allclose(out["snap_s"][:, si], expect_s, atol=1e-15)
    with pytest.raises(ValueError, match="snapshot times"):
        simulate_block(inst, pol, n, "gaussian", 2, 0, 1, snap_times=(1.5,))


def test_scale_trajectory():
    inst = BanditInstance((1.0, -1.0))
    pol = PolicySpec("const", probs=(0.5, 0.5))
    n = 10
    traj = simulate_srme(inst, pol, n, master_seed=0, replication_id=0)
    times, q, s = scale_trajectory(traj)
    assert times.shape == (n + 1,)
    np.testing.assert_array_equal(times, np.arange(n + 1) / n)
    np.testing.assert_array_equal(q[-1], traj.pulls[-1] / n)
    np.testing.assert_allclose(q.sum(axis=1), times, atol=1e-15)
    # fractional time interpolates between period boundaries
    _, q_half, s_half = scale_trajectory(traj, times=[0.55])
    expect = 0.5 * (traj.pulls[5] + traj.pulls[6]) / n
    np.testing.assert_allclose(q_half[0], expect, atol=1e-15)
    expect_s = 0.5 * (traj.sums[5] + traj.sums[6]) / math.sqrt(n)
    np.testing.assert_allclose(s_half[0], expect_s, atol=1e-15)
    with pytest.raises(ValueError, match="times"):
        scale_trajectory(traj, times=[-0.1])


def test_raw_regret_conventions():
    inst = BanditInstance((-2.0,))
    traj = simulate_srme(inst, PolicySpec("ts1", c=0.0), 30,
                         master_seed=7, replication_id=0)
    # negative arm: benchmark is the outside option, regret = pulls * |mu_n|
    n = 30
    expect = traj.pulls[-1, 0] * 2.0 / math.sqrt(n)
    assert raw_regret(traj, inst) == pytest.approx(expect, abs=1e-12)
    inst2 = BanditInstance((2.0, 0.0))
    traj2 = simulate_srme(inst2, PolicySpec("ts2", c=0.0, d=1e-8), 30,
                          master_seed=7, replication_id=0)
    expect2 = traj2.pulls[-1, 1] * 2.0 / math.sqrt(30)
    assert raw_regret(traj2, inst2) == pytest.approx(expect2, abs=1e-12)
    with pytest.raises(ValueError, match="arm counts"):
        raw_regret(traj2, BanditInstance((1.0, 2.0, 3.0)))


# ---------------------------------------------------------------------------
# reward families


def test_shifted_bernoulli_support_and_mean():
    inst = BanditInstance((3.0, -3.0), sigma=(1.0, 1.0))
    out = simulate_block(inst, PolicySpec("const", probs=(0.5, 0.5)), 400,
                         "shifted-bernoulli", 17, 0, 64, record=True)
    r = out["rewards"]
    assert set(np.unique(np.abs(r))) == {1.0}
    # per-arm means land near mu_k / sqrt(n)
    acts = out["actions"]
    mu_n = 3.0 / math.sqrt(400)
    got = r[acts == 0].mean()
    se = 1.0 / math.sqrt((acts == 0).sum())
    assert abs(got - mu_n) < 4 * se


def test_shifted_bernoulli_feasibility():
    inst = BanditInstance((10.0,))
    pol = PolicySpec("ts1", c=0.0)
    simulate_block(inst, pol, 1500, "shifted-bernoulli", 0, 0, 1)
    with pytest.raises(ValueError, match="not realizable"):
        simulate_block(inst, pol, 25, "shifted-bernoulli", 0, 0, 1)


def test_shifted_uniform_support():
    inst = BanditInstance((1.0, -1.0), sigma=(1.0, 0.5))
    out = simulate_block(inst, PolicySpec("const", probs=(0.5, 0.5)), 200,
                         "shifted-uniform", 23, 0, 32, record=True)
    mu_n = np.array([1.0, -1.0]) / math.sqrt(200)
    sg = np.array([1.0, 0.5])
    centered = out["rewards"] - mu_n[out["actions"]]
    bound = math.sqrt(3.0) * sg[out["actions"]]
    assert np.all(np.abs(centered) <= bound + 1e-12)
    assert np.abs(centered).max() > 1.2  # spread actually fills the interval


def test_unknown_family_rejected():
    inst = BanditInstance((1.0, -1.0))
    with pytest.raises(ValueError, match="unknown reward family"):
        simulate_block(inst, PolicySpec("const", probs=(0.5, 0.5)), 10,
                       "poisson", 0, 0, 1)


def test_policy_horizon_must_match():
    inst = BanditInstance((-2.0,))
    finite = PolicySpec("ts1", c=0.0).to_finite(100)
    simulate_block(inst, finite, 100, "gaussian", 0, 0, 1)
    with pytest.raises(ValueError, match="horizon does not match"):
        simulate_block(inst, finite, 50, "gaussian", 0, 0, 1)


# ---------------------------------------------------------------------------
# block policy evaluation vs the scalar rules


def test_block_policy_matches_scalar_ts1():
    pol = PolicySpec("ts1", c=0.25).to_finite(100)
    pulls = np.array([[3.0, 2.0], [10.0, 0.0]])
    sums = np.array([[1.5, 0.0], [-2.0, 0.0]])
    pi = _pi_finite_block(pol, pulls, sums, 5, 1.0)
    for b in range(2):
        expect = pi_ts_one_arm_finite(pulls[b, 0], sums[b, 0], nu=pol.nu)
        assert pi[b, 0] == pytest.approx(expect, rel=1e-15)
        assert pi[b, 1] == pytest.approx(1.0 - expect, rel=1e-15)


def test_block_policy_matches_scalar_ts2():
    pol = PolicySpec("ts2", c=0.04, d=0.09).to_finite(100)
    pulls = np.array([[4.0, 6.0]])
    sums = np.array([[2.0, 1.5]])
    pi = _pi_finite_block(pol, pulls, sums, 10, 1.0)
    expect = pi_ts_two_arm_finite(4.0, 6.0, 2.0, 1.5, period=10, nu=pol.nu,
                                  zeta=pol.zeta, horizon=100)
    assert pi[0, 0] == pytest.approx(expect, rel=1e-14)


def test_block_policy_matches_scalar_greedy():
    pol = PolicySpec("greedy", alpha=2.0, smoothing=0.01).to_finite(400)
    pulls = np.array([[3.0, 7.0]])
    sums = np.array([[0.4, -0.2]])
    pi = _pi_finite_block(pol, pulls, sums, 10, 1.0)
    expect = pi_tempered_greedy(pulls[0], sums[0], alpha=pol.alpha,
                                smoothing=pol.smoothing)
    np.testing.assert_allclose(pi[0], expect, rtol=1e-14)


def test_block_policy_explore_transform():
    pol = PolicySpec("explore-ts1", c=0.0).to_finite(100)
    pulls = np.zeros((1, 2))
    sums = np.zeros((1, 2))
    pi = _pi_finite_block(pol, pulls, sums, 0, 1.0)
    np.testing.assert_allclose(pi, [[0.5, 0.5]])
