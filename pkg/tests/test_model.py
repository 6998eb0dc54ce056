"""Instance and policy specification types."""

import math

import numpy as np
import pytest

from diffbandit.model import (
    BanditInstance,
    Path,
    PolicySpec,
    ScaledState,
    prelimit_mean,
    validate_instance,
)


def test_instance_coercion_and_default_sigma():
    inst = BanditInstance([1, -2])
    assert inst.mu == (1.0, -2.0)
    assert inst.sigma == (1.0, 1.0)
    assert inst.n_arms == 2
    single = BanditInstance(3.0, 0.5)
    assert single.mu == (3.0,) and single.sigma == (0.5,)


def test_validate_instance_errors():
    with pytest.raises(ValueError, match="at least one arm"):
        validate_instance(BanditInstance(()))
    with pytest.raises(ValueError, match="equal length"):
        validate_instance(BanditInstance((1.0, 2.0), (1.0,)))
    with pytest.raises(ValueError, match="volatility"):
        validate_instance(BanditInstance((1.0,), (0.0,)))
    with pytest.raises(ValueError, match="finite"):
        validate_instance(BanditInstance((math.nan,), (1.0,)))
    with pytest.raises(ValueError, match="reward family"):
        validate_instance(BanditInstance((1.0,)), family="poisson")


def test_validate_instance_bernoulli_feasibility():
    inst = BanditInstance((10.0,), (1.0,))
    validate_instance(inst, horizon=1500, family="shifted-bernoulli")
    # |mu|/sqrt(n) must stay strictly below sigma
    with pytest.raises(ValueError, match="not realizable"):
        validate_instance(inst, horizon=100, family="shifted-bernoulli")
    with pytest.raises(ValueError, match="not realizable"):
        validate_instance(BanditInstance((1.0,), (1.0,)), horizon=1,
                          family="shifted-bernoulli")
    validate_instance(inst, horizon=100, family="gaussian")


def test_prelimit_mean_golden():
    assert prelimit_mean(10.0, 1500) == pytest.approx(0.2581988897471611, rel=1e-15)
    assert prelimit_mean(-2.0, 4) == -1.0
    with pytest.raises(ValueError):
        prelimit_mean(1.0, 0)


# ---------------------------------------------------------------------------
# PolicySpec


def test_policy_kind_and_form_validation():
    with pytest.raises(ValueError, match="unknown policy kind"):
        PolicySpec("ucb")
    with pytest.raises(ValueError, match="unknown policy form"):
        PolicySpec("ts1", form="asymptotic")
    with pytest.raises(ValueError, match="c must be"):
        PolicySpec("ts1", c=-0.5)
    with pytest.raises(ValueError, match="luce requires"):
        PolicySpec("luce", alpha=0.0)
    with pytest.raises(ValueError, match="probs"):
        PolicySpec("const")
    with pytest.raises(ValueError, match="probability vector"):
        PolicySpec("const", probs=(0.7, 0.7))


def test_policy_finite_form_requirements():
    with pytest.raises(ValueError, match="horizon"):
        PolicySpec("ts1", form="finite", nu=1.0)
    with pytest.raises(ValueError, match="nu > 0"):
        PolicySpec("ts1", form="finite", horizon=100)
    spec = PolicySpec("ts1", form="finite", horizon=100, nu=1.0)
    assert spec.horizon == 100
    with pytest.raises(ValueError, match="zeta"):
        PolicySpec("ts2", form="finite", horizon=10, nu=1.0, zeta=0.0)


def test_policy_base_kind_and_n_arms():
    assert PolicySpec("explore-ts1").base_kind == "ts1"
    assert PolicySpec("explore-ts2").base_kind == "ts2"
    assert PolicySpec("greedy").base_kind == "greedy"
    assert PolicySpec("ts1").n_arms == 1
    assert PolicySpec("explore-ts2").n_arms == 2
    assert PolicySpec("const", probs=(0.2, 0.3, 0.5)).n_arms == 3
    assert PolicySpec("greedy").n_arms is None


def test_to_finite_posterior_scaling():
    # undersmoothed: flat prior stays at nu = 1 regardless of horizon
    f = PolicySpec("ts1", c=0.0).to_finite(400)
    assert f.form == "finite" and f.horizon == 400
    assert f.nu == 1.0 and f.zeta is None
    # tight prior: nu^-2 = n c
    f = PolicySpec("ts1", c=1.0).to_finite(400)
    assert f.nu == pytest.approx(1.0 / 20.0, rel=1e-15)
    f = PolicySpec("ts2", c=0.25, d=0.01).to_finite(100)
    assert f.nu == pytest.approx(1.0 / 5.0, rel=1e-15)
    assert f.zeta == pytest.approx(1.0, rel=1e-15)


def test_to_finite_greedy_luce_scaling():
    f = PolicySpec("greedy", alpha=2.0, smoothing=0.01).to_finite(10000)
    assert f.alpha == pytest.approx(200.0, rel=1e-15)
    assert f.smoothing == pytest.approx(100.0, rel=1e-15)
    f = PolicySpec("luce", alpha=0.5).to_finite(900)
    assert f.alpha == pytest.approx(15.0, rel=1e-15)


def test_to_finite_rejects_wrong_form_or_horizon():
    finite = PolicySpec("ts1", form="finite", horizon=5, nu=1.0)
    with pytest.raises(ValueError, match="limit-form"):
        finite.to_finite(5)
    with pytest.raises(ValueError, match="horizon"):
        PolicySpec("ts1").to_finite(0)


def test_policy_dict_roundtrip():
    spec = PolicySpec("ts2", c=0.25, d=1e-8)
    again = PolicySpec.from_dict(spec.to_dict())
    assert again == spec
    spec = PolicySpec("const", probs=(0.25, 0.75))
    assert PolicySpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ValueError, match="unknown PolicySpec fields"):
        PolicySpec.from_dict({"kind": "ts1", "temperature": 2.0})


# ---------------------------------------------------------------------------
# State / path containers


def test_scaled_state_check():
    st = ScaledState(0.5, [0.2, 0.3], [0.1, -0.4])
    st.check()
    with pytest.raises(ValueError, match="sum to elapsed"):
        ScaledState(0.5, [0.2, 0.2], [0.0, 0.0]).check()
    with pytest.raises(ValueError, match="negative"):
        ScaledState(0.1, [-0.1, 0.2], [0.0, 0.0]).check()
    with pytest.raises(ValueError, match="equal shape"):
        ScaledState(0.0, [0.0], [0.0, 0.0])


def test_path_final_state():
    times = np.array([0.0, 0.5, 1.0])
    q = np.array([[0.0, 0.0], [0.2, 0.3], [0.6, 0.4]])
    s = np.zeros((3, 2))
    path = Path(times=times, q=q, s=s, regret=0.25)
    assert path.n_arms == 2
    final = path.final_state()
    assert final.t == 1.0
    np.testing.assert_array_equal(final.q, [0.6, 0.4])
    final.check()
