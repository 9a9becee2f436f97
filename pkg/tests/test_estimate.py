import numpy as np
import pytest

import oracles
from casp.core import FeasibleMap, TwoStagePolicy, burden, uniform_policy
from casp.errors import ConfigError, DataError, OffSupportError
from casp.estimate import (
    casp_score,
    diagnostics,
    dr_value,
    empirical_burden,
    estimate_policy,
    ips_value,
    logged_weights,
    plugin_value,
    rescore_burden,
    write_estimates_csv,
)
from casp.nuisance import NuisanceBundle, frozen_reward, make_bundle, propensity_source
from casp.simulate import LoggedDataset, sample_log


@pytest.fixture
def logged(small_env):
    return sample_log(small_env, 500, seed=21)


@pytest.fixture
def bundle(logged, small_env):
    return make_bundle(logged, small_env.behavior, folds=5, seed=2)


def test_ips_matches_loop_oracle(logged, small_policy):
    assert ips_value(logged, small_policy) == pytest.approx(oracles.ips(oracles.records_of(logged), small_policy),
                                                           rel=1e-12)


def test_dr_matches_loop_oracle(logged, small_policy, bundle):
    q = bundle.record_qhat(logged)
    sizes = logged.feasible.sizes.tolist()
    expect = oracles.dr(oracles.records_of(logged), small_policy, q.tolist(), sizes)
    assert dr_value(logged, small_policy, bundle) == pytest.approx(expect, rel=1e-12)


def test_dr_with_zero_model_is_ips(logged, small_policy, small_env):
    zero = NuisanceBundle(frozen_reward(logged, np.zeros(small_env.shape)),
                          propensity_source(logged, behavior=small_env.behavior))
    assert dr_value(logged, small_policy, zero) == pytest.approx(ips_value(logged, small_policy), rel=1e-12)


def test_self_normalized_ips_of_behavior_is_mean_reward(logged, small_env):
    assert ips_value(logged, small_env.behavior, self_normalized=True) == pytest.approx(logged.y.mean())


def test_plugin_with_exact_rewards(logged, small_env, small_policy):
    exact = NuisanceBundle(frozen_reward(logged, small_env.true_reward),
                           propensity_source(logged, behavior=small_env.behavior))
    pj = small_policy.joint()
    per = (pj * small_env.true_reward).sum(axis=(1, 2))
    assert plugin_value(logged, small_policy, exact) == pytest.approx(per[logged.context].mean())


def test_empirical_burden_averages_conditional(logged, small_env, small_policy):
    per, _ = burden(small_env, small_policy)
    assert empirical_burden(logged, small_policy, small_env.behavior) == pytest.approx(per[logged.context].mean())


def test_behavior_diagnostics(logged, small_env, bundle):
    e = estimate_policy(logged, small_env.behavior, bundle, "normalized_full")
    assert e.burden == pytest.approx(1.0, abs=1e-12)
    assert e.ess == pytest.approx(logged.n)
    assert e.max_weight == pytest.approx(1.0)
    assert e.off_support_mass == 0.0


def test_ess_matches_oracle(logged, small_env, small_policy):
    w = logged_weights(logged, small_policy)
    d = diagnostics(logged, small_policy, small_env.behavior)
    assert d.ess == pytest.approx(oracles.ess(w.tolist()), rel=1e-12)
    assert d.max_weight == w.max()
    np.testing.assert_allclose(d.generator_share, small_policy.stage1[logged.context].mean(axis=0))


def _offsupport_case(floor):
    fm = FeasibleMap.from_lists([[[0], [1]]] * 2)
    s1 = np.array([[1.0, 0.0], [0.5, 0.5]])
    beh = TwoStagePolicy("beh", s1, np.ones((2, 2, 1)))
    data = LoggedDataset(np.array([0, 1, 1]), np.array([0, 0, 1]), np.zeros(3, dtype=int), np.array([1.0, 0.0, 1.0]),
                         s1[[0, 1, 1], [0, 0, 1]], np.ones(3), fm)
    pi = TwoStagePolicy("pi", np.array([[0.0, 1.0], [0.0, 1.0]]), np.ones((2, 2, 1)))
    return data, beh, pi, NuisanceBundle(frozen_reward(data, np.zeros((2, 2, 1))),
                                         propensity_source(data, "reconstructed", floor, behavior=beh))


def test_off_support_without_floor_raises():
    data, beh, pi, bundle = _offsupport_case(0.0)
    with pytest.raises(OffSupportError) as err:
        empirical_burden(data, pi, bundle)
    assert err.value.triple == (0, 1, 1)


def test_off_support_with_floor_is_visible():
    data, beh, pi, bundle = _offsupport_case(1e-9)
    b = empirical_burden(data, pi, bundle)
    # context 0 (1 record of 3) puts all mass on a zero-propensity pair
    assert b == pytest.approx((1e9 + 2 * 4.0) / 3)
    d = diagnostics(data, pi, bundle)
    assert d.off_support_mass == pytest.approx(1 / 3)
    assert b >= 1e7 * d.off_support_mass


def test_casp_score_and_validation():
    assert casp_score(0.8, 2.0, 0.05) == pytest.approx(0.7)
    assert casp_score(0.8, 1e9, 0.0) == 0.8
    with pytest.raises(ConfigError):
        casp_score(0.8, 1.0, -0.01)
    with pytest.raises(ConfigError):
        casp_score(0.8, 1.0, float("nan"))


def test_burden_modes_on_estimate(logged, bundle, small_env):
    u = uniform_policy(small_env.feasible)
    e = estimate_policy(logged, u, bundle, "normalized_full")
    assert e.burden_score == pytest.approx(1.0)
    assert e.burden == pytest.approx(empirical_burden(logged, u, bundle))
    (r,) = rescore_burden([e], logged, [u], bundle, "raw_full")
    assert r.burden_score == r.burden and r.burden_mode == "raw_full"


def test_dr_sd_and_j(logged, bundle, small_policy):
    e = estimate_policy(logged, small_policy, bundle)
    assert e.n == logged.n
    assert e.dr_sd == pytest.approx(np.std(e.scores, ddof=1))
    assert e.j(0.1) == pytest.approx(e.v_dr - 0.1 * e.burden_score)


def test_missing_propensities(small_env, small_policy):
    d = sample_log(small_env, 10, seed=1)
    bare = LoggedDataset(d.context, d.a1, d.slot, d.y, None, None, d.feasible)
    with pytest.raises(DataError):
        logged_weights(bare, small_policy)
    assert logged_weights(bare, small_policy, small_env.behavior).shape == (10,)


def test_estimates_csv_header(tmp_path, logged, bundle, small_env):
    e = [estimate_policy(logged, p, bundle) for p in (small_env.behavior, uniform_policy(small_env.feasible))]
    write_estimates_csv(e, tmp_path / "e.csv", lambdas=(0.0, 0.05))
    head = (tmp_path / "e.csv").read_text().splitlines()[0]
    assert head == "policy_id,v_dr,v_ips,burden,ess,max_w,off_support_mass,j_lambda_0,j_lambda_0.05"
