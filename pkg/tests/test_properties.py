"""Invariants checked on random small instances drawn by hypothesis."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from casp import rng as rngmod
from casp.core import (
    FeasibleMap,
    burden,
    env_from_dict,
    env_to_dict,
    policy_value,
    uniform_policy,
)
from casp.estimate import dr_value, empirical_burden, ips_value, logged_weights
from casp.movielens.contexts import strict_prefix_counts
from casp.nuisance import NuisanceBundle, assign_folds, frozen_reward, make_bundle, propensity_source
from casp.report import fmt
from casp.select import argmax_casp
from casp.simulate import random_env, random_policy, sample_log

seeds = st.integers(0, 2**32 - 1)
FAST = settings(max_examples=60, deadline=None)


def instance(seed, min_propensity=0.0):
    g = rngmod.stream(seed, rngmod.PURPOSE_CHECK, 99)
    env = random_env(g, 4, 3, 5, min_propensity=min_propensity)
    return env, random_policy(env.feasible, g), g


@FAST
@given(seeds)
def test_value_and_burden_match_loop_oracles(seed):
    env, pi, _ = instance(seed)
    assert np.isclose(policy_value(env, pi), oracles.value(env, pi), rtol=1e-12)
    b = burden(env, pi)[1]
    assert np.isclose(b, oracles.burden(env, pi), rtol=1e-12)
    assert np.isclose(b, oracles.second_moment(env, pi), rtol=1e-12)


@FAST
@given(seeds)
def test_burden_at_least_one_and_one_for_behavior(seed):
    env, pi, _ = instance(seed)
    assert burden(env, pi)[1] >= 1 - 1e-12
    assert np.isclose(burden(env, env.behavior)[1], 1.0, rtol=1e-12)


@FAST
@given(seeds)
def test_value_is_bounded(seed):
    env, pi, _ = instance(seed)
    assert -1e-12 <= policy_value(env, pi) <= env.reward_bound + 1e-12


@FAST
@given(seeds, st.floats(1e-6, 10.0))
def test_floor_never_raises_burden(seed, floor):
    env, pi, _ = instance(seed)
    assert burden(env, pi, floor=floor)[1] <= burden(env, pi)[1] * (1 + 1e-12)
    assert np.isclose(burden(env, pi, floor=floor)[1], oracles.burden(env, pi, floor), rtol=1e-12)


@FAST
@given(seeds, st.integers(5, 60))
def test_ips_and_dr_match_oracles(seed, n):
    env, pi, _ = instance(seed, min_propensity=0.05)
    data = sample_log(env, n, seed=seed % 1000)
    recs = oracles.records_of(data)
    assert np.isclose(ips_value(data, pi), oracles.ips(recs, pi), rtol=1e-10)
    bundle = make_bundle(data, env.behavior, folds=min(5, n), seed=1)
    q = bundle.record_qhat(data).tolist()
    sizes = data.feasible.sizes.tolist()
    assert np.isclose(dr_value(data, pi, bundle), oracles.dr(recs, pi, q, sizes), rtol=1e-10, atol=1e-12)


@FAST
@given(seeds, st.integers(2, 40))
def test_dr_with_exact_model_is_value_plus_weighted_noise(seed, n):
    env, pi, _ = instance(seed, min_propensity=0.05)
    data = sample_log(env, n, seed=seed % 997)
    exact = NuisanceBundle(frozen_reward(data, env.true_reward), propensity_source(data, behavior=env.behavior))
    per = (pi.joint() * env.true_reward).sum(axis=(1, 2))
    w = logged_weights(data, pi)
    resid = data.y - env.true_reward[data.context, data.a1, data.slot]
    expect = per[data.context].mean() + (w * resid).mean()
    assert np.isclose(dr_value(data, pi, exact), expect, rtol=1e-10, atol=1e-12)


@FAST
@given(seeds, st.integers(5, 60))
def test_empirical_burden_of_behavior_is_one(seed, n):
    env, _, _ = instance(seed)
    data = sample_log(env, n, seed=3)
    assert np.isclose(empirical_burden(data, env.behavior, env.behavior), 1.0, rtol=1e-12)
    assert (logged_weights(data, env.behavior) == 1.0).all()


@FAST
@given(st.integers(1, 500), st.integers(1, 10), seeds)
def test_folds_are_balanced_and_seeded(n, k, seed):
    k = min(k, n)
    f = assign_folds(n, k, seed)
    sizes = np.bincount(f, minlength=k)
    assert sizes.max() - sizes.min() <= 1 and sizes.sum() == n
    np.testing.assert_array_equal(f, assign_folds(n, k, seed))


ids_values = st.lists(
    st.tuples(st.floats(-1, 1, allow_nan=False), st.floats(1, 50, allow_nan=False)), min_size=1, max_size=10
)


@settings(max_examples=200, deadline=None)
@given(ids_values, st.sampled_from([0.0, 0.01, 0.05, 0.5, 3.0]))
def test_argmax_matches_sorting_oracle(rows, lam):
    ids = [f"p{i:02d}" for i in range(len(rows))][::-1]
    v = [r[0] for r in rows]
    b = [r[1] for r in rows]
    assert ids[argmax_casp(ids, v, b, lam)] == oracles.casp_pick(ids, v, b, lam)


@settings(max_examples=100, deadline=None)
@given(ids_values)
def test_pick_burden_falls_as_lambda_grows(rows):
    ids = [f"p{i}" for i in range(len(rows))]
    v = np.array([r[0] for r in rows])
    b = np.array([r[1] for r in rows])
    picks = [argmax_casp(ids, v, b, lam) for lam in (0.0, 0.01, 0.1, 1.0, 10.0)]
    path = b[picks]
    assert (np.diff(path) <= 1e-12).all()
    values = v[picks]
    assert (np.diff(values) <= 1e-12).all()


@FAST
@given(seeds)
def test_env_dict_round_trip(seed):
    env, pi, _ = instance(seed)
    back = env_from_dict(env_to_dict(env))
    assert policy_value(back, pi) == policy_value(env, pi)
    assert burden(back, pi)[1] == burden(env, pi)[1]
    assert back.feasible.to_lists() == env.feasible.to_lists()


@FAST
@given(st.lists(st.lists(st.lists(st.integers(0, 7), min_size=1, max_size=4, unique=True), min_size=2, max_size=2),
                min_size=1, max_size=4))
def test_feasible_map_round_trip_and_uniform(sets):
    fm = FeasibleMap.from_lists(sets, n_items=8)
    assert fm.to_lists() == sets
    u = uniform_policy(fm)
    np.testing.assert_allclose(u.joint().sum(axis=(1, 2)), 1.0)
    assert (u.joint()[~fm.mask] == 0).all()


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 6)), min_size=1, max_size=40))
def test_strict_prefix_counts(events):
    users = np.array([u for u, _ in events])
    ts = np.array([t for _, t in events])
    assert strict_prefix_counts(users, ts).tolist() == oracles.strict_prefix(users.tolist(), ts.tolist())


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_csv_number_text_round_trips(x):
    assert float(fmt(x)) == x
