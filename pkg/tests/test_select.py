import numpy as np
import pytest

import oracles
from casp.core import PolicyLibrary, TwoStagePolicy, burden, policy_value, uniform_policy
from casp.errors import ConfigError, EmptyFeasibleSetError
from casp.estimate import estimate_policies
from casp.nuisance import fit_reward_table, make_bundle
from casp.select import (
    LIBRARY_CAP,
    argmax_casp,
    argmax_policy,
    build_library,
    generator_library,
    lambda_sweep,
    mode_summary,
    replication_stability,
    select_baselines,
    select_casp,
    select_constrained,
    with_truth,
)
from casp.simulate import BlockConfig, build_block_env, build_counterexample, sample_log


@pytest.fixture(scope="module")
def coupled():
    env = build_block_env(BlockConfig("coupling", coupling_strength=1.0))
    data = sample_log(env, 1200, seed=5)
    train, sel = data.subset(np.arange(600)), data.subset(np.arange(600, 1200))
    lib = build_library(env.feasible, fit_reward_table(train), env.behavior)
    bundle = make_bundle(sel, env.behavior, folds=5, seed=1)
    return env, sel, lib, bundle, estimate_policies(sel, lib, bundle)


def test_argmax_tie_breaks():
    assert argmax_policy(["b", "a"], [1.0, 1.0], [2.0, 2.0]) == 1  # smaller id
    assert argmax_policy(["b", "a"], [1.0, 1.0], [1.0, 2.0]) == 0  # lower burden first
    assert argmax_policy(["a", "b"], [0.5, 1.0], [1.0, 9.0]) == 1


def test_argmax_casp_matches_sorting_oracle():
    g = np.random.default_rng(4)
    for _ in range(200):
        k = int(g.integers(1, 8))
        ids = [f"p{i}" for i in g.permutation(k)]
        v = np.round(g.uniform(size=k), 1)
        b = np.round(g.uniform(1, 3, size=k), 1)
        lam = float(g.choice([0.0, 0.05, 0.1]))
        assert ids[argmax_casp(ids, v, b, lam)] == oracles.casp_pick(ids, v.tolist(), b.tolist(), lam)


def test_library_shape_and_order(coupled):
    env, _, lib, _, _ = coupled
    assert lib.ids[0] == "behavior"
    assert len(lib) == LIBRARY_CAP
    assert "gen0+greedy" in lib.ids and "gen3+uniform" in lib.ids
    # 1 + 5 stage-2 rules x 8 stage-1 rules = 41 candidates; the cap drops the last one
    assert "beh+uniform" not in lib.ids
    assert len(set(lib.ids)) == len(lib)
    lib.check(env.feasible)


def test_library_drops_duplicates():
    env = build_counterexample(0.85)
    lib = build_library(env.feasible, env.true_reward, env.behavior)
    joints = [p.joint().tobytes() for p in lib]
    assert len(set(joints)) == len(joints)


def test_generator_library(counterexample):
    lib = generator_library(counterexample.feasible, counterexample.true_reward, counterexample.behavior)
    assert lib.ids == ["behavior", "gen0+greedy", "gen1+greedy"]


def test_casp_at_zero_is_dr_only(coupled):
    _, sel, lib, bundle, ests = coupled
    a = select_casp(lib, sel, bundle, 0.0, estimates=ests).selected
    b = select_baselines("dr_only", lib, sel, bundle, estimates=ests).selected
    assert a == b


def test_casp_burden_decreases_along_lambda(coupled):
    _, sel, lib, bundle, ests = coupled
    rows = lambda_sweep(lib, sel, bundle, [0.0, 0.01, 0.05, 0.2, 1.0, 10.0], estimates=ests)
    scores = {e.policy_id: e.burden_score for e in ests}
    path = [scores[r["selected"]] for r in rows]
    assert all(b2 <= b1 + 1e-12 for b1, b2 in zip(path, path[1:]))
    assert set(rows[0]) == {"lambda", "selected", "dr_value", "burden", "ess", "max_w"}


def test_huge_lambda_picks_minimum_burden(coupled):
    _, sel, lib, bundle, ests = coupled
    pick = select_casp(lib, sel, bundle, 1e6, estimates=ests).selected
    assert pick == min(ests, key=lambda e: (e.burden_score, e.burden, e.policy_id)).policy_id


def test_casp_rejects_mode_mismatch(coupled):
    _, sel, lib, bundle, ests = coupled
    with pytest.raises(ConfigError):
        select_casp(lib, sel, bundle, 0.05, "raw_full", estimates=ests)
    with pytest.raises(ConfigError):
        select_casp(lib, sel, bundle, -1.0, estimates=ests)


def test_constrained_selection(coupled):
    _, sel, lib, bundle, ests = coupled
    rep = select_constrained(lib, sel, bundle, 3.0, estimates=ests)
    assert rep.estimate().burden <= 3.0
    ok = [e for e in ests if e.burden <= 3.0]
    assert rep.estimate().v_dr == max(e.v_dr for e in ok)
    with pytest.raises(EmptyFeasibleSetError) as err:
        select_constrained(lib, sel, bundle, 0.5, estimates=ests)
    assert err.value.min_burden == pytest.approx(min(e.burden for e in ests))


def test_dr_lcb_beta_zero_is_dr_only(coupled):
    _, sel, lib, bundle, ests = coupled
    a = select_baselines("dr_lcb", lib, sel, bundle, {"beta": 0.0}, ests).selected
    assert a == select_baselines("dr_only", lib, sel, bundle, estimates=ests).selected
    with pytest.raises(ConfigError):
        select_baselines("dr_lcb", lib, sel, bundle, {"beta": -1.0}, ests)


@pytest.mark.parametrize("kind", ["plugin", "stagewise", "ma_style", "wang_style", "oracle"])
def test_every_baseline_returns_library_member(coupled, kind):
    env, sel, lib, bundle, ests = coupled
    rep = select_baselines(kind, lib, sel, bundle, {"proxy": env.proxy_score}, ests, env=env)
    assert rep.selected in lib.ids
    assert rep.kind == kind


def test_oracle_needs_env_and_maximizes_truth(coupled):
    env, sel, lib, bundle, ests = coupled
    with pytest.raises(ConfigError):
        select_baselines("oracle", lib, sel, bundle, estimates=ests)
    rep = with_truth(select_baselines("oracle", lib, sel, bundle, estimates=ests, env=env), env, lib)
    assert rep.regret == 0.0
    assert rep.true_value == max(policy_value(env, p) for p in lib)
    assert rep.true_burden == pytest.approx(burden(env, lib[rep.selected])[1])


def test_unknown_selector(coupled):
    _, sel, lib, bundle, ests = coupled
    with pytest.raises(ConfigError):
        select_baselines("mystery", lib, sel, bundle, estimates=ests)


def test_stagewise_follows_proxy_not_continuation(counterexample):
    env = counterexample
    data = sample_log(env, 400, seed=3)
    lib = generator_library(env.feasible, env.true_reward, env.behavior)
    bundle = make_bundle(data, env.behavior, folds=2)
    rep = select_baselines("stagewise", lib, data, bundle, {"proxy": env.proxy_score}, env=env)
    assert rep.selected == "gen0+greedy"
    assert policy_value(env, lib[rep.selected]) == 0.0


def test_mode_summary_and_stability():
    assert mode_summary(["b", "a", "b", "a", "c"]) == ("a", 0.4, 3)
    mode, freq, uniq = replication_stability(lambda s: "x" if s % 3 else "y", 6)
    assert (mode, freq, uniq) == ("x", 4 / 6, 2)
    with pytest.raises(ConfigError):
        replication_stability(lambda s: "x", 0)


def test_casp_switch_point_between_sharp_and_uniform():
    env = build_counterexample(0.85)
    s2 = np.ones((1, 2, 1))
    sharp = TwoStagePolicy("sharp", np.array([[0.0, 1.0]]), s2)
    lib = PolicyLibrary((uniform_policy(env.feasible, "u"), sharp))
    v = [policy_value(env, p) for p in lib]
    b = [burden(env, p)[1] for p in lib]
    assert lib.ids[argmax_casp(lib.ids, v, b, 0.0)] == "sharp"
    # V gap 0.425 vs burden gap 1: lambda above 0.425 flips the choice
    assert lib.ids[argmax_casp(lib.ids, v, b, 0.43)] == "u"
