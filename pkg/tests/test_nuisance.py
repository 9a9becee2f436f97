from collections import defaultdict

import numpy as np
import pytest

import oracles
from casp import rng as rngmod
from casp.core import PolicyLibrary, TwoStagePolicy
from casp.errors import ConfigError, DataError
from casp.nuisance import (
    NuisanceBundle,
    assign_folds,
    audit_nuisance_gap,
    fit_reward_crossfit,
    fit_reward_table,
    frozen_reward,
    make_bundle,
    propensity_source,
)
from casp.simulate import random_env, random_library, sample_log


@pytest.fixture
def logged(small_env):
    return sample_log(small_env, 400, seed=11)


def test_triple_table_matches_loop_oracle(logged):
    table = fit_reward_table(logged, smoothing=2.0, cells="triple")
    expect, prior = oracles.triple_reward_table(oracles.records_of(logged), 2.0)
    C, K1, L = logged.feasible.shape
    for x in range(C):
        for a in range(K1):
            for j in range(L):
                if not logged.feasible.mask[x, a, j]:
                    assert table[x, a, j] == 0.0
                else:
                    assert table[x, a, j] == pytest.approx(expect.get((x, a, j), prior), abs=1e-14)


def test_item_table_pools_across_generators(logged):
    table = fit_reward_table(logged, smoothing=1.0, cells="item")
    ys = defaultdict(list)
    for it, y in zip(logged.a2, logged.y):
        ys[int(it)].append(float(y))
    prior = float(np.mean(logged.y))
    means = oracles.item_reward_means(ys, 1.0, prior)
    items = logged.feasible.items
    for idx in zip(*np.nonzero(logged.feasible.mask)):
        assert table[idx] == pytest.approx(means.get(int(items[idx]), prior), abs=1e-14)


def test_item_table_background_counts_but_is_separate(logged):
    train = np.zeros(logged.n, dtype=bool)
    bg = logged.subset(np.arange(100))
    a = fit_reward_table(logged, 1.0, "item", train=train, background=bg)
    b = fit_reward_table(bg, 1.0, "item")
    np.testing.assert_allclose(a, b)


def test_zero_smoothing_gives_plain_means(logged):
    table = fit_reward_table(logged, smoothing=0.0)
    x, a, j = int(logged.context[0]), int(logged.a1[0]), int(logged.slot[0])
    hit = (logged.context == x) & (logged.a1 == a) & (logged.slot == j)
    assert table[x, a, j] == pytest.approx(logged.y[hit].mean())


def test_folds_are_balanced_and_seeded():
    f = assign_folds(103, 5, seed=3)
    counts = np.bincount(f)
    assert counts.max() - counts.min() <= 1
    np.testing.assert_array_equal(f, assign_folds(103, 5, seed=3))
    assert not np.array_equal(f, assign_folds(103, 5, seed=4))


def test_crossfit_tables_never_see_own_fold(logged):
    fit = fit_reward_crossfit(logged, folds=4, smoothing=1.0, seed=1)
    for f in range(4):
        expect = fit_reward_table(logged, 1.0, "triple", train=fit.fold != f)
        np.testing.assert_array_equal(fit.tables[f], expect)


def test_crossfit_fold_count_validation(logged):
    with pytest.raises(ConfigError):
        fit_reward_crossfit(logged, folds=1)
    with pytest.raises(ConfigError):
        fit_reward_crossfit(logged.subset(np.arange(3)), folds=5)


def test_logged_mode_checks_propensities(logged, small_env):
    propensity_source(logged, "logged", behavior=small_env.behavior)
    bad = small_env.behavior.renamed("b")
    s1 = bad.stage1.copy()
    s1[:, 0] *= 0.999
    with pytest.raises(DataError):
        propensity_source(logged, "logged", behavior=TwoStagePolicy("b", s1, bad.stage2))


def test_perturbed_propensities_renormalize(logged, small_env):
    p = propensity_source(logged, "perturbed", behavior=small_env.behavior, delta=0.3, seed=2)
    np.testing.assert_allclose(p.stage1[0].sum(axis=1), 1.0)
    np.testing.assert_allclose(p.stage2[0].sum(axis=2), 1.0)
    assert not np.allclose(p.stage1[0], small_env.behavior.stage1)
    p0 = propensity_source(logged, "perturbed", behavior=small_env.behavior, delta=0.0)
    np.testing.assert_array_equal(p0.stage1[0], small_env.behavior.stage1)


def test_propensity_source_validation(logged, small_env):
    with pytest.raises(ConfigError):
        propensity_source(logged, "bogus", behavior=small_env.behavior)
    with pytest.raises(ConfigError):
        propensity_source(logged, "logged", -1.0, behavior=small_env.behavior)
    with pytest.raises(ConfigError):
        propensity_source(logged, "logged")


def test_bundle_csv(tmp_path, logged, small_env):
    bundle = make_bundle(logged, small_env.behavior, folds=3, seed=0)
    bundle.to_csv(logged, tmp_path / "n.csv")
    lines = (tmp_path / "n.csv").read_text().splitlines()
    assert lines[0] == "record,fold,context_id,a1,a2,qhat,ehat"
    assert len(lines) == logged.n + 1
    e = bundle.record_ehat(logged)[np.arange(logged.n), logged.a1, logged.slot]
    np.testing.assert_allclose(e, logged.mu1 * logged.mu2)


def _gap_setup(seed):
    g = rngmod.stream(seed, rngmod.PURPOSE_FIXTURE, 3)
    env = random_env(g, 4, 3, 5, min_propensity=0.1)
    while min(env.shape[1:]) < 2:
        env = random_env(g, 4, 3, 5, min_propensity=0.1)
    data = sample_log(env, 60, rng=g)
    lib = random_library(env.feasible, g, 6, include=(env.behavior,))
    return env, data, lib


def test_nuisance_gap_zero_with_exact_propensities():
    env, data, lib = _gap_setup(1)
    bundle = make_bundle(data, env.behavior, folds=3, seed=0)
    dv, db = audit_nuisance_gap(env, bundle, lib)
    assert dv <= 1e-10 and db <= 1e-10


def test_nuisance_gap_zero_with_exact_rewards():
    env, data, lib = _gap_setup(2)
    prop = propensity_source(data, "perturbed", behavior=env.behavior, delta=0.4, seed=5)
    bundle = NuisanceBundle(frozen_reward(data, env.true_reward), prop)
    dv, db = audit_nuisance_gap(env, bundle, lib)
    assert dv <= 1e-10
    assert db > 1e-6  # the burden still sees the wrong propensities


def test_nuisance_gap_positive_when_both_wrong():
    env, data, lib = _gap_setup(3)
    bundle = make_bundle(data, env.behavior, folds=3, mode="perturbed", delta=0.4, seed=5)
    dv, _ = audit_nuisance_gap(env, bundle, lib)
    assert dv > 1e-6


def test_audit_needs_environment(logged, small_env):
    bundle = make_bundle(logged, small_env.behavior, folds=2)
    with pytest.raises(ConfigError):
        audit_nuisance_gap(None, bundle, PolicyLibrary((small_env.behavior,)))
