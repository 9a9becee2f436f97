import pytest

from casp.theory import BURDEN_CHECKS, CHECKS, check_nuisance_gap, check_second_moment, run_all


def test_quick_suite_passes():
    results = run_all(seed=0, quick=True)
    assert [r.name for r in results] == list(CHECKS)
    for r in results:
        assert r.passed, (r.name, r.statistic, r.threshold, r.detail)


@pytest.mark.parametrize("scale", [1.001, 0.999, 2.0])
def test_burden_mutation_is_caught(scale):
    (r,) = run_all(seed=0, only=["second_moment_identity"], burden_scale=scale)
    assert not r.passed
    assert r.statistic > 1e-4


def test_mutation_hook_reaches_burden_checks():
    # a doubled population burden only loosens the guarantee and variance bounds,
    # while a doubled empirical burden leaves the coverage radius
    results = {r.name: r.passed for r in run_all(seed=0, only=list(BURDEN_CHECKS), burden_scale=2.0, quick=True)}
    assert results == {"second_moment_identity": False, "population_guarantee": True,
                       "finite_class_coverage": False, "ips_variance_bound": True}


def test_second_moment_small_call():
    r = check_second_moment(seed=4, n_envs=3, n_policies=4)
    assert r.passed and r.statistic <= 1e-10


def test_nuisance_gap_small_call():
    assert check_nuisance_gap(seed=2, n_envs=5).passed
