"""Pin the header line of every CSV the package writes."""

import pytest

from casp.blocks import RunSettings, run_block, write_block_reports
from casp.cli import main
from casp.core import uniform_policy
from casp.estimate import estimate_policy, write_estimates_csv
from casp.movielens.app import AppConfig, run_app, write_app_reports
from casp.nuisance import make_bundle
from casp.simulate import BlockConfig, sample_log

METHOD_COLS = ",".join(f"{m}_{k}" for m in ("casp", "dr_only", "dr_lcb", "plugin", "stagewise", "ma_style",
                                             "wang_style", "oracle") for k in ("value", "burden", "stability"))

GOLDEN = {
    "dataset.csv": "rep,context_id,a1,a2,y,mu1,mu2",
    "estimates.csv": "policy_id,v_dr,v_ips,burden,ess,max_w,off_support_mass,j_lambda_0,j_lambda_0.05",
    "block/sweep_B1.csv": "sweep_value," + METHOD_COLS,
    "block/frontier_B1.csv": "block_label," + METHOD_COLS,
    "block/comparators_B1.csv": "method,value,regret,burden,stability",
    "block/ablation_B1.csv": "burden_mode,value,regret,burden,stability",
    "block/replications_B1.csv": "point,rep,method,selected,value,regret,burden",
    "sweep/lambda_path_B2.csv": "point,lambda,mode_policy,mode_freq,dr_value,true_value,regret,burden,true_burden,ess,max_w",
    "theory/theory_checks.csv": "check,status,statistic,threshold,seconds,detail",
    "app/app_comparators.csv": "comparator,dr_value,burden,ess,max_w,off_support_mass,mode_freq,unique_policies,mode_policy",
    "app/app_lambda_path.csv": "lambda,mode_policy,dr_value,burden,ess,max_w,mode_freq",
    "app/app_ablation.csv": "burden_mode,dr_value,burden,ess,max_w,mode_freq,unique_policies",
    "app/policy_delta_generator_shares.csv": "generator,dr_share,casp_share",
    "app/app_support_violation.csv": "generator,zero_support_share,dr_selected_share,casp_selected_share",
    "app/support_diagnostics.csv": "diagnostic,value",
    "app/reconstructed_pool.csv": "context_id,a1,a2,y,mu1,mu2",
    "app/support_map.csv": "context_id,generator,supported,mu1,items,mu2",
}


@pytest.fixture(scope="module")
def written(tmp_path_factory, fixture_tables, small_env_module):
    root = tmp_path_factory.mktemp("golden")
    env = small_env_module
    data = sample_log(env, 50, seed=1)
    data.to_csv(root / "dataset.csv")
    bundle = make_bundle(data, env.behavior, folds=2)
    write_estimates_csv([estimate_policy(data, uniform_policy(env.feasible), bundle)], root / "estimates.csv")
    (root / "block").mkdir()
    write_block_reports(run_block(BlockConfig("counterexample"), RunSettings(reps=1)), root / "block")
    main(["sweep-lambda", "B2", "--reps", "1", "--point", "0", "--lambdas", "0", "--out", str(root / "sweep")])
    main(["theory-check", "--only", "nuisance_gap_vanishes", "--out", str(root / "theory")])
    (root / "app").mkdir()
    cfg = AppConfig(L=6, warm_start=10, max_contexts=200, reps=1, max_eval=None, snapshot_every=50)
    write_app_reports(run_app(fixture_tables, cfg), root / "app")
    return root


@pytest.fixture(scope="module")
def small_env_module():
    from casp import rng
    from casp.simulate import random_env

    return random_env(rng.stream(5, rng.PURPOSE_FIXTURE), 3, 2, 4, min_propensity=0.2)


def header(path):
    return path.read_text(encoding="utf-8").split("\n", 1)[0]


@pytest.mark.parametrize("name", sorted(GOLDEN))
def test_header(written, name):
    assert header(written / name) == GOLDEN[name]


def test_all_csvs_use_unix_newlines(written):
    for p in written.rglob("*.csv"):
        assert b"\r" not in p.read_bytes(), p.name
