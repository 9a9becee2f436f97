import numpy as np
import pytest

from casp.blocks import (
    COUPLED,
    LAMBDA_PATH_HEADER,
    METHODS,
    RunSettings,
    block_config_from,
    block_lambda_path,
    run_block,
    run_replication,
    write_block_reports,
)
from casp.core import BURDEN_MODES
from casp.errors import ConfigError
from casp.report import read_csv
from casp.simulate import BlockConfig

QUICK = RunSettings(reps=2)


@pytest.fixture(scope="module")
def b1():
    return run_block(BlockConfig("counterexample"), QUICK)


def test_replication_rows(b1):
    rows = run_replication(BlockConfig("coupling").at(1.0), 0, 0, QUICK)
    assert [r["method"] for r in rows] == list(METHODS) + [f"casp_{m}" for m in BURDEN_MODES]
    oracle = [r for r in rows if r["method"] == "oracle"][0]
    assert oracle["regret"] == 0.0
    assert all(r["regret"] >= 0 and r["burden"] >= 1 - 1e-12 for r in rows)


def test_counterexample_block_separates_stagewise(b1):
    assert b1.overall("stagewise")["value"] == 0.0
    for m in COUPLED:
        assert b1.overall(m)["value"] == pytest.approx(0.85)


def test_block_reports(tmp_path, b1):
    files = write_block_reports(b1, tmp_path)
    assert set(files) == {"sweep_B1.csv", "frontier_B1.csv", "comparators_B1.csv", "ablation_B1.csv",
                          "replications_B1.csv", "summary.txt"}
    head = (tmp_path / "sweep_B1.csv").read_text().splitlines()[0].split(",")
    assert head[:4] == ["sweep_value", "casp_value", "casp_burden", "casp_stability"]
    assert len(head) == 1 + 3 * len(METHODS)
    reps = read_csv(tmp_path / "replications_B1.csv")
    assert len(reps) == QUICK.reps * (len(METHODS) + len(BURDEN_MODES))


def test_block_is_deterministic(tmp_path):
    cfg = BlockConfig("coupling", grid=(0.5,))
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    write_block_reports(run_block(cfg, QUICK), a)
    write_block_reports(run_block(cfg, RunSettings(reps=2, workers=2)), b)
    # the manifest records the worker count; every table must match
    for f in sorted(p.name for p in a.iterdir() if p.name != "manifest.json"):
        assert (a / f).read_bytes() == (b / f).read_bytes(), f
    c = tmp_path / "c"
    c.mkdir()
    write_block_reports(run_block(cfg, QUICK), c)
    assert (a / "manifest.json").read_bytes() == (c / "manifest.json").read_bytes()


def test_lambda_path_rows():
    cfg = BlockConfig("coupling", grid=(0.0, 1.0))
    rows = block_lambda_path(cfg, QUICK, (0.0, 0.05, 1.0), points=[1])
    assert [r["lambda"] for r in rows] == [0.0, 0.05, 1.0]
    assert set(rows[0]) == set(LAMBDA_PATH_HEADER)
    assert rows[-1]["burden"] <= rows[0]["burden"] + 1e-12
    assert all(r["regret"] >= 0 for r in rows)


def test_settings_and_config_validation():
    for bad in (dict(reps=0), dict(lam=-1.0), dict(burden_mode="nope"), dict(workers=0)):
        with pytest.raises(ConfigError):
            RunSettings(**bad)
    with pytest.raises(ConfigError):
        block_config_from("coupling", {"colour": 1})
    assert block_config_from("coupling", {"grid": [0.1, 0.2]}).grid == (0.1, 0.2)
    assert np.isclose(block_config_from("sample_size").at(400).n, 400)
