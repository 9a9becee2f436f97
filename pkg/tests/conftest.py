import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from casp import rng as rngmod  # noqa: E402
from casp.simulate import build_counterexample, random_env, random_policy  # noqa: E402

DATA = Path(__file__).parent / "data"
FIXTURE_RELEASE = DATA / "ml-fixture"


@pytest.fixture
def counterexample():
    return build_counterexample(0.85)


@pytest.fixture
def small_env():
    g = rngmod.stream(123, rngmod.PURPOSE_FIXTURE)
    return random_env(g, 4, 3, 5, min_propensity=0.2)


@pytest.fixture
def small_policy(small_env):
    return random_policy(small_env.feasible, rngmod.stream(124, rngmod.PURPOSE_FIXTURE), "pi")


@pytest.fixture(scope="session")
def fixture_tables():
    from casp.movielens import ingest

    return ingest(FIXTURE_RELEASE)


@pytest.fixture
def np_rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    import verdicts

    if verdicts.LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(verdicts.LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
