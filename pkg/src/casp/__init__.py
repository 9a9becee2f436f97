"""Support-aware offline selection of two-stage recommender policies.

A two-stage policy picks a candidate generator, then an item from the set
that generator exposes. Selection maximizes a doubly robust value estimate
minus a penalty on the coupled importance-weight second moment (the support
burden).
"""

__version__ = "0.1.0"

from .core import (
    Environment,
    FeasibleMap,
    PolicyLibrary,
    TwoStagePolicy,
    burden,
    continuation_values,
    oracle_policy,
    policy_value,
)
from .errors import (
    CaspError,
    ConfigError,
    DataError,
    EmptyFeasibleSetError,
    FeasibilityError,
    OffSupportError,
)
from .estimate import casp_score, diagnostics, dr_value, empirical_burden, ips_value
from .nuisance import (
    NuisanceBundle,
    audit_nuisance_gap,
    fit_reward_crossfit,
    fit_reward_table,
    make_bundle,
    propensity_source,
)
from .select import SelectionReport, build_library, lambda_sweep, select_baselines, select_casp, select_constrained
from .simulate import BlockConfig, LoggedDataset, build_block_env, build_counterexample, sample_log

__all__ = [
    "BlockConfig",
    "CaspError",
    "ConfigError",
    "DataError",
    "EmptyFeasibleSetError",
    "Environment",
    "FeasibilityError",
    "FeasibleMap",
    "LoggedDataset",
    "NuisanceBundle",
    "OffSupportError",
    "PolicyLibrary",
    "SelectionReport",
    "TwoStagePolicy",
    "audit_nuisance_gap",
    "build_block_env",
    "build_counterexample",
    "build_library",
    "burden",
    "casp_score",
    "continuation_values",
    "diagnostics",
    "dr_value",
    "empirical_burden",
    "fit_reward_crossfit",
    "fit_reward_table",
    "ips_value",
    "lambda_sweep",
    "make_bundle",
    "oracle_policy",
    "policy_value",
    "propensity_source",
    "sample_log",
    "select_baselines",
    "select_casp",
    "select_constrained",
]
