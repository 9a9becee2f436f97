"""Monte Carlo and enumeration checks of the selector's guarantees.

Each check returns a ``CheckResult``; ``run_all`` drives the whole suite.
``burden_scale`` is a mutation hook: values other than 1 corrupt the burden
used by the checks so the harness can be shown to fail loudly.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .core import PolicyLibrary, burden, coupled_weight, policy_value
from .estimate import dr_value, empirical_burden, ips_value
from .nuisance import NuisanceBundle, RewardFit, audit_nuisance_gap, frozen_reward, make_bundle, propensity_source
from .select import argmax_casp
from .simulate import random_env, random_library, random_policy, sample_log


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    statistic: float
    threshold: float
    detail: str
    seconds: float = 0.0


def _timed(fn):
    def wrapper(*args, **kwargs):
        t = time.perf_counter()
        res = fn(*args, **kwargs)
        return CheckResult(res.name, bool(res.passed), float(res.statistic), float(res.threshold), res.detail,
                           time.perf_counter() - t)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def enumerated_second_moment(env, pi) -> float:
    """``E[w^2]`` under the behavior policy, one feasible triple at a time."""
    total = 0.0
    C, K1, _ = env.shape
    for x in range(C):
        for a1 in range(K1):
            for j in range(env.feasible.sizes[x, a1]):
                p = env.context_prob[x] * env.behavior.stage1[x, a1] * env.behavior.stage2[x, a1, j]
                if p > 0:
                    w = coupled_weight(env, pi, x, a1, int(env.feasible.items[x, a1, j]))
                    total += p * w * w
    return total


@_timed
def check_second_moment(seed: int = 0, n_envs: int = 50, n_policies: int = 20, tol: float = 1e-10,
                        burden_scale: float = 1.0) -> CheckResult:
    worst = 0.0
    for e in range(n_envs):
        g = rngmod.stream(seed, rngmod.PURPOSE_CHECK, 1, e)
        env = random_env(g, 5, 3, 6)
        for k in range(n_policies):
            pi = random_policy(env.feasible, g, f"p{k}")
            b = burden(env, pi)[1] * burden_scale
            worst = max(worst, abs(enumerated_second_moment(env, pi) - b) / max(1.0, b))
    return CheckResult("second_moment_identity", worst <= tol, worst, tol,
                       f"{n_envs} envs x {n_policies} policies, max relative gap")


@_timed
def check_population_guarantee(seed: int = 0, n_triples: int = 200, tol: float = 1e-12,
                               burden_scale: float = 1.0) -> CheckResult:
    violations = 0
    worst = -math.inf
    for t in range(n_triples):
        g = rngmod.stream(seed, rngmod.PURPOSE_CHECK, 2, t)
        env = random_env(g, 5, 3, 6)
        lib = random_library(env.feasible, g, int(g.integers(2, 13)), include=(env.behavior,))
        lam = float(g.choice([0.0, 0.01, 0.05, 0.1, 0.5, 1.0, 5.0]))
        v = np.array([policy_value(env, p) for p in lib])
        b = np.array([burden(env, p)[1] for p in lib]) * burden_scale
        star = int(np.argmax(v))
        pick = argmax_casp(lib.ids, v, b, lam)
        gap = v[star] - v[pick] - lam * b[star]
        worst = max(worst, gap)
        violations += gap > tol
    return CheckResult("population_guarantee", violations == 0, worst, tol,
                       f"{violations} violations over {n_triples} triples")


@_timed
def check_uniform_selection(seed: int = 0, n_triples: int = 200, tol: float = 1e-12) -> CheckResult:
    violations = 0
    worst = -math.inf
    for t in range(n_triples):
        g = rngmod.stream(seed, rngmod.PURPOSE_CHECK, 3, t)
        env = random_env(g, 5, 3, 6)
        lib = random_library(env.feasible, g, int(g.integers(2, 13)), include=(env.behavior,))
        lam = float(g.uniform(0.0, 1.0))
        eps_v, eps_b = g.uniform(0.0, 0.2, size=2)
        v = np.array([policy_value(env, p) for p in lib])
        b = np.array([burden(env, p)[1] for p in lib])
        v_hat = v + g.uniform(-eps_v, eps_v, size=len(v))
        b_hat = np.maximum(b + g.uniform(-eps_b, eps_b, size=len(b)), 0.0)
        star = int(np.argmax(v))
        pick = argmax_casp(lib.ids, v_hat, b_hat, lam)
        gap = v[star] - v[pick] - (lam * b[star] + 2 * eps_v + 2 * lam * eps_b)
        worst = max(worst, gap)
        violations += gap > tol
    return CheckResult("uniform_selection_reduction", violations == 0, worst, tol,
                       f"{violations} violations over {n_triples} perturbed triples")


def _coverage_env(g):
    return random_env(g, 4, 3, 5, min_propensity=0.5)


@_timed
def check_finite_class_coverage(seed: int = 0, reps: int = 500, n: int = 2000, size: int = 12,
                                alpha: float = 0.1, burden_scale: float = 1.0) -> CheckResult:
    """Frequency of the joint uniform-deviation event at the finite-class radii."""
    g = rngmod.stream(seed, rngmod.PURPOSE_CHECK, 4)
    env = _coverage_env(g)
    lib = random_library(env.feasible, g, size, include=(env.behavior,))
    v = np.array([policy_value(env, p) for p in lib])
    b = np.array([burden(env, p)[1] for p in lib])
    nu2 = env.overlap_floor ** -2
    M = env.reward_bound
    root = math.sqrt(math.log(4 * size / alpha) / (2 * n))
    r_v, r_b = M * (1 + nu2) * root, nu2 * root
    hits = 0
    for r in range(reps):
        data = sample_log(env, n, rng=rngmod.stream(seed, rngmod.PURPOSE_CHECK, 4, r))
        bundle = make_bundle(data, env.behavior, folds=2, seed=r)
        dv = max(abs(dr_value(data, p, bundle) - v[i]) for i, p in enumerate(lib))
        db = max(abs(empirical_burden(data, p, env.behavior) * burden_scale - b[i]) for i, p in enumerate(lib))
        hits += dv <= r_v and db <= r_b
    freq = hits / reps
    target = 1 - alpha - 0.02
    return CheckResult("finite_class_coverage", freq >= target, freq, target,
                       f"alpha={alpha}, n={n}, |library|={size}, {reps} reps, radii V={r_v:.4g} B={r_b:.4g}")


@_timed
def check_ips_variance(seed: int = 0, n_envs: int = 10, resamples: int = 500, n: int = 2000,
                       slack: float = 1.5, burden_scale: float = 1.0) -> CheckResult:
    worst = 0.0
    for e in range(n_envs):
        g = rngmod.stream(seed, rngmod.PURPOSE_CHECK, 5, e)
        env = random_env(g, 5, 3, 6, min_propensity=0.05)
        pi = random_policy(env.feasible, g)
        bound = env.reward_bound**2 * burden(env, pi)[1] * burden_scale / n
        est = [ips_value(sample_log(env, n, rng=rngmod.stream(seed, rngmod.PURPOSE_CHECK, 5, e, r)), pi)
               for r in range(resamples)]
        worst = max(worst, float(np.var(est, ddof=1)) / bound)
    return CheckResult("ips_variance_bound", worst <= slack, worst, slack,
                       f"max variance / (M^2 B / n) over {n_envs} envs")


def _noise_table(env, g):
    return np.where(env.feasible.mask, g.uniform(0.0, env.reward_bound, size=env.shape), 0.0)


@_timed
def check_dr_unbiased(seed: int = 0, pairs: int = 10, resamples: int = 500, n: int = 200,
                      z: float = 3.0) -> CheckResult:
    worst = 0.0
    for k in range(pairs):
        g = rngmod.stream(seed, rngmod.PURPOSE_CHECK, 6, k)
        env = random_env(g, 5, 3, 6, min_propensity=0.05)
        pi = random_policy(env.feasible, g)
        table = _noise_table(env, g)
        est = []
        for r in range(resamples):
            data = sample_log(env, n, rng=rngmod.stream(seed, rngmod.PURPOSE_CHECK, 6, k, r))
            bundle = NuisanceBundle(frozen_reward(data, table), propensity_source(data, "logged", behavior=env.behavior))
            est.append(dr_value(data, pi, bundle))
        se = float(np.std(est, ddof=1)) / math.sqrt(resamples)
        worst = max(worst, abs(float(np.mean(est)) - policy_value(env, pi)) / se)
    return CheckResult("dr_unbiasedness", worst <= z, worst, z, f"max |mean - V| / SE over {pairs} pairs")


@_timed
def check_nuisance_gap(seed: int = 0, n_envs: int = 40, tol: float = 1e-10) -> CheckResult:
    """``Delta_V`` vanishes when either nuisance is exact."""
    worst = 0.0
    for e in range(n_envs):
        g = rngmod.stream(seed, rngmod.PURPOSE_CHECK, 7, e)
        env = random_env(g, 5, 3, 6, min_propensity=0.05)
        lib = random_library(env.feasible, g, 6, include=(env.behavior,))
        data = sample_log(env, 50, rng=g)
        exact_p = propensity_source(data, "logged", behavior=env.behavior)
        noisy_p = propensity_source(data, "perturbed", behavior=env.behavior, delta=0.5, seed=e)
        fold = rngmod.stream(seed, rngmod.PURPOSE_FOLDS, e).integers(0, 3, size=data.n)
        noisy_q = RewardFit(np.stack([_noise_table(env, g) for _ in range(3)]), fold, 0.0, "noise", env.reward_bound)
        exact_q = frozen_reward(data, env.true_reward)
        dv1, _ = audit_nuisance_gap(env, NuisanceBundle(noisy_q, exact_p), lib)
        dv2, _ = audit_nuisance_gap(env, NuisanceBundle(exact_q, noisy_p), lib)
        worst = max(worst, dv1, dv2)
    return CheckResult("nuisance_gap_vanishes", worst <= tol, worst, tol,
                       "max Delta_V with exact propensities or exact rewards")


CHECKS = {
    "second_moment_identity": check_second_moment,
    "population_guarantee": check_population_guarantee,
    "uniform_selection_reduction": check_uniform_selection,
    "finite_class_coverage": check_finite_class_coverage,
    "ips_variance_bound": check_ips_variance,
    "dr_unbiasedness": check_dr_unbiased,
    "nuisance_gap_vanishes": check_nuisance_gap,
}
# Checks whose statistic depends on the burden and so react to the mutation hook.
BURDEN_CHECKS = ("second_moment_identity", "population_guarantee", "finite_class_coverage", "ips_variance_bound")


def run_all(seed: int = 0, only=None, burden_scale: float = 1.0, quick: bool = False) -> list[CheckResult]:
    """Run the suite; ``quick`` shrinks the Monte Carlo sizes for smoke runs."""
    results = []
    for name, fn in CHECKS.items():
        if only and name not in only:
            continue
        kw = {"seed": seed}
        if name in BURDEN_CHECKS:
            kw["burden_scale"] = burden_scale
        if quick:
            kw.update({
                "finite_class_coverage": {"reps": 50},
                "ips_variance_bound": {"n_envs": 3, "resamples": 200},
                "dr_unbiasedness": {"pairs": 3, "resamples": 200},
            }.get(name, {}))
        results.append(fn(**kw))
    return results
