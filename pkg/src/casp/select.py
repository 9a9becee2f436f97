"""Policy selectors over a finite library.

Every selector resolves ties the same way: higher score first, then lower
estimated raw burden, then the lexicographically smaller policy id.
``ma_style`` and ``wang_style`` are interpretive comparators, built from the
published descriptions of two-stage off-policy learning and downstream-aware
candidate generation, not reimplementations of those pipelines.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .core import (
    Environment,
    FeasibleMap,
    PolicyLibrary,
    TwoStagePolicy,
    burden,
    greedy_stage2,
    policy_value,
    uniform_stage2,
)
from .errors import ConfigError, EmptyFeasibleSetError
from .estimate import PolicyEstimate, dr_value, estimate_policies, record_propensities
from .nuisance import NuisanceBundle
from .simulate import LoggedDataset, _softmax

SELECTOR_KINDS = ("casp", "stagewise", "plugin", "dr_only", "dr_lcb", "ma_style", "wang_style", "oracle")
DEFAULT_TEMPERATURES = (0.1, 0.5, 1.0)
DEFAULT_LAMBDA_GRID = (0.0, 0.01, 0.02, 0.05, 0.1, 0.2)
LIBRARY_CAP = 40


@dataclass(frozen=True)
class SelectionReport:
    selected: str
    kind: str
    param: float | None
    estimates: tuple[PolicyEstimate, ...]
    burden_mode: str = "normalized_full"
    mode_frequency: float = 1.0
    regret: float | None = None
    true_value: float | None = None
    true_burden: float | None = None

    def estimate(self, policy_id: str | None = None) -> PolicyEstimate:
        pid = self.selected if policy_id is None else policy_id
        for e in self.estimates:
            if e.policy_id == pid:
                return e
        raise KeyError(pid)


# ------------------------------------------------------------------------- library


def build_library(
    feasible: FeasibleMap,
    qhat: np.ndarray,
    behavior: TwoStagePolicy,
    *,
    reward_bound: float = 1.0,
    temperatures: Sequence[float] = DEFAULT_TEMPERATURES,
    cap: int = LIBRARY_CAP,
) -> PolicyLibrary:
    """Behavior plus the cross product of stage-1 and stage-2 rules built from ``qhat``.

    Stage-1 rules: each deterministic generator, a softmax over the
    continuation estimate of the paired stage-2 rule at each temperature, and
    the behavior's stage 1. Stage-2 rules: greedy in ``qhat``, softmax in
    ``qhat`` at each temperature, and uniform over the feasible set.
    Duplicates are dropped and the list is cut at ``cap``.
    """
    C, K1, L = feasible.shape
    mask = feasible.mask
    M = reward_bound
    s2_rules = [("greedy", greedy_stage2(qhat, mask))]
    for t in temperatures:
        s2_rules.append((f"soft{t:g}", np.where(mask, _softmax(qhat / M, t, mask), 0.0)))
    s2_rules.append(("uniform", uniform_stage2(feasible)))

    pols = [behavior.renamed("behavior")]
    for name2, s2 in s2_rules:
        cont = (s2 * qhat).sum(axis=2)
        s1_rules = []
        for g in range(K1):
            s1 = np.zeros((C, K1))
            s1[:, g] = 1.0
            s1_rules.append((f"gen{g}", s1))
        for t in temperatures:
            s1_rules.append((f"soft{t:g}", _softmax(cont / M, t)))
        s1_rules.append(("beh", behavior.stage1))
        for name1, s1 in s1_rules:
            pols.append(TwoStagePolicy(f"{name1}+{name2}", s1, s2))

    out: list[TwoStagePolicy] = []
    for p in pols:
        if len(out) >= cap:
            break
        if any(np.array_equal(p.stage1, o.stage1) and np.array_equal(p.stage2, o.stage2) for o in out):
            continue
        out.append(p)
    lib = PolicyLibrary(tuple(out))
    lib.check(feasible)
    return lib


def generator_library(feasible: FeasibleMap, qhat: np.ndarray, behavior: TwoStagePolicy) -> PolicyLibrary:
    """Behavior plus one deterministic-generator, greedy-ranker policy per generator."""
    C, K1, _ = feasible.shape
    s2 = greedy_stage2(qhat, feasible.mask)
    pols = [behavior.renamed("behavior")]
    for g in range(K1):
        s1 = np.zeros((C, K1))
        s1[:, g] = 1.0
        pols.append(TwoStagePolicy(f"gen{g}+greedy", s1, s2))
    return PolicyLibrary(tuple(pols))


# ------------------------------------------------------------------------- argmax


def argmax_policy(ids: Sequence[str], scores, burdens) -> int:
    """Index of the best score; ties go to lower burden, then smaller id."""
    scores = np.asarray(scores, dtype=float)
    burdens = np.asarray(burdens, dtype=float)
    if len(ids) == 0:
        raise ConfigError("cannot select from an empty library")
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], burdens[i], ids[i]))
    return order[0]


def argmax_casp(ids, values, burdens, lam: float) -> int:
    """Population or injected-estimate CASP choice over parallel arrays."""
    values = np.asarray(values, dtype=float)
    burdens = np.asarray(burdens, dtype=float)
    return argmax_policy(ids, values - lam * burdens, burdens)


def _estimates(library, data, bundle, burden_mode, estimates):
    if estimates is None:
        return tuple(estimate_policies(data, library, bundle, burden_mode))
    return tuple(estimates)


def _pick(kind, param, ests, scores, burden_mode) -> SelectionReport:
    ids = [e.policy_id for e in ests]
    i = argmax_policy(ids, scores, [e.burden for e in ests])
    return SelectionReport(ids[i], kind, param, tuple(ests), burden_mode)


# ------------------------------------------------------------------------ selectors


def select_casp(
    library: PolicyLibrary,
    data: LoggedDataset,
    bundle: NuisanceBundle,
    lam: float = 0.05,
    burden_mode: str = "normalized_full",
    estimates=None,
) -> SelectionReport:
    """Maximize ``V_DR - lam * B`` with ``B`` in the requested burden mode."""
    if lam < 0 or math.isnan(lam):
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    ests = _estimates(library, data, bundle, burden_mode, estimates)
    if ests and ests[0].burden_mode != burden_mode:
        raise ConfigError("estimates were computed under a different burden mode")
    return _pick("casp", lam, ests, [e.j(lam) for e in ests], burden_mode)


def select_constrained(
    library: PolicyLibrary,
    data: LoggedDataset,
    bundle: NuisanceBundle,
    b_max: float,
    estimates=None,
) -> SelectionReport:
    """Best DR value among policies with raw estimated burden at most ``b_max``."""
    ests = _estimates(library, data, bundle, "raw_full", estimates)
    ok = [e for e in ests if e.burden <= b_max]
    if not ok:
        low = min(ests, key=lambda e: (e.burden, e.policy_id))
        raise EmptyFeasibleSetError(b_max, low.policy_id, low.burden)
    rep = _pick("constrained", b_max, ok, [e.v_dr for e in ok], ests[0].burden_mode)
    return replace(rep, estimates=ests)


def _composed_nearest(library: PolicyLibrary, data: LoggedDataset, target: TwoStagePolicy, ests) -> str:
    """Library policy closest to ``target`` in total variation, averaged over logged contexts."""
    tj = target.joint()[data.context]
    ids, dist = [], []
    for pi in library:
        d = 0.5 * np.abs(pi.joint()[data.context] - tj).sum(axis=(1, 2))
        ids.append(pi.id)
        dist.append(float(np.mean(d)))
    burdens = {e.policy_id: e.burden for e in ests}
    i = argmax_policy(ids, -np.asarray(dist), [burdens[p] for p in ids])
    return ids[i]


def _qhat_table(bundle: NuisanceBundle) -> np.ndarray:
    return bundle.reward.tables.mean(axis=0)


def _point_stage1(best: np.ndarray, K1: int) -> np.ndarray:
    s1 = np.zeros((len(best), K1))
    s1[np.arange(len(best)), best] = 1.0
    return s1


def select_baselines(
    kind: str,
    library: PolicyLibrary,
    data: LoggedDataset,
    bundle: NuisanceBundle,
    params: dict | None = None,
    estimates=None,
    env: Environment | None = None,
    burden_mode: str = "normalized_full",
) -> SelectionReport:
    """Comparator selectors.

    ``params`` keys: ``beta`` for ``dr_lcb`` (default 0.5), ``proxy`` for
    ``stagewise`` (a ``(C, K1)`` continuation-blind score; the default is the
    empirical mean logged reward per generator), ``lam`` for ``casp``.
    """
    params = dict(params or {})
    if kind not in SELECTOR_KINDS:
        raise ConfigError(f"unknown selector {kind!r}")
    if kind == "oracle" and env is None:
        raise ConfigError("the oracle selector needs the ground-truth environment")
    ests = _estimates(library, data, bundle, burden_mode, estimates)
    C, K1, _ = data.feasible.shape

    if kind == "casp":
        return select_casp(library, data, bundle, params.get("lam", 0.05), burden_mode, ests)
    if kind == "dr_only":
        return _pick(kind, None, ests, [e.v_dr for e in ests], burden_mode)
    if kind == "dr_lcb":
        beta = float(params.get("beta", 0.5))
        if beta < 0:
            raise ConfigError("beta must be >= 0")
        scores = [e.v_dr - beta * e.dr_sd / math.sqrt(max(e.n, 1)) for e in ests]
        return _pick(kind, beta, ests, scores, burden_mode)
    if kind == "plugin":
        return _pick(kind, None, ests, [e.v_plugin for e in ests], burden_mode)
    if kind == "oracle":
        return _pick(kind, None, ests, [policy_value(env, pi) for pi in library], burden_mode)
    if kind == "ma_style":
        p1, _, fl = record_propensities(data, bundle)
        qhat = bundle.record_qhat(data)
        r = np.arange(data.n)
        mu1 = p1[r, data.a1]
        scores = []
        for pi in library:
            w1 = pi.stage1[data.context, data.a1] / (np.maximum(mu1, fl) if fl > 0 else mu1)
            cont = (pi.stage2[data.context, data.a1] * qhat[r, data.a1]).sum(axis=1)
            scores.append(math.fsum(w1 * cont) / data.n)
        return _pick(kind, None, ests, scores, burden_mode)

    qtab = _qhat_table(bundle)
    greedy = greedy_stage2(qtab, data.feasible.mask)
    if kind == "stagewise":
        proxy = params.get("proxy")
        if proxy is None:
            sums = np.bincount(data.a1, weights=data.y, minlength=K1)
            counts = np.bincount(data.a1, minlength=K1)
            g = np.where(counts > 0, sums / np.maximum(counts, 1), -np.inf)
            proxy = np.broadcast_to(g, (C, K1))
        best = np.argmax(np.asarray(proxy), axis=1)
        target = TwoStagePolicy("stagewise", _point_stage1(best, K1), greedy)
        return SelectionReport(_composed_nearest(library, data, target, ests), kind, None, ests, burden_mode)
    # wang_style
    vals = []
    for g in range(K1):
        cand = TwoStagePolicy(f"g{g}", _point_stage1(np.full(C, g), K1), greedy)
        vals.append(dr_value(data, cand, bundle))
    g_star = int(np.argmax(vals))
    target = TwoStagePolicy("wang", _point_stage1(np.full(C, g_star), K1), greedy)
    return SelectionReport(_composed_nearest(library, data, target, ests), kind, None, ests, burden_mode)


def with_truth(report: SelectionReport, env: Environment, library: PolicyLibrary) -> SelectionReport:
    """Attach true value, true raw burden and regret against the library oracle."""
    values = {pi.id: policy_value(env, pi) for pi in library}
    pi = library[report.selected]
    return replace(
        report,
        true_value=values[pi.id],
        true_burden=burden(env, pi)[1],
        regret=max(values.values()) - values[pi.id],
    )


# ----------------------------------------------------------------- paths and modes


def lambda_sweep(
    library: PolicyLibrary,
    data: LoggedDataset,
    bundle: NuisanceBundle,
    lambdas: Sequence[float] = DEFAULT_LAMBDA_GRID,
    burden_mode: str = "normalized_full",
    estimates=None,
) -> list[dict]:
    """One row per ``lam``: selected id and its DR value, raw burden, ESS and max weight."""
    lambdas = list(lambdas)
    if not lambdas or any(lam < 0 for lam in lambdas):
        raise ConfigError("lambda grid must be nonempty and nonnegative")
    ests = _estimates(library, data, bundle, burden_mode, estimates)
    rows = []
    for lam in lambdas:
        rep = select_casp(library, data, bundle, lam, burden_mode, ests)
        e = rep.estimate()
        rows.append({
            "lambda": lam,
            "selected": rep.selected,
            "dr_value": e.v_dr,
            "burden": e.burden,
            "ess": e.ess,
            "max_w": e.max_weight,
        })
    return rows


def replication_stability(selector: Callable[[int], str], reps: int, seeds: Sequence[int] | None = None):
    """Run ``selector(seed)`` per replication; return ``(mode_id, mode_frequency, unique_count)``.

    Equal counts resolve to the smaller id.
    """
    if reps < 1:
        raise ConfigError("reps must be >= 1")
    seeds = list(range(reps)) if seeds is None else list(seeds)[:reps]
    picks = [selector(s) for s in seeds]
    return mode_summary(picks)


def mode_summary(picks: Sequence[str]):
    counts = Counter(picks)
    top = max(counts.values())
    mode = min(k for k, v in counts.items() if v == top)
    return mode, top / len(picks), len(counts)
