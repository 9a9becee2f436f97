"""Cross-fitted reward models and propensity sources.

Reward fits are tabular with additive smoothing toward the training-fold mean.
Cells are either full ``(x, a1, a2)`` triples or bare items; the item keying
is what the MovieLens application uses, since its contexts never repeat.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .core import Environment, FeasibleMap, PolicyLibrary, TwoStagePolicy, floored
from .errors import ConfigError, DataError
from .simulate import LoggedDataset

CELL_KINDS = ("triple", "item")
PROPENSITY_MODES = ("logged", "reconstructed", "perturbed")


@dataclass(frozen=True)
class RewardFit:
    """Out-of-sample reward tables.

    ``tables[f]`` is the ``(C, K1, L)`` fit that excludes fold ``f``;
    record ``i`` is scored with ``tables[fold[i]]``.
    """

    tables: np.ndarray
    fold: np.ndarray
    smoothing: float
    cells: str
    reward_bound: float

    @property
    def n_folds(self) -> int:
        return self.tables.shape[0]

    def training_mask(self, f: int) -> np.ndarray:
        return self.fold != f


@dataclass(frozen=True)
class PropensitySource:
    """Stage-wise propensity tables before flooring.

    ``stage1[g]`` / ``stage2[g]`` are the tables used by records with
    ``group[i] == g``; logged and reconstructed modes use a single group.
    """

    stage1: np.ndarray
    stage2: np.ndarray
    group: np.ndarray
    floor: float
    mode: str


@dataclass(frozen=True)
class NuisanceBundle:
    reward: RewardFit
    propensity: PropensitySource

    @property
    def floor(self) -> float:
        return self.propensity.floor

    @property
    def reward_bound(self) -> float:
        return self.reward.reward_bound

    def record_qhat(self, data: LoggedDataset) -> np.ndarray:
        """``(n, K1, L)``: record ``i``'s out-of-sample fit on its own context."""
        self._covers(data)
        return self.reward.tables[self.reward.fold, data.context]

    def record_propensities(self, data: LoggedDataset):
        """Pre-floor ``(n, K1)`` and ``(n, K1, L)`` propensities on each record's context."""
        self._covers(data)
        g = self.propensity.group
        return self.propensity.stage1[g, data.context], self.propensity.stage2[g, data.context]

    def record_ehat(self, data: LoggedDataset, floor: bool = True) -> np.ndarray:
        p1, p2 = self.record_propensities(data)
        joint = p1[..., None] * p2
        return np.maximum(joint, self.floor) if floor and self.floor > 0 else joint

    def _covers(self, data: LoggedDataset) -> None:
        if len(self.reward.fold) != data.n or len(self.propensity.group) != data.n:
            raise DataError("nuisance bundle does not cover this dataset")

    def to_csv(self, data: LoggedDataset, path) -> None:
        """Per-record fit at the logged triple and the floored joint propensity."""
        q = self.record_qhat(data)[np.arange(data.n), data.a1, data.slot]
        e = self.record_ehat(data)[np.arange(data.n), data.a1, data.slot]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["record", "fold", "context_id", "a1", "a2", "qhat", "ehat"])
            a2 = data.a2
            for i in range(data.n):
                w.writerow([i, int(self.reward.fold[i]), int(data.context[i]), int(data.a1[i]),
                            int(a2[i]), repr(float(q[i])), repr(float(e[i]))])


# ------------------------------------------------------------------------ rewards


def fit_reward_table(
    data: LoggedDataset,
    smoothing: float = 1.0,
    cells: str = "triple",
    train: np.ndarray | None = None,
    background: LoggedDataset | None = None,
) -> np.ndarray:
    """One smoothed tabular fit over ``data[train]`` (plus ``background``).

    ``qhat = (sum y + s * prior) / (count + s)`` per cell, ``prior`` the mean
    training reward; empty cells fall back to the prior. Clipped to ``[0, M]``.
    """
    if cells not in CELL_KINDS:
        raise ConfigError(f"unknown cell kind {cells!r}")
    if smoothing < 0:
        raise ConfigError("smoothing must be >= 0")
    parts = []
    if train is None or np.asarray(train).any():
        parts.append(data if train is None else data.subset(np.flatnonzero(train)))
    if background is not None and background.n:
        parts.append(background)
    feasible = data.feasible
    M = data.reward_bound
    ys = np.concatenate([p.y for p in parts]) if parts else np.zeros(0)
    prior = float(np.mean(ys)) if ys.size else M / 2.0

    if cells == "triple":
        if background is not None and background.feasible is not feasible:
            raise ConfigError("triple cells need background records on the same feasible map")
        shape = feasible.shape
        sums = np.zeros(int(np.prod(shape)))
        counts = np.zeros_like(sums)
        for p in parts:
            flat = np.ravel_multi_index((p.context, p.a1, p.slot), shape)
            sums += np.bincount(flat, weights=p.y, minlength=sums.size)
            counts += np.bincount(flat, minlength=sums.size)
        table = _smooth(sums, counts, prior, smoothing).reshape(shape)
    else:
        n_items = max(feasible.n_items, *(p.feasible.n_items for p in parts)) if parts else feasible.n_items
        sums = np.zeros(n_items)
        counts = np.zeros(n_items)
        for p in parts:
            sums += np.bincount(p.a2, weights=p.y, minlength=n_items)
            counts += np.bincount(p.a2, minlength=n_items)
        per_item = _smooth(sums, counts, prior, smoothing)
        table = np.where(feasible.mask, per_item[np.maximum(feasible.items, 0)], 0.0)
    return np.where(feasible.mask, np.clip(table, 0.0, M), 0.0)


def _smooth(sums, counts, prior, smoothing):
    denom = counts + smoothing
    with np.errstate(invalid="ignore", divide="ignore"):
        est = (sums + smoothing * prior) / denom
    return np.where(denom > 0, est, prior)


def assign_folds(n: int, folds: int, seed: int) -> np.ndarray:
    """Fold labels from a seeded permutation; fold sizes differ by at most one."""
    perm = rngmod.stream(seed, rngmod.PURPOSE_FOLDS, n, folds).permutation(n)
    fold = np.empty(n, dtype=np.int64)
    fold[perm] = np.arange(n) % folds
    return fold


def fit_reward_crossfit(
    data: LoggedDataset,
    folds: int = 5,
    smoothing: float = 1.0,
    *,
    seed: int = 0,
    cells: str = "triple",
    background: LoggedDataset | None = None,
    fold: np.ndarray | None = None,
) -> RewardFit:
    """K-fold cross-fitted tabular reward model.

    Record ``i`` in fold ``f`` is scored by a fit on every other fold plus the
    optional ``background`` records, which are never scored.
    """
    if folds < 2:
        raise ConfigError("cross-fitting needs at least 2 folds")
    if data.n == 0:
        raise DataError("cannot fit a reward model on an empty dataset")
    if folds > data.n:
        raise ConfigError(f"{folds} folds exceed {data.n} records")
    fold = assign_folds(data.n, folds, seed) if fold is None else np.asarray(fold, dtype=np.int64)
    tables = np.stack(
        [fit_reward_table(data, smoothing, cells, train=fold != f, background=background) for f in range(folds)]
    )
    return RewardFit(tables, fold, smoothing, cells, data.reward_bound)


def frozen_reward(data: LoggedDataset, table: np.ndarray) -> RewardFit:
    """Wrap a fixed ``(C, K1, L)`` table (fit elsewhere) as a one-fold reward fit."""
    table = np.where(data.feasible.mask, np.clip(table, 0.0, data.reward_bound), 0.0)
    return RewardFit(table[None], np.zeros(data.n, dtype=np.int64), 0.0, "frozen", data.reward_bound)


# -------------------------------------------------------------------- propensities


def propensity_source(
    data: LoggedDataset,
    mode: str = "logged",
    floor: float = 0.0,
    *,
    behavior: TwoStagePolicy | None = None,
    delta: float = 0.0,
    seed: int = 0,
) -> PropensitySource:
    """Propensity tables for the burden and the DR weights.

    ``logged``
        ``behavior`` tables, checked against the records' logged values.
    ``reconstructed``
        ``behavior`` is the engineered logger's closed-form policy.
    ``perturbed``
        each stage of ``behavior`` gets multiplicative noise of size
        ``delta`` on its support and is renormalized; ``delta=0`` returns the
        logged tables unchanged.
    """
    if mode not in PROPENSITY_MODES:
        raise ConfigError(f"unknown propensity mode {mode!r}")
    if floor < 0:
        raise ConfigError("floor must be >= 0")
    if behavior is None:
        raise ConfigError("a behavior (or reconstructed logger) policy is required")
    if mode == "logged":
        if not data.has_propensities:
            raise DataError("logged mode needs propensities on every record")
        s1 = behavior.stage1[data.context, data.a1]
        s2 = behavior.stage2[data.context, data.a1, data.slot]
        if not (np.array_equal(s1, data.mu1) and np.array_equal(s2, data.mu2)):
            raise DataError("logged propensities disagree with the behavior tables")
    p1, p2 = behavior.stage1, behavior.stage2
    if mode == "perturbed" and delta != 0:
        g = rngmod.stream(seed, rngmod.PURPOSE_PERTURB)
        p1 = p1 * (1.0 + delta * g.uniform(-1.0, 1.0, size=p1.shape))
        p2 = p2 * (1.0 + delta * g.uniform(-1.0, 1.0, size=p2.shape))
        p1 = np.clip(p1, 0.0, None)
        p2 = np.clip(p2, 0.0, None)
        p1 = p1 / p1.sum(axis=-1, keepdims=True)
        p2 = p2 / p2.sum(axis=-1, keepdims=True)
    return PropensitySource(p1[None], p2[None], np.zeros(data.n, dtype=np.int64), float(floor), mode)


def make_bundle(
    data: LoggedDataset,
    behavior: TwoStagePolicy,
    *,
    folds: int = 5,
    smoothing: float = 1.0,
    seed: int = 0,
    cells: str = "triple",
    mode: str = "logged",
    floor: float = 0.0,
    delta: float = 0.0,
    background: LoggedDataset | None = None,
) -> NuisanceBundle:
    reward = fit_reward_crossfit(data, folds, smoothing, seed=seed, cells=cells, background=background)
    prop = propensity_source(data, mode, floor, behavior=behavior, delta=delta, seed=seed)
    return NuisanceBundle(reward, prop)


# --------------------------------------------------------------------------- audit


def _pair_weights(bundle: NuisanceBundle) -> dict[tuple[int, int], float]:
    f = bundle.reward.fold
    g = bundle.propensity.group
    n = len(f)
    keys, counts = np.unique(np.stack([f, g], axis=1), axis=0, return_counts=True)
    return {(int(a), int(b)): c / n for (a, b), c in zip(keys, counts)}


def audit_nuisance_gap(env: Environment | None, bundle: NuisanceBundle, library: PolicyLibrary):
    """``(Delta_V, Delta_B)`` by exact enumeration with the nuisances held fixed.

    ``Delta_V`` is the largest gap between the nuisance-conditional mean of the
    DR estimate and the true value; ``Delta_B`` the largest gap between the
    nuisance-conditional burden average and the true burden.
    """
    if env is None:
        raise ConfigError("the nuisance-gap audit needs the ground-truth environment")
    if bundle.reward.tables.shape[1:] != env.shape:
        raise ConfigError("bundle tables do not match the environment")
    mask = env.feasible.mask
    mu = env.behavior.joint()
    P = env.context_prob
    q = env.true_reward
    weights = _pair_weights(bundle)
    group_w: dict[int, float] = {}
    for (_, g), w in weights.items():
        group_w[g] = group_w.get(g, 0.0) + w

    def ehat(g):
        return bundle.propensity.stage1[g][..., None] * bundle.propensity.stage2[g]

    dv = db = 0.0
    for pi in library:
        pi.check(env.feasible)
        pj = pi.joint()
        v_true = float(P @ (pj * q).sum(axis=(1, 2)))
        mean_dr = 0.0
        for (f, g), w in weights.items():
            qh = bundle.reward.tables[f]
            e = floored(ehat(g), pj, bundle.floor)
            per_c = (pj * qh).sum(axis=(1, 2)) + np.where(mask, mu * pj / e * (q - qh), 0.0).sum(axis=(1, 2))
            mean_dr += w * float(P @ per_c)
        b_true = float(P @ np.where(mask, pj**2 / floored(mu, pj, bundle.floor), 0.0).sum(axis=(1, 2)))
        b_hat = 0.0
        for g, w in group_w.items():
            e = floored(ehat(g), pj, bundle.floor)
            b_hat += w * float(P @ np.where(mask, pj**2 / e, 0.0).sum(axis=(1, 2)))
        dv = max(dv, abs(mean_dr - v_true))
        db = max(db, abs(b_hat - b_true))
    return dv, db
