"""Support pool construction and the engineered two-stage logger.

A generator supports a context when it exposes the rated item and fills at
least ``min_fill`` slots with its own scores. Contexts that no generator
supports fall back to inserting the rated item into the popularity set, but
only when that item is among the ``fallback_depth`` most popular eligible
items; the rest are dropped and counted.

Stage 1 logs ``(1 - eps) * softmax(s(x) / tau) + eps * uniform`` over the
supported generators, where ``s(x)`` is each generator's mean normalized
score over its own exposed items. Stage 2 logs the same mixture over the
exposed slots using the chosen generator's normalized item scores.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .. import rng as rngmod
from ..core import FeasibleMap, TwoStagePolicy
from ..errors import ConfigError, DataError
from ..simulate import LoggedDataset
from .contexts import ContextStream
from .generators import POPULARITY, GeneratorConfig, PrefixScanner, feasible_sets
from .ingest import MovieLensTables

LABEL_MODES = ("aligned", "imputed")


@dataclass(frozen=True)
class SupportPool:
    """Accepted contexts with their feasible sets and support flags.

    Arrays are indexed ``[context, generator, slot]``; ``rated_slot`` is the
    slot of the rated item in each set or ``-1``.
    """

    stream: ContextStream
    items: np.ndarray
    n_items: int
    score: np.ndarray
    own: np.ndarray
    tail: np.ndarray
    prefix_rate: np.ndarray
    signal: np.ndarray
    supported: np.ndarray
    fallback: np.ndarray
    rated_slot: np.ndarray
    dropped: dict = field(default_factory=dict)
    n_candidates: int = 0

    def __len__(self):
        return len(self.stream)

    @property
    def mask(self) -> np.ndarray:
        return self.items >= 0

    def take(self, idx) -> "SupportPool":
        idx = np.asarray(idx)
        return replace(
            self,
            stream=self.stream.take(idx),
            items=self.items[idx],
            score=self.score[idx],
            own=self.own[idx],
            tail=self.tail[idx],
            prefix_rate=self.prefix_rate[idx],
            signal=self.signal[idx],
            supported=self.supported[idx],
            fallback=self.fallback[idx],
            rated_slot=self.rated_slot[idx],
        )


def build_support_pool(
    tables: MovieLensTables, stream: ContextStream, cfg: GeneratorConfig = GeneratorConfig()
) -> SupportPool:
    scanner = PrefixScanner(tables, cfg, threshold=stream.threshold)
    L = cfg.L
    keep, dropped = [], Counter()
    cols = {k: [] for k in ("items", "score", "own", "tail", "rate", "signal", "supported", "fallback", "slot")}
    for cs in scanner.scan(stream):
        j = cs.position
        rated = int(stream.item[j])
        sets = feasible_sets(cs, L)
        rated_slot = np.full(4, -1, dtype=np.int64)
        for g in range(4):
            hit = np.flatnonzero(sets.items[g] == rated)
            if hit.size:
                rated_slot[g] = hit[0]
        supported = (rated_slot >= 0) & (sets.own_count >= cfg.fill)
        fallback = False
        items, own, score = sets.items.copy(), sets.own.copy(), sets.score.copy()
        if not supported.any():
            pop = cs.scores[POPULARITY]
            if not np.isfinite(pop[rated]):
                dropped["rated_item_unseen_in_prefix"] += 1
                continue
            c = cs.counts
            elig = np.isfinite(pop)
            rank = int(np.sum(elig & ((c > c[rated]) | ((c == c[rated]) & (np.arange(len(c)) < rated)))))
            if rank >= cfg.depth:
                dropped["beyond_fallback_depth"] += 1
                continue
            row = items[POPULARITY]
            s = int(np.sum(row >= 0))
            slot = s if s < L else L - 1
            row[slot] = rated
            own[POPULARITY, slot] = True
            score[POPULARITY, slot] = pop[rated] / pop[elig].max()
            rated_slot[:] = -1
            rated_slot[POPULARITY] = slot
            supported = np.zeros(4, dtype=bool)
            supported[POPULARITY] = True
            fallback = True
        safe = np.maximum(items, 0)
        c, p = cs.counts[safe], cs.positives[safe]
        rate = np.where(items >= 0, (p + cfg.smoothing * cs.prior) / (c + cfg.smoothing), 0.0)
        n_own = own.sum(axis=1)
        signal = np.where(n_own > 0, (score * own).sum(axis=1) / np.maximum(n_own, 1), 0.0)
        keep.append(j)
        for k, v in (("items", items), ("score", score), ("own", own), ("tail", (items >= 0) & (c <= cs.tail_cut)),
                     ("rate", rate), ("signal", signal), ("supported", supported), ("fallback", fallback),
                     ("slot", rated_slot)):
            cols[k].append(v)
    if not keep:
        raise DataError("no context could be aligned with any generator")
    return SupportPool(
        stream=stream.take(np.array(keep)),
        items=np.stack(cols["items"]),
        n_items=scanner.n_items,
        score=np.stack(cols["score"]),
        own=np.stack(cols["own"]),
        tail=np.stack(cols["tail"]),
        prefix_rate=np.stack(cols["rate"]),
        signal=np.stack(cols["signal"]),
        supported=np.stack(cols["supported"]),
        fallback=np.array(cols["fallback"], dtype=bool),
        rated_slot=np.stack(cols["slot"]),
        dropped=dict(dropped),
        n_candidates=len(stream),
    )


def _mix_softmax(z: np.ndarray, tau: float, eps: float, allowed: np.ndarray) -> np.ndarray:
    """``(1 - eps) * softmax(z / tau) + eps * uniform``, both over ``allowed`` entries only."""
    zz = np.where(allowed, z / tau, -np.inf)
    zz = zz - zz.max(axis=-1, keepdims=True)
    e = np.where(allowed, np.exp(zz), 0.0)
    soft = e / e.sum(axis=-1, keepdims=True)
    unif = allowed / allowed.sum(axis=-1, keepdims=True)
    return (1.0 - eps) * soft + eps * unif


@dataclass(frozen=True)
class ReconstructedLogger:
    epsilon: float = 0.10
    tau: float = 1.0
    stage2_epsilon: float = 0.10
    stage2_tau: float = 1.0

    def __post_init__(self):
        if not (0 <= self.epsilon <= 1 and 0 <= self.stage2_epsilon <= 1):
            raise ConfigError("mixing weights must lie in [0, 1]")
        if not (self.tau > 0 and self.stage2_tau > 0):
            raise ConfigError("temperatures must be positive")

    def stage1(self, signal: np.ndarray, supported: np.ndarray) -> np.ndarray:
        """``(C, K1)`` stage-1 propensities; zero off the supported generators."""
        if not supported.any(axis=-1).all():
            raise DataError("a context has no supported generator")
        return np.where(supported, _mix_softmax(signal, self.tau, self.epsilon, supported), 0.0)

    def stage2(self, score: np.ndarray, mask: np.ndarray) -> np.ndarray:
        return np.where(mask, _mix_softmax(score, self.stage2_tau, self.stage2_epsilon, mask), 0.0)

    def floors(self, supported: np.ndarray, mask: np.ndarray):
        """Guaranteed minimum stage-1 and stage-2 mass at each context (and set)."""
        return self.epsilon / supported.sum(axis=-1), self.stage2_epsilon / mask.sum(axis=-1)

    def behavior(self, pool: SupportPool) -> TwoStagePolicy:
        return TwoStagePolicy("behavior", self.stage1(pool.signal, pool.supported), self.stage2(pool.score, pool.mask))


@dataclass(frozen=True)
class ReconstructedPool:
    pool: SupportPool
    logger: ReconstructedLogger
    feasible: FeasibleMap
    behavior: TwoStagePolicy
    data: LoggedDataset
    label_mode: str

    def subset(self, idx) -> "ReconstructedPool":
        """Contexts ``idx`` re-indexed from zero, with their logged records."""
        idx = np.asarray(idx)
        feasible = FeasibleMap(self.pool.items[idx], self.pool.n_items)
        d = self.data.subset(idx)
        data = replace(d, context=np.arange(len(idx)), feasible=feasible)
        return ReconstructedPool(self.pool.take(idx), self.logger, feasible, self.behavior.take_contexts(idx), data,
                                 self.label_mode)

    def to_csv(self, path) -> None:
        d = self.data
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["context_id", "a1", "a2", "y", "mu1", "mu2"])
            a2 = d.a2
            for i in range(d.n):
                w.writerow([int(d.context[i]), int(d.a1[i]), int(a2[i]), repr(float(d.y[i])),
                            repr(float(d.mu1[i])), repr(float(d.mu2[i]))])

    def support_map_csv(self, path) -> None:
        """One row per (context, generator): support flag, stage-1 mass, exposed items and stage-2 masses."""
        b, items = self.behavior, self.pool.items
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["context_id", "generator", "supported", "mu1", "items", "mu2"])
            for c in range(items.shape[0]):
                for g in range(items.shape[1]):
                    m = items[c, g] >= 0
                    w.writerow([c, g, int(self.pool.supported[c, g]), repr(float(b.stage1[c, g])),
                                " ".join(str(int(v)) for v in items[c, g][m]),
                                " ".join(repr(float(v)) for v in b.stage2[c, g][m])])


def reconstructed_log(
    pool: SupportPool, logger: ReconstructedLogger = ReconstructedLogger(), seed: int = 0, label_mode: str = "aligned"
) -> ReconstructedPool:
    """Log one record per context under the engineered logger.

    ``aligned`` draws the stage-1 generator from the logger conditioned on
    exposing and picking the rated item (the exact law of rejection sampling
    until the logged item equals the rated one), so every record keeps its
    observed label. ``imputed`` samples both stages freely and labels any
    item other than the rated one by a Bernoulli draw from the item's
    smoothed prefix positive rate. Stored propensities are the logger's
    unconditional stage-wise probabilities in both modes.
    """
    if label_mode not in LABEL_MODES:
        raise ConfigError(f"unknown label mode {label_mode!r}")
    feasible = FeasibleMap(pool.items, pool.n_items)
    behavior = logger.behavior(pool)
    C = len(pool)
    g = rngmod.stream(seed, rngmod.PURPOSE_LOGGER)
    rows = np.arange(C)
    if label_mode == "aligned":
        slot_all = np.maximum(pool.rated_slot, 0)
        hit = np.take_along_axis(behavior.stage2, slot_all[:, :, None], axis=2)[:, :, 0]
        joint = np.where(pool.rated_slot >= 0, behavior.stage1 * hit, 0.0)
        a1 = rngmod.categorical(g, joint)
        slot = pool.rated_slot[rows, a1]
        y = pool.stream.label.copy()
    else:
        a1 = rngmod.categorical(g, behavior.stage1)
        slot = rngmod.categorical(g, behavior.stage2[rows, a1])
        item = pool.items[rows, a1, slot]
        draw = g.random(C) < pool.prefix_rate[rows, a1, slot]
        y = np.where(item == pool.stream.item, pool.stream.label, draw.astype(float))
    data = LoggedDataset(
        context=rows,
        a1=a1,
        slot=slot,
        y=y.astype(float),
        mu1=behavior.stage1[rows, a1],
        mu2=behavior.stage2[rows, a1, slot],
        feasible=feasible,
        reward_bound=1.0,
        env_id="movielens",
        seed=seed,
        timestamp=pool.stream.timestamp,
    )
    return ReconstructedPool(pool, logger, feasible, behavior, data, label_mode)
