"""Two-stage policies over finite contexts and their exact population quantities.

Array conventions used throughout the package:

* ``C`` contexts, ``K1`` generators (stage-1 actions), ``L`` feasible-set slots.
* A feasible map stores ``items[c, a1, j]``, the item in slot ``j`` of
  ``S(c, a1)``; unused slots hold ``-1``. Slot order is the tie-break order.
* A stage-1 rule is a ``(C, K1)`` array, a stage-2 rule a ``(C, K1, L)``
  array over slots; padding slots carry zero mass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FeasibilityError, OffSupportError

SUM_TOL = 1e-12

BURDEN_MODES = ("normalized_full", "stage1_only", "stage2_only", "raw_full")


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


class FeasibleMap:
    """Ordered feasible item sets ``S(x, a1)`` for every context and generator."""

    def __init__(self, items, n_items: int | None = None):
        items = np.asarray(items, dtype=np.int64)
        if items.ndim != 3:
            raise FeasibilityError("items must have shape (contexts, generators, slots)")
        mask = items >= 0
        if not mask[..., 0].all():
            c, g = np.argwhere(~mask[..., 0])[0]
            raise FeasibilityError(f"empty feasible set at (x={c}, a1={g})")
        # padding must be a suffix of every row
        if (np.diff(mask.astype(np.int8), axis=-1) > 0).any():
            raise FeasibilityError("padding slots must follow all real slots")
        srt = np.sort(np.where(mask, items, -1 - np.arange(items.shape[-1])), axis=-1)
        if (np.diff(srt, axis=-1) == 0).any():
            raise FeasibilityError("duplicate item inside a feasible set")
        top = int(items.max()) + 1 if items.size else 0
        self.n_items = top if n_items is None else int(n_items)
        if top > self.n_items:
            raise FeasibilityError(f"item id {top - 1} >= n_items={self.n_items}")
        self.items = _frozen(items, np.int64)
        self.mask = _frozen(mask, bool)
        self.sizes = _frozen(mask.sum(axis=-1), np.int64)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.items.shape

    @property
    def n_contexts(self) -> int:
        return self.items.shape[0]

    @property
    def n_generators(self) -> int:
        return self.items.shape[1]

    @property
    def n_slots(self) -> int:
        return self.items.shape[2]

    @classmethod
    def from_lists(cls, sets: Sequence[Sequence[Sequence[int]]], n_items: int | None = None):
        width = max(len(s) for row in sets for s in row)
        items = np.full((len(sets), len(sets[0]), width), -1, dtype=np.int64)
        for c, row in enumerate(sets):
            if len(row) != items.shape[1]:
                raise FeasibilityError("every context needs one set per generator")
            for g, s in enumerate(row):
                items[c, g, : len(s)] = list(s)
        return cls(items, n_items)

    def to_lists(self) -> list[list[list[int]]]:
        return [
            [[int(v) for v in self.items[c, g, : self.sizes[c, g]]] for g in range(self.n_generators)]
            for c in range(self.n_contexts)
        ]

    def slot_of(self, x: int, a1: int, a2: int) -> int:
        """Slot index of item ``a2`` in ``S(x, a1)``; raises if absent."""
        hits = np.flatnonzero(self.items[x, a1] == a2)
        if hits.size == 0:
            raise FeasibilityError(f"item {a2} is not in S(x={x}, a1={a1})")
        return int(hits[0])

    def __eq__(self, other):
        return (
            isinstance(other, FeasibleMap)
            and self.n_items == other.n_items
            and np.array_equal(self.items, other.items)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class TwoStagePolicy:
    """A stage-1 rule over generators and a stage-2 rule over feasible slots."""

    id: str
    stage1: np.ndarray
    stage2: np.ndarray

    def __post_init__(self):
        s1 = _frozen(self.stage1)
        s2 = _frozen(self.stage2)
        if s1.ndim != 2 or s2.ndim != 3 or s2.shape[:2] != s1.shape:
            raise FeasibilityError(f"policy {self.id!r}: stage shapes {s1.shape} / {s2.shape} disagree")
        object.__setattr__(self, "stage1", s1)
        object.__setattr__(self, "stage2", s2)

    def joint(self) -> np.ndarray:
        """``pi1(a1|x) * pi2(a2|x,a1)`` over slots, shape ``(C, K1, L)``."""
        return self.stage1[:, :, None] * self.stage2

    def check(self, feasible: FeasibleMap, atol: float = SUM_TOL) -> None:
        """Raise ``FeasibilityError`` unless the policy is a feasible two-stage rule."""
        if self.stage2.shape != feasible.shape:
            raise FeasibilityError(
                f"policy {self.id!r} has shape {self.stage2.shape}, feasible map {feasible.shape}"
            )
        if (self.stage1 < 0).any() or (self.stage2 < 0).any():
            raise FeasibilityError(f"policy {self.id!r} has negative probabilities")
        off = (self.stage2 != 0) & ~feasible.mask
        if off.any():
            c, g, j = np.argwhere(off)[0]
            raise FeasibilityError(f"policy {self.id!r} puts stage-2 mass off S(x={c}, a1={g}) at slot {j}")
        if np.abs(self.stage1.sum(axis=1) - 1.0).max() > atol:
            raise FeasibilityError(f"policy {self.id!r}: stage-1 rows do not sum to 1")
        if np.abs(self.stage2.sum(axis=2) - 1.0).max() > atol:
            raise FeasibilityError(f"policy {self.id!r}: stage-2 rows do not sum to 1")

    def renamed(self, new_id: str) -> "TwoStagePolicy":
        return TwoStagePolicy(new_id, self.stage1, self.stage2)

    def take_contexts(self, idx) -> "TwoStagePolicy":
        return TwoStagePolicy(self.id, self.stage1[idx], self.stage2[idx])


def uniform_stage2(feasible: FeasibleMap) -> np.ndarray:
    return feasible.mask / feasible.sizes[:, :, None]


def uniform_policy(feasible: FeasibleMap, policy_id: str = "uniform") -> TwoStagePolicy:
    C, K1, _ = feasible.shape
    return TwoStagePolicy(policy_id, np.full((C, K1), 1.0 / K1), uniform_stage2(feasible))


def deterministic_policy(feasible: FeasibleMap, generator, slot, policy_id: str) -> TwoStagePolicy:
    """Point-mass policy: ``generator`` is ``(C,)``, ``slot`` is ``(C, K1)`` (or scalar)."""
    C, K1, L = feasible.shape
    generator = np.broadcast_to(np.asarray(generator, dtype=np.int64), (C,))
    slot = np.broadcast_to(np.asarray(slot, dtype=np.int64), (C, K1))
    s1 = np.zeros((C, K1))
    s1[np.arange(C), generator] = 1.0
    s2 = np.zeros((C, K1, L))
    np.put_along_axis(s2, slot[:, :, None], 1.0, axis=2)
    return TwoStagePolicy(policy_id, s1, s2)


@dataclass(frozen=True, eq=False)
class Environment:
    """Finite-support ground truth: context law, feasible map, rewards, behavior.

    ``true_reward[c, a1, j]`` is ``q(x, a1, a2)`` for the item in slot ``j``;
    ``proxy_score`` is an optional continuation-blind stage-1 score ``g(x, a1)``.
    """

    context_prob: np.ndarray
    feasible: FeasibleMap
    true_reward: np.ndarray
    behavior: TwoStagePolicy
    reward_bound: float = 1.0
    features: np.ndarray | None = None
    proxy_score: np.ndarray | None = None
    name: str = "env"

    def __post_init__(self):
        p = _frozen(self.context_prob)
        q = _frozen(np.where(self.feasible.mask, self.true_reward, 0.0))
        C, K1, L = self.feasible.shape
        if p.shape != (C,):
            raise FeasibilityError("context_prob must have one entry per context")
        if (p < 0).any() or abs(p.sum() - 1.0) > SUM_TOL:
            raise FeasibilityError("context probabilities must be nonnegative and sum to 1")
        if not self.reward_bound > 0:
            raise FeasibilityError("reward bound must be positive")
        if q.shape != (C, K1, L) or (q < 0).any() or (q > self.reward_bound).any():
            raise FeasibilityError(f"true rewards must lie in [0, {self.reward_bound}]")
        self.behavior.check(self.feasible)
        feats = np.zeros((C, 0)) if self.features is None else self.features
        object.__setattr__(self, "context_prob", p)
        object.__setattr__(self, "true_reward", q)
        object.__setattr__(self, "features", _frozen(feats))
        object.__setattr__(self, "reward_bound", float(self.reward_bound))
        if self.proxy_score is not None:
            object.__setattr__(self, "proxy_score", _frozen(self.proxy_score))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.feasible.shape

    @property
    def overlap_floor(self) -> float:
        """Smallest stage-wise behavior propensity over feasible pairs of live contexts."""
        live = self.context_prob > 0
        s1 = self.behavior.stage1[live]
        s2 = self.behavior.stage2[live][self.feasible.mask[live]]
        return float(min(s1.min(), s2.min()))


@dataclass(frozen=True)
class PolicyLibrary:
    """Ordered, id-unique collection of candidate policies."""

    policies: tuple[TwoStagePolicy, ...]

    def __post_init__(self):
        pols = tuple(self.policies)
        if not pols:
            raise FeasibilityError("policy library is empty")
        ids = [p.id for p in pols]
        if len(set(ids)) != len(ids):
            raise FeasibilityError("policy ids must be unique")
        object.__setattr__(self, "policies", pols)

    def __iter__(self):
        return iter(self.policies)

    def __len__(self):
        return len(self.policies)

    def __getitem__(self, key):
        if isinstance(key, str):
            for p in self.policies:
                if p.id == key:
                    return p
            raise KeyError(key)
        return self.policies[key]

    @property
    def ids(self) -> list[str]:
        return [p.id for p in self.policies]

    def check(self, feasible: FeasibleMap) -> None:
        for p in self.policies:
            p.check(feasible)


# --------------------------------------------------------------------------- values


def policy_value(env: Environment, pi: TwoStagePolicy) -> float:
    """End-to-end value ``V(pi)``."""
    pi.check(env.feasible)
    per_context = np.einsum("ck,ckl,ckl->c", pi.stage1, pi.stage2, env.true_reward)
    return float(env.context_prob @ per_context)


def continuation_values(env: Environment, pi2=None, optimal: bool = False) -> np.ndarray:
    """``m_{pi2}(x, a1)`` for every pair, or ``m*(x, a1)`` when ``optimal``.

    ``pi2`` may be a ``TwoStagePolicy`` or a bare ``(C, K1, L)`` stage-2 array.
    """
    if optimal:
        return np.where(env.feasible.mask, env.true_reward, -np.inf).max(axis=2)
    s2 = pi2.stage2 if isinstance(pi2, TwoStagePolicy) else np.asarray(pi2, dtype=float)
    if s2.shape != env.shape:
        raise FeasibilityError("stage-2 rule shape does not match the environment")
    if (s2[~env.feasible.mask] != 0).any():
        raise FeasibilityError("stage-2 rule puts mass outside feasible sets")
    return (s2 * env.true_reward).sum(axis=2)


def greedy_stage2(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Point mass on the first slot maximising ``scores`` within each feasible set."""
    best = np.argmax(np.where(mask, scores, -np.inf), axis=2)
    out = np.zeros(mask.shape)
    np.put_along_axis(out, best[:, :, None], 1.0, axis=2)
    return out


def oracle_policy(env: Environment) -> TwoStagePolicy:
    """Greedy stage 2 in ``q`` and greedy stage 1 in ``m*``; ties go to the lowest index."""
    s2 = greedy_stage2(env.true_reward, env.feasible.mask)
    m_star = continuation_values(env, optimal=True)
    s1 = np.zeros(m_star.shape)
    s1[np.arange(m_star.shape[0]), np.argmax(m_star, axis=1)] = 1.0
    return TwoStagePolicy("oracle", s1, s2)


# ------------------------------------------------------------------ ratios and burden


def floored(denominator: np.ndarray, numerator: np.ndarray, floor: float, index_map=None) -> np.ndarray:
    """Apply the denominator floor, or raise on a zero the numerator needs.

    ``index_map`` turns the flat position of the first offending entry into the
    reported ``(x, a1, a2)`` triple.
    """
    denominator = np.asarray(denominator, dtype=float)
    if floor > 0:
        return np.maximum(denominator, floor)
    bad = (denominator <= 0) & (np.asarray(numerator) > 0)
    if bad.any():
        pos = np.argwhere(bad)[0]
        raise OffSupportError(index_map(pos) if index_map else pos)
    # 0/0 terms contribute nothing; keep the division finite
    return np.where(denominator > 0, denominator, 1.0)


def coupled_weight(env: Environment, pi: TwoStagePolicy, x: int, a1: int, a2: int, floor: float = 0.0) -> float:
    """``pi1 pi2 / (mu1 mu2)`` at one feasible triple (``a2`` is an item id)."""
    j = env.feasible.slot_of(x, a1, a2)
    num = pi.stage1[x, a1] * pi.stage2[x, a1, j]
    den = env.behavior.stage1[x, a1] * env.behavior.stage2[x, a1, j]
    if den <= 0:
        if floor > 0:
            den = floor
        else:
            raise OffSupportError((x, a1, a2))
    return float(num / den)


def support_reference(prop1: np.ndarray, prop2: np.ndarray, mask: np.ndarray):
    """Uniform rule over the pairs with positive propensity at each context."""
    ok1 = prop1 > 0
    ok2 = (prop2 > 0) & mask
    ok1 = ok1 & ok2.any(axis=-1)
    n1 = np.maximum(ok1.sum(axis=-1, keepdims=True), 1)
    n2 = np.maximum(ok2.sum(axis=-1, keepdims=True), 1)
    return ok1 / n1, ok2 / n2


def conditional_burden_arrays(
    pi1: np.ndarray,
    pi2: np.ndarray,
    prop1: np.ndarray,
    prop2: np.ndarray,
    mask: np.ndarray,
    floor: float = 0.0,
    mode: str = "raw_full",
    index_map=None,
) -> np.ndarray:
    """Per-row burden ``sum pi1^2 pi2^2 / (mu1 mu2)`` and its ablation variants.

    Rows are contexts (or records); inputs broadcast as ``(..., K1)`` and
    ``(..., K1, L)``. Modes:

    ``raw_full``
        the coupled second moment.
    ``stage1_only`` / ``stage2_only``
        the other stage's ratio is replaced by one.
    ``normalized_full``
        ``raw_full`` divided by the raw burden of the uniform rule over
        positively-logged pairs at the same row.
    """
    if mode not in BURDEN_MODES:
        raise ValueError(f"unknown burden mode {mode!r}")
    pi_joint = pi1[..., None] * pi2
    if mode == "stage1_only":
        num = pi1**2 * np.where(mask, pi2, 0.0).sum(axis=-1)
        den = floored(prop1, num, floor, index_map and (lambda p: index_map((*p, -1))))
        return (num / den).sum(axis=-1)
    if mode == "stage2_only":
        num = pi1[..., None] * pi2**2
        den = floored(prop2, num, floor, index_map)
        return np.where(mask, num / den, 0.0).sum(axis=(-2, -1))
    prop = prop1[..., None] * prop2
    num = pi_joint**2
    den = floored(prop, num, floor, index_map)
    raw = np.where(mask, num / den, 0.0).sum(axis=(-2, -1))
    if mode == "raw_full":
        return raw
    r1, r2 = support_reference(prop1, prop2, mask)
    rj = r1[..., None] * r2
    ref = np.where(mask, rj**2 / np.where(prop > 0, prop, 1.0), 0.0).sum(axis=(-2, -1))
    return raw / ref


def burden(source, pi: TwoStagePolicy, *, floor: float = 0.0, contexts=None, mode: str = "raw_full"):
    """Conditional and global support burden.

    ``source`` is an ``Environment`` (population mode: the global value is
    weighted by the context law) or a behavior ``TwoStagePolicy`` paired with a
    feasible map as ``(policy, feasible)``. Passing ``contexts`` (an array of
    context ids, one per logged record) switches to the empirical mode: the
    global value is the average over those contexts.

    Returns ``(per_context, global_value)``.
    """
    if isinstance(source, Environment):
        behavior, feasible, weights = source.behavior, source.feasible, source.context_prob
    else:
        behavior, feasible = source
        weights = None
    pi.check(feasible)

    def triple(pos):
        c, g, j = (int(v) for v in pos)
        return (c, g, int(feasible.items[c, g, j]) if j >= 0 else -1)

    per = conditional_burden_arrays(
        pi.stage1, pi.stage2, behavior.stage1, behavior.stage2, feasible.mask, floor, mode, triple
    )
    if contexts is not None:
        total = float(np.mean(per[np.asarray(contexts)]))
    elif weights is not None:
        total = float(weights @ per)
    else:
        total = float(np.mean(per))
    return per, total


# --------------------------------------------------------------------- persistence


def env_to_dict(env: Environment) -> dict:
    C = env.feasible.n_contexts
    sizes = env.feasible.sizes
    doc = {
        "name": env.name,
        "reward_bound": env.reward_bound,
        "n_items": env.feasible.n_items,
        "n_generators": env.feasible.n_generators,
        "contexts": [
            {"id": c, "prob": float(env.context_prob[c]), "features": [float(v) for v in env.features[c]]}
            for c in range(C)
        ],
        "feasible": env.feasible.to_lists(),
        "true_reward": [
            [[float(v) for v in env.true_reward[c, g, : sizes[c, g]]] for g in range(env.feasible.n_generators)]
            for c in range(C)
        ],
        "behavior": {
            "id": env.behavior.id,
            "stage1": [[float(v) for v in row] for row in env.behavior.stage1],
            "stage2": [
                [[float(v) for v in env.behavior.stage2[c, g, : sizes[c, g]]] for g in range(env.feasible.n_generators)]
                for c in range(C)
            ],
        },
        "proxy_score": None if env.proxy_score is None else [[float(v) for v in row] for row in env.proxy_score],
    }
    return doc


def _ragged(values, feasible: FeasibleMap) -> np.ndarray:
    out = np.zeros(feasible.shape)
    for c, row in enumerate(values):
        for g, vals in enumerate(row):
            out[c, g, : len(vals)] = vals
    return out


def env_from_dict(doc: dict) -> Environment:
    feasible = FeasibleMap.from_lists(doc["feasible"], doc["n_items"])
    ctx = sorted(doc["contexts"], key=lambda c: c["id"])
    if [c["id"] for c in ctx] != list(range(len(ctx))):
        raise FeasibilityError("context ids must be 0..C-1")
    beh = doc["behavior"]
    behavior = TwoStagePolicy(beh["id"], np.array(beh["stage1"], dtype=float), _ragged(beh["stage2"], feasible))
    return Environment(
        context_prob=np.array([c["prob"] for c in ctx]),
        feasible=feasible,
        true_reward=_ragged(doc["true_reward"], feasible),
        behavior=behavior,
        reward_bound=doc["reward_bound"],
        features=np.array([c["features"] for c in ctx], dtype=float).reshape(len(ctx), -1),
        proxy_score=None if doc.get("proxy_score") is None else np.array(doc["proxy_score"], dtype=float),
        name=doc.get("name", "env"),
    )


def dumps_env(env: Environment) -> str:
    return json.dumps(env_to_dict(env), indent=1, sort_keys=True, ensure_ascii=False) + "\n"


def save_env(env: Environment, path) -> None:
    Path(path).write_text(dumps_env(env), encoding="utf-8")


def load_env(path) -> Environment:
    return env_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
