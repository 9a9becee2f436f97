"""Experiment-block environments and logged-data sampling."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import rng as rngmod
from .core import Environment, FeasibleMap, TwoStagePolicy
from .errors import ConfigError, FeasibilityError

BLOCKS = ("counterexample", "coupling", "support_stress", "large_action", "sample_size")
BLOCK_LABELS = {
    "counterexample": "B1",
    "coupling": "B2",
    "support_stress": "B3",
    "large_action": "B4",
    "sample_size": "B5",
}
# Which BlockConfig field each block sweeps.
SWEEP_FIELD = {
    "counterexample": None,
    "coupling": "coupling_strength",
    "support_stress": "overlap_severity",
    "large_action": "n_items",
    "sample_size": "n",
}
DEFAULT_GRIDS = {
    "counterexample": (0.0,),
    "coupling": tuple(float(v) for v in np.linspace(0.0, 1.0, 8)),
    "support_stress": (1.0, 0.5, 0.25, 0.1),
    "large_action": (20, 50, 100),
    "sample_size": (600, 1200, 2400, 4800),
}


@dataclass(frozen=True)
class LoggedDataset:
    """I.i.d. logged records ``(x, a1, a2, y)`` with their logged propensities.

    ``slot`` locates ``a2`` inside ``S(x, a1)`` of ``feasible``.
    """

    context: np.ndarray
    a1: np.ndarray
    slot: np.ndarray
    y: np.ndarray
    mu1: np.ndarray | None
    mu2: np.ndarray | None
    feasible: FeasibleMap
    reward_bound: float = 1.0
    env_id: str = "env"
    seed: int | None = None
    timestamp: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.context)
        for name in ("a1", "slot", "y"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has the wrong length")
        C, K1, L = self.feasible.shape
        for name, top in (("context", C), ("a1", K1), ("slot", L)):
            v = np.asarray(getattr(self, name))
            if n and (v.min() < 0 or v.max() >= top):
                raise FeasibilityError(f"{name} index out of range")
        if n and not self.feasible.mask[self.context, self.a1, self.slot].all():
            raise FeasibilityError("a logged item lies outside its feasible set")

    def __len__(self):
        return len(self.context)

    @property
    def n(self) -> int:
        return len(self.context)

    @property
    def a2(self) -> np.ndarray:
        return self.feasible.items[self.context, self.a1, self.slot]

    @property
    def has_propensities(self) -> bool:
        return self.mu1 is not None and self.mu2 is not None

    def subset(self, idx) -> "LoggedDataset":
        idx = np.asarray(idx)

        def take(a):
            return None if a is None else a[idx]

        return replace(
            self,
            context=self.context[idx],
            a1=self.a1[idx],
            slot=self.slot[idx],
            y=self.y[idx],
            mu1=take(self.mu1),
            mu2=take(self.mu2),
            timestamp=take(self.timestamp),
        )

    def rows(self, rep: int = 0):
        a2 = self.a2
        for i in range(self.n):
            yield {
                "rep": rep,
                "context_id": int(self.context[i]),
                "a1": int(self.a1[i]),
                "a2": int(a2[i]),
                "y": repr(float(self.y[i])),
                "mu1": "" if self.mu1 is None else repr(float(self.mu1[i])),
                "mu2": "" if self.mu2 is None else repr(float(self.mu2[i])),
            }

    def to_csv(self, path, rep: int = 0) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(
                fh, fieldnames=["rep", "context_id", "a1", "a2", "y", "mu1", "mu2"], lineterminator="\n"
            )
            w.writeheader()
            w.writerows(self.rows(rep))


@dataclass(frozen=True)
class BlockConfig:
    block: str = "coupling"
    coupling_strength: float = 0.5
    n_generators: int = 4
    n_items: int = 20
    feasible_size: int | None = 5
    overlap_severity: float = 0.5
    n: int = 1200
    n_contexts: int = 20
    seed: int = 20240601
    grid: tuple = field(default=())
    behavior_temperature: float = 0.05
    reward_bound: float = 1.0
    counterexample_value: float = 0.85

    def __post_init__(self):
        if self.block not in BLOCKS:
            raise ConfigError(f"unknown block {self.block!r}; choose from {BLOCKS}")
        if not self.grid:
            object.__setattr__(self, "grid", DEFAULT_GRIDS[self.block])
        object.__setattr__(self, "grid", tuple(self.grid))
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.coupling_strength < 0:
            raise ConfigError("coupling_strength must be >= 0")
        if not 0 <= self.overlap_severity <= 1:
            raise ConfigError("overlap_severity must lie in [0, 1]")
        if self.block != "counterexample" and self.size > self.n_items:
            raise ConfigError(f"feasible size {self.size} exceeds item count {self.n_items}")
        if min(self.n_generators, self.n_items, self.n_contexts) < 1:
            raise ConfigError("counts must be positive")

    @property
    def size(self) -> int:
        # large_action keeps L = K2 / 5 unless pinned
        if self.feasible_size is None:
            return max(1, self.n_items // 5)
        return self.feasible_size

    def at(self, value) -> "BlockConfig":
        """Config for one sweep point."""
        name = SWEEP_FIELD[self.block]
        if name is None:
            return self
        if name in ("n_items", "n"):
            value = int(value)
        changes = {name: value}
        if self.block == "large_action":
            changes["feasible_size"] = None
        return replace(self, **changes)


def build_counterexample(M: float = 0.85) -> Environment:
    """Single context, generators ``a=0`` and ``b=1`` with singleton sets ``{u}`` and ``{v}``.

    ``q(a, u) = 0`` and ``q(b, v) = M``; behavior is uniform over the two
    generators, and the proxy score ``g`` has the unique maximiser ``a``.
    """
    if not M > 0:
        raise ConfigError("M must be positive")
    feasible = FeasibleMap(np.array([[[0], [1]]]), n_items=2)
    q = np.array([[[0.0], [M]]])
    behavior = TwoStagePolicy("behavior", np.array([[0.5, 0.5]]), np.ones((1, 2, 1)))
    return Environment(
        context_prob=np.array([1.0]),
        feasible=feasible,
        true_reward=q,
        behavior=behavior,
        reward_bound=M,
        features=np.zeros((1, 1)),
        proxy_score=np.array([[1.0, 0.0]]),
        name=f"counterexample_M{M:g}",
    )


def _softmax(z: np.ndarray, temperature: float, mask=None) -> np.ndarray:
    z = np.asarray(z, dtype=float) / temperature
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def build_block_env(cfg: BlockConfig) -> Environment:
    """Deterministic environment for ``cfg`` (one sweep point).

    ``q = (1 - k) * base(x, a2) + k * interaction(x, a1, a2)`` with ``k`` the
    coupling strength clipped to ``[0, 1]``. Behavior mixes a sharp softmax
    (continuation-blind: mean base reward of the exposed set at stage 1, base
    reward at stage 2) with the uniform rule; ``overlap_severity`` is the
    uniform weight, so 1 gives uniform logging.
    """
    if cfg.block == "counterexample":
        return build_counterexample(cfg.counterexample_value)
    C, K1, K2, L = cfg.n_contexts, cfg.n_generators, cfg.n_items, cfg.size
    if L > K2:
        raise ConfigError(f"feasible size {L} exceeds item count {K2}")
    g = rngmod.stream(cfg.seed, rngmod.PURPOSE_ENV, K1, K2, L, C)
    M = cfg.reward_bound
    context_prob = g.dirichlet(np.full(C, 5.0))
    features = g.normal(size=(C, 4))
    base = g.uniform(0.0, M, size=(C, K2))
    interaction = g.uniform(0.0, M, size=(C, K1, K2))
    items = np.empty((C, K1, L), dtype=np.int64)
    for c in range(C):
        for a in range(K1):
            items[c, a] = g.choice(K2, size=L, replace=False)
    kappa = float(np.clip(cfg.coupling_strength, 0.0, 1.0))
    cidx = np.arange(C)[:, None, None]
    aidx = np.arange(K1)[None, :, None]
    q = (1.0 - kappa) * base[cidx, items] + kappa * interaction[cidx, aidx, items]
    q = np.clip(q, 0.0, M)

    feasible = FeasibleMap(items, n_items=K2)
    proxy = base[cidx, items].mean(axis=2)
    s = cfg.overlap_severity
    tau = cfg.behavior_temperature
    mu1 = s / K1 + (1.0 - s) * _softmax(proxy / M, tau)
    mu2 = s / L + (1.0 - s) * _softmax(base[cidx, items] / M, tau)
    behavior = TwoStagePolicy("behavior", mu1, mu2)
    return Environment(
        context_prob=context_prob,
        feasible=feasible,
        true_reward=q,
        behavior=behavior,
        reward_bound=M,
        features=features,
        proxy_score=proxy,
        name=f"{cfg.block}_k{kappa:.4g}_s{s:g}_K{K1}x{K2}_L{L}",
    )


def sample_log(
    env: Environment,
    n: int,
    seed: int | None = None,
    *,
    rng: np.random.Generator | None = None,
    reward: str = "bernoulli",
    noise_sd: float = 0.1,
) -> LoggedDataset:
    """Draw ``n`` i.i.d. records from the behavior policy.

    ``reward="bernoulli"`` gives ``y = M * Bernoulli(q / M)``;
    ``reward="gaussian"`` gives ``q`` plus Gaussian noise clipped to ``[0, M]``.
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    if rng is None:
        rng = rngmod.stream(0 if seed is None else seed, rngmod.PURPOSE_SAMPLE)
    C = env.feasible.n_contexts
    ctx = rngmod.categorical(rng, np.broadcast_to(env.context_prob, (n, C)))
    a1 = rngmod.categorical(rng, env.behavior.stage1[ctx])
    slot = rngmod.categorical(rng, env.behavior.stage2[ctx, a1])
    q = env.true_reward[ctx, a1, slot]
    M = env.reward_bound
    if reward == "bernoulli":
        y = M * (rng.random(n) < q / M)
    elif reward == "gaussian":
        y = np.clip(q + noise_sd * M * rng.standard_normal(n), 0.0, M)
    else:
        raise ConfigError(f"unknown reward model {reward!r}")
    return LoggedDataset(
        context=ctx,
        a1=a1,
        slot=slot,
        y=y.astype(float),
        mu1=env.behavior.stage1[ctx, a1],
        mu2=env.behavior.stage2[ctx, a1, slot],
        feasible=env.feasible,
        reward_bound=M,
        env_id=env.name,
        seed=seed,
    )


# ------------------------------------------------------------ random small instances


def random_env(
    rng: np.random.Generator,
    max_contexts: int = 5,
    max_generators: int = 3,
    max_items: int = 6,
    min_propensity: float = 0.0,
    M: float = 1.0,
) -> Environment:
    """A random enumerable environment with strictly positive behavior on feasible pairs."""
    C = int(rng.integers(1, max_contexts + 1))
    K1 = int(rng.integers(1, max_generators + 1))
    K2 = int(rng.integers(1, max_items + 1))
    sets = []
    for _ in range(C):
        row = []
        for _ in range(K1):
            size = int(rng.integers(1, K2 + 1))
            row.append([int(v) for v in rng.choice(K2, size=size, replace=False)])
        sets.append(row)
    feasible = FeasibleMap.from_lists(sets, n_items=K2)
    L = feasible.n_slots
    mask = feasible.mask
    q = np.where(mask, rng.uniform(0.0, M, size=(C, K1, L)), 0.0)
    s1 = rng.dirichlet(np.ones(K1), size=C) + min_propensity
    s1 /= s1.sum(axis=1, keepdims=True)
    raw2 = np.where(mask, rng.gamma(1.0, size=(C, K1, L)) + min_propensity + 1e-3, 0.0)
    s2 = raw2 / raw2.sum(axis=2, keepdims=True)
    return Environment(
        context_prob=rng.dirichlet(np.ones(C)),
        feasible=feasible,
        true_reward=q,
        behavior=TwoStagePolicy("behavior", s1, s2),
        reward_bound=M,
        features=rng.normal(size=(C, 2)),
        name="random",
    )


def random_policy(
    feasible: FeasibleMap, rng: np.random.Generator, policy_id: str = "pi", sparsity: float = 0.3
) -> TwoStagePolicy:
    """Random feasible policy; each entry is zeroed with probability ``sparsity``."""
    C, K1, L = feasible.shape
    s1 = rng.gamma(0.7, size=(C, K1)) * (rng.random((C, K1)) >= sparsity)
    dead = s1.sum(axis=1) == 0
    s1[dead, rng.integers(0, K1, size=dead.sum())] = 1.0
    s1 /= s1.sum(axis=1, keepdims=True)
    s2 = rng.gamma(0.7, size=(C, K1, L)) * feasible.mask * (rng.random((C, K1, L)) >= sparsity)
    empty = s2.sum(axis=2) == 0
    s2[empty, 0] = 1.0
    s2 /= s2.sum(axis=2, keepdims=True)
    return TwoStagePolicy(policy_id, s1, s2)


def random_library(feasible: FeasibleMap, rng: np.random.Generator, size: int, include: Sequence = ()):
    from .core import PolicyLibrary

    pols = list(include) + [random_policy(feasible, rng, f"pi{i:03d}") for i in range(size - len(include))]
    return PolicyLibrary(tuple(pols))
