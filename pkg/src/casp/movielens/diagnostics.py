"""Support and logging diagnostics for a reconstructed pool."""

from __future__ import annotations

from itertools import combinations

import numpy as np

from ..report import write_csv
from .generators import GENERATOR_NAMES


def support_diagnostics(stage1: np.ndarray, supported: np.ndarray, items: np.ndarray | None = None,
                        tail_logged: np.ndarray | None = None) -> dict:
    """Summary of stage-1 support and logging concentration.

    ``stage1`` is the ``(C, K1)`` logging distribution, ``supported`` the
    support flags, ``items`` the optional ``(C, K1, L)`` exposed sets (for
    the mean pairwise Jaccard overlap) and ``tail_logged`` an optional flag
    per logged item marking it as long-tail.
    """
    stage1 = np.asarray(stage1, dtype=float)
    supported = np.asarray(supported, dtype=bool)
    share = stage1.mean(axis=0)
    count = supported.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = -np.where(stage1 > 0, stage1 * np.log(stage1), 0.0).sum(axis=1)
    out = {
        "contexts": int(stage1.shape[0]),
        "dominant_stage1_share": float(share.max()),
        "minimum_generator_share": float(share.min()),
        "strict_ge2_support_share": float(np.mean(count >= 2)),
        "exactly_two_support_share": float(np.mean(count == 2)),
        "mean_support_count": float(count.mean()),
        "max_support_count": int(count.max()),
        "mean_stage1_entropy": float(ent.mean()),
    }
    for g in range(stage1.shape[1]):
        name = GENERATOR_NAMES[g] if stage1.shape[1] == len(GENERATOR_NAMES) else f"g{g}"
        out[f"stage1_share_{name}"] = float(share[g])
        out[f"zero_support_share_{name}"] = float(np.mean(~supported[:, g]))
    if items is not None:
        out["mean_pair_overlap"] = mean_pair_overlap(items)
    if tail_logged is not None:
        out["tail_item_share"] = float(np.mean(tail_logged))
    return out


def mean_pair_overlap(items: np.ndarray) -> float:
    """Average Jaccard overlap between every pair of generator sets, over contexts."""
    C, K1, _ = items.shape
    vals = []
    for c in range(C):
        sets = [set(int(v) for v in items[c, g] if v >= 0) for g in range(K1)]
        for a, b in combinations(range(K1), 2):
            u = sets[a] | sets[b]
            vals.append(len(sets[a] & sets[b]) / len(u) if u else 0.0)
    return float(np.mean(vals)) if vals else 0.0


def pool_diagnostics(rpool) -> dict:
    """``support_diagnostics`` for a ``ReconstructedPool`` plus pool bookkeeping."""
    d = rpool.data
    tail = rpool.pool.tail[d.context, d.a1, d.slot]
    out = support_diagnostics(rpool.behavior.stage1, rpool.pool.supported, rpool.pool.items, tail)
    out["fallback_share"] = float(np.mean(rpool.pool.fallback))
    out["candidate_contexts"] = int(rpool.pool.n_candidates)
    for k, v in sorted(rpool.pool.dropped.items()):
        out[f"dropped_{k}"] = int(v)
    out["logged_positive_rate"] = float(np.mean(d.y))
    return out


def write_diagnostics(diag: dict, csv_path, txt_path) -> None:
    write_csv(csv_path, ["diagnostic", "value"], sorted(diag.items()))
    width = max(len(k) for k in diag)
    lines = [f"{k:<{width}}  {v:.6g}" if isinstance(v, float) else f"{k:<{width}}  {v}" for k, v in sorted(diag.items())]
    with open(txt_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
