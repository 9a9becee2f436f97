"""Chronological request contexts and temporal train/eval splits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import rng as rngmod
from ..errors import ConfigError, DataError
from .ingest import MovieLensTables


@dataclass(frozen=True)
class ContextStream:
    """One context per eligible rating event, in event order.

    ``event`` indexes the time-ordered ratings; ``item`` is the rated movie's
    row in the movies table; ``history`` is the number of the user's ratings
    with a strictly earlier timestamp.
    """

    event: np.ndarray
    user: np.ndarray
    item: np.ndarray
    rating: np.ndarray
    timestamp: np.ndarray
    history: np.ndarray
    label: np.ndarray
    threshold: int
    n_eligible: int

    def __len__(self):
        return len(self.event)

    def take(self, idx) -> "ContextStream":
        idx = np.asarray(idx)
        return ContextStream(
            self.event[idx], self.user[idx], self.item[idx], self.rating[idx], self.timestamp[idx],
            self.history[idx], self.label[idx], self.threshold, self.n_eligible,
        )


def strict_prefix_counts(user: np.ndarray, timestamp: np.ndarray) -> np.ndarray:
    """For each event, how many events of the same user have a strictly smaller timestamp."""
    n = len(user)
    order = np.lexsort((np.arange(n), timestamp, user))
    u, t = user[order], timestamp[order]
    idx = np.arange(n)
    new_user = np.r_[True, u[1:] != u[:-1]]
    group_start = np.maximum.accumulate(np.where(new_user, idx, 0))
    new_key = new_user | np.r_[True, t[1:] != t[:-1]]
    run_start = np.maximum.accumulate(np.where(new_key, idx, 0))
    out = np.empty(n, dtype=np.int64)
    out[order] = run_start - group_start
    return out


def even_subsample(n: int, k: int) -> np.ndarray:
    """``k`` evenly spaced positions out of ``n`` (all of them when ``k >= n``)."""
    if k >= n:
        return np.arange(n)
    return np.floor(np.arange(k) * (n / k)).astype(np.int64)


def build_contexts(
    tables: MovieLensTables,
    warm_start: int = 20,
    max_contexts: int | None = 25_000,
    threshold: int = 4,
) -> ContextStream:
    """Rating events whose user already has ``warm_start`` strictly earlier ratings.

    Labels are ``rating >= threshold``. When there are more eligible events
    than ``max_contexts`` an evenly spaced subsample (in event order) is kept.
    """
    if warm_start < 1:
        raise ConfigError("warm_start must be >= 1")
    if threshold not in (1, 2, 3, 4, 5):
        raise ConfigError("threshold must be a rating level in 1..5")
    r = tables.ratings
    hist = strict_prefix_counts(r.user, r.timestamp)
    eligible = np.flatnonzero(hist >= warm_start)
    n_eligible = len(eligible)
    if max_contexts is not None:
        eligible = eligible[even_subsample(len(eligible), int(max_contexts))]
    item = np.searchsorted(tables.movies.movie_id, r.movie[eligible])
    return ContextStream(
        event=eligible,
        user=r.user[eligible],
        item=item,
        rating=r.rating[eligible],
        timestamp=r.timestamp[eligible],
        history=hist[eligible],
        label=(r.rating[eligible] >= threshold).astype(float),
        threshold=threshold,
        n_eligible=n_eligible,
    )


def split_fraction(train_fraction: float, rep: int, seed: int, jitter: float) -> float:
    """Train share for replication ``rep``: the base share plus a seeded uniform shift in ``[-jitter, jitter]``."""
    u = rngmod.stream(seed, rngmod.PURPOSE_SPLIT, rep).uniform(-1.0, 1.0)
    return float(train_fraction + jitter * u)


def temporal_split(
    timestamp: np.ndarray,
    train_fraction: float = 0.8,
    *,
    rep: int | None = None,
    seed: int = 0,
    jitter: float = 0.02,
):
    """Index arrays ``(train, eval)`` with every train timestamp strictly before every eval one.

    The boundary is the timestamp at the ``train_fraction`` quantile; when
    ``rep`` is given the fraction is shifted by ``split_fraction``.
    """
    if not 0 < train_fraction < 1:
        raise ConfigError("train_fraction must lie in (0, 1)")
    ts = np.asarray(timestamp)
    f = train_fraction if rep is None else split_fraction(train_fraction, rep, seed, jitter)
    k = int(round(f * len(ts)))
    srt = np.sort(ts, kind="stable")
    if k <= 0 or k >= len(ts):
        raise DataError(f"degenerate temporal split at fraction {f:.4f} of {len(ts)} contexts")
    boundary = srt[k]
    train = np.flatnonzero(ts < boundary)
    evals = np.flatnonzero(ts >= boundary)
    if train.size == 0 or evals.size == 0:
        raise DataError(f"degenerate temporal split at fraction {f:.4f} of {len(ts)} contexts")
    return train, evals
