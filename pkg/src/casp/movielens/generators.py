"""Four prefix-only candidate generators and their top-L feasible sets.

Every score at a context uses only rating events with a strictly earlier
timestamp. Items never rated in that prefix are ineligible everywhere, so a
movie cannot surface before its first rating.

Generators, in stage-1 order:

Popularity
    prefix rating count.
Genre
    overlap between an item's genres and the user's prefix genre profile.
Collaborative
    cosine co-rating similarity to the user's nearest prefix neighbours,
    backing off to the genre score when too few neighbours exist.
LongTail
    items at or below the tail quantile of prefix popularity that share a
    genre with the user, least popular first.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from scipy import sparse

from ..errors import ConfigError
from .contexts import ContextStream
from .ingest import MovieLensTables

GENERATOR_NAMES = ("Popularity", "Genre", "Collaborative", "LongTail")
POPULARITY, GENRE, COLLABORATIVE, LONGTAIL = range(4)


@dataclass(frozen=True)
class GeneratorConfig:
    """Generator and support settings.

    ``min_fill``: a generator supports a context only if it scores at least
    this many eligible items itself (default ``L // 2``).
    ``fallback_depth``: the popularity fallback may insert the rated item only
    if it ranks within this many most popular eligible items (default ``5 L``).
    """

    L: int = 30
    neighbors: int = 25
    min_neighbors: int = 5
    tail_quantile: float = 0.30
    min_fill: int | None = None
    fallback_depth: int | None = None
    snapshot_every: int = 500
    smoothing: float = 1.0

    def __post_init__(self):
        if self.L < 1:
            raise ConfigError("L must be >= 1")
        if self.neighbors < 1 or self.min_neighbors < 1:
            raise ConfigError("neighbour counts must be >= 1")
        if not 0 < self.tail_quantile < 1:
            raise ConfigError("tail_quantile must lie in (0, 1)")
        if self.snapshot_every < 1:
            raise ConfigError("snapshot_every must be >= 1")

    @property
    def fill(self) -> int:
        return max(1, self.L // 2) if self.min_fill is None else self.min_fill

    @property
    def depth(self) -> int:
        return 5 * self.L if self.fallback_depth is None else self.fallback_depth


@dataclass
class ContextScores:
    """Catalog-wide scores at one context; ineligible items hold ``-inf``."""

    position: int
    scores: np.ndarray  # (4, n_items)
    counts: np.ndarray
    positives: np.ndarray
    tail_cut: float
    backoff: bool
    prior: float = field(default=0.0)


class PrefixScanner:
    """Walks the context stream in time order, keeping prefix statistics current."""

    def __init__(self, tables: MovieLensTables, cfg: GeneratorConfig = GeneratorConfig(), threshold: int = 4):
        self.cfg = cfg
        r = tables.ratings
        self.ts = r.timestamp
        self.item = np.searchsorted(tables.movies.movie_id, r.movie)
        self.positive = (r.rating >= threshold).astype(float)
        _, self.uidx = np.unique(r.user, return_inverse=True)
        self.n_users = int(self.uidx.max()) + 1
        self.n_items = len(tables.movies.movie_id)
        self.genres = tables.movies.genre_matrix()
        self.genre_size = np.maximum(self.genres.sum(axis=1), 1.0)
        order = np.lexsort((np.arange(len(r)), self.uidx))
        bounds = np.searchsorted(self.uidx[order], np.arange(self.n_users + 1))
        self.user_events = [order[bounds[u]:bounds[u + 1]] for u in range(self.n_users)]
        self._user_of = {int(uid): i for i, uid in enumerate(np.unique(r.user))}

    def _snapshot(self, k: int):
        rows, cols = self.uidx[:k], self.item[:k]
        X = sparse.csr_matrix((np.ones(k), (rows, cols)), shape=(self.n_users, self.n_items))
        X.data[:] = 1.0
        return X, X.tocsc(), np.sqrt(np.asarray(X.getnnz(axis=1), dtype=float))

    def scan(self, stream: ContextStream) -> Iterator[ContextScores]:
        cfg = self.cfg
        counts = np.zeros(self.n_items)
        positives = np.zeros(self.n_items)
        k_prev = 0
        X = Xc = norms = None
        for j in range(len(stream)):
            t = stream.timestamp[j]
            k = int(np.searchsorted(self.ts, t, side="left"))
            if k > k_prev:
                counts += np.bincount(self.item[k_prev:k], minlength=self.n_items)
                positives += np.bincount(self.item[k_prev:k], weights=self.positive[k_prev:k], minlength=self.n_items)
                k_prev = k
            if X is None or j % cfg.snapshot_every == 0:
                X, Xc, norms = self._snapshot(k)
            u = self._user_of[int(stream.user[j])]
            ev = self.user_events[u]
            hist_items = self.item[ev[: np.searchsorted(ev, k)]]
            yield self._score(j, u, hist_items, counts, positives, X, Xc, norms)

    def _score(self, j, u, hist, counts, positives, X, Xc, norms) -> ContextScores:
        cfg = self.cfg
        eligible = counts > 0
        eligible[hist] = False
        neg = -np.inf
        out = np.full((4, self.n_items), neg)
        out[POPULARITY] = np.where(eligible, counts, neg)

        if len(hist):
            profile = self.genres[hist].mean(axis=0)
        else:
            profile = np.zeros(self.genres.shape[1])
        genre = (self.genres @ profile) / self.genre_size
        out[GENRE] = np.where(eligible & (genre > 0), genre, neg)

        backoff = True
        if len(hist):
            co = np.asarray(Xc[:, hist].sum(axis=1)).ravel()
            co[u] = 0.0
            with np.errstate(divide="ignore", invalid="ignore"):
                sim = np.where(norms > 0, co / (norms * np.sqrt(len(hist))), 0.0)
            pos = np.flatnonzero(sim > 0)
            if len(pos) >= cfg.min_neighbors:
                backoff = False
                if len(pos) > cfg.neighbors:
                    # deterministic: highest similarity, then lowest user index
                    sel = np.lexsort((pos, -sim[pos]))[: cfg.neighbors]
                    pos = pos[sel]
                collab = np.asarray(X[pos].T @ sim[pos]).ravel()
                out[COLLABORATIVE] = np.where(eligible & (collab > 0), collab, neg)
        if backoff:
            out[COLLABORATIVE] = out[GENRE]

        seen = counts[counts > 0]
        tail_cut = float(np.quantile(seen, cfg.tail_quantile)) if seen.size else 0.0
        slice_ = np.flatnonzero(eligible & (counts <= tail_cut) & (genre > 0))
        if slice_.size:
            rank = np.lexsort((slice_, counts[slice_]))
            tail_score = np.empty(slice_.size)
            tail_score[rank] = (slice_.size - np.arange(slice_.size)) / slice_.size
            out[LONGTAIL, slice_] = tail_score
        prior = float(positives.sum() / counts.sum()) if counts.sum() > 0 else 0.5
        return ContextScores(j, out, counts.copy(), positives.copy(), tail_cut, backoff, prior)


def top_items(score: np.ndarray, counts: np.ndarray, limit: int) -> np.ndarray:
    """Indices of the ``limit`` best finite positive scores; ties by higher count, then lower index."""
    cand = np.flatnonzero(np.isfinite(score) & (score > 0))
    if cand.size > 4 * limit:
        # cheap prefilter that keeps every item tied with the cut-off score
        cut = np.partition(score[cand], cand.size - limit)[cand.size - limit]
        cand = cand[score[cand] >= cut]
    order = np.lexsort((cand, -counts[cand], -score[cand]))
    return cand[order[:limit]]


def normalized(score: np.ndarray) -> np.ndarray:
    """Scores rescaled to ``[0, 1]`` by the largest finite score; ineligible items map to 0."""
    fin = np.isfinite(score)
    if not fin.any():
        return np.zeros_like(score)
    top = score[fin].max()
    return np.where(fin, score / top if top > 0 else 0.0, 0.0)


@dataclass(frozen=True)
class ContextSets:
    """Per-generator feasible sets at one context, before support filtering."""

    items: np.ndarray  # (4, L) item rows, -1 padded
    own: np.ndarray  # (4, L) slot filled by the generator's own score (not backfill)
    score: np.ndarray  # (4, L) normalized own score of each exposed item
    own_count: np.ndarray  # (4,)


def feasible_sets(cs: ContextScores, L: int) -> ContextSets:
    """Top-``L`` per generator, topped up from popularity order when a generator runs short."""
    pop_order = top_items(cs.scores[POPULARITY], cs.counts, cs.scores.shape[1])
    items = np.full((4, L), -1, dtype=np.int64)
    own = np.zeros((4, L), dtype=bool)
    score = np.zeros((4, L))
    own_count = np.zeros(4, dtype=np.int64)
    for g in range(4):
        norm = normalized(cs.scores[g])
        mine = top_items(cs.scores[g], cs.counts, L)
        own_count[g] = len(mine)
        chosen = list(mine)
        if len(chosen) < L:
            taken = set(chosen)
            for it in pop_order:
                if len(chosen) >= L:
                    break
                if it not in taken:
                    chosen.append(int(it))
                    taken.add(int(it))
        items[g, : len(chosen)] = chosen
        own[g, : len(mine)] = True
        score[g, : len(mine)] = norm[mine]
    return ContextSets(items, own, score, own_count)
