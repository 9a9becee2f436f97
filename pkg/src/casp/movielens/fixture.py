"""Synthetic stand-ins for the MovieLens release and the application library.

``write_synthetic_release`` writes files in the release's exact '::' format
(Latin-1, with accented titles) so the parsers and the full application
pipeline can run without the genuine data.
"""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import rng as rngmod
from ..core import FeasibleMap, PolicyLibrary, TwoStagePolicy, greedy_stage2
from ..nuisance import NuisanceBundle, fit_reward_crossfit, propensity_source
from ..simulate import LoggedDataset
from .ingest import ENCODING, GENRES, MovieLensTables, Movies, Ratings

_TITLE_WORDS = ("Café", "Noir", "Amélie", "Señor", "Über", "Garçon", "Night", "River", "Star", "Road", "Ghost", "Love")


def synthetic_release(n_events: int = 1000, n_users: int = 30, n_movies: int = 80, seed: int = 7):
    """Text of ``(ratings, movies, users)`` files for a small synthetic release.

    Every user rates each movie at most once; popularity is Zipf-skewed and
    some timestamps are shared so the tie order is exercised.
    """
    g = rngmod.stream(seed, rngmod.PURPOSE_FIXTURE)
    if n_events > n_users * n_movies:
        raise ValueError("too many events for the catalog")
    movie_ids = np.sort(g.choice(np.arange(1, 4 * n_movies), size=n_movies, replace=False))
    movies = []
    item_genres = []
    for i, m in enumerate(movie_ids):
        k = int(g.integers(1, 4))
        gs = sorted(g.choice(len(GENRES), size=k, replace=False))
        item_genres.append(gs)
        w1, w2 = g.choice(len(_TITLE_WORDS), size=2, replace=False)
        movies.append(f"{m}::{_TITLE_WORDS[w1]} {_TITLE_WORDS[w2]} {i} ({1950 + int(g.integers(0, 50))})::"
                      + "|".join(GENRES[j] for j in gs))
    users = [f"{u}::{'MF'[int(g.integers(0, 2))]}::{int(g.choice([1, 18, 25, 35, 45, 50, 56]))}::"
             f"{int(g.integers(0, 21))}::{int(g.integers(10000, 99999))}" for u in range(1, n_users + 1)]

    pop = 1.0 / np.arange(1, n_movies + 1) ** 0.8
    pop = pop[g.permutation(n_movies)]
    quality = g.normal(0.0, 0.8, size=n_movies)
    per_user = np.full(n_users, n_events // n_users)
    per_user[: n_events % n_users] += 1
    events = []
    t0 = 956_703_932
    for u in range(n_users):
        chosen = g.choice(n_movies, size=int(per_user[u]), replace=False, p=pop / pop.sum())
        bias = g.normal(0.3, 0.6)
        start = t0 + int(g.integers(0, 40_000))
        times = start + np.cumsum(g.integers(0, 3_000, size=len(chosen)))
        for it, t in zip(chosen, times):
            r = int(np.clip(np.rint(3.2 + bias + quality[it] + g.normal(0, 0.9)), 1, 5))
            events.append((u + 1, int(movie_ids[it]), r, int(t)))
    g.shuffle(events)
    ratings = [f"{u}::{m}::{r}::{t}" for u, m, r, t in events]
    return "\n".join(ratings) + "\n", "\n".join(movies) + "\n", "\n".join(users) + "\n"


def write_synthetic_release(path, **kwargs) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    ratings, movies, users = synthetic_release(**kwargs)
    for name, text in (("ratings.dat", ratings), ("movies.dat", movies), ("users.dat", users)):
        with open(root / name, "w", encoding=ENCODING, newline="\n") as fh:
            fh.write(text)
    return root


def with_future_item(tables: MovieLensTables, first_timestamp: int, n_ratings: int = 25,
                     movie_id: int | None = None, genres=("Drama", "Comedy")):
    """Copy of ``tables`` plus a new movie whose every rating is at or after ``first_timestamp``.

    Returns ``(tables, movie_id)``. The new ratings go to the most active
    users (rating 5) so the item would rank highly if it ever leaked.
    """
    r = tables.ratings
    mid = int(tables.movies.movie_id.max()) + 1 if movie_id is None else int(movie_id)
    users, counts = np.unique(r.user, return_counts=True)
    top = users[np.lexsort((users, -counts))][:n_ratings]
    ts = first_timestamp + np.arange(len(top))
    user = np.r_[r.user, top]
    movie = np.r_[r.movie, np.full(len(top), mid)]
    rating = np.r_[r.rating, np.full(len(top), 5)]
    stamp = np.r_[r.timestamp, ts]
    order = np.lexsort((movie, user, stamp))
    ratings = Ratings(user[order], movie[order], rating[order], stamp[order])
    mv = tables.movies
    ids = np.r_[mv.movie_id, mid]
    o = np.argsort(ids, kind="stable")
    titles = mv.title + ("Future Release (2031)",)
    gens = mv.genres + (tuple(genres),)
    movies = Movies(ids[o], tuple(titles[i] for i in o), tuple(gens[i] for i in o))
    return replace(tables, ratings=ratings, movies=movies), mid


def threshold_fixture(n: int = 2000, off_share: float = 0.65, floor: float = 1e-9, seed: int = 11):
    """App-style instance with one high-value off-support policy and a supported family.

    Three generators expose 4 items each from disjoint pools whose rewards
    rise with the generator index; the best generator has zero logged
    stage-1 support on roughly ``off_share`` of contexts. Returns
    ``(data, behavior, bundle, library, off_id, supported_ids)``.
    """
    g = rngmod.stream(seed, rngmod.PURPOSE_FIXTURE, 2)
    K1, L, pool = 3, 4, 10
    q_item = np.concatenate([g.uniform(0.30, 0.50, pool), g.uniform(0.45, 0.60, pool), g.uniform(0.85, 0.95, pool)])
    items = np.stack([np.stack([k * pool + g.choice(pool, L, replace=False) for k in range(K1)]) for _ in range(n)])
    feasible = FeasibleMap(items, K1 * pool)
    off = g.random(n) < off_share
    s1 = np.ones((n, K1))
    s1[off, 2] = 0.0
    s1 /= s1.sum(axis=1, keepdims=True)
    s2 = np.full((n, K1, L), 1.0 / L)
    behavior = TwoStagePolicy("behavior", s1, s2)
    rows = np.arange(n)
    a1 = rngmod.categorical(g, s1)
    slot = rngmod.categorical(g, s2[rows, a1])
    y = (g.random(n) < q_item[items[rows, a1, slot]]).astype(float)
    data = LoggedDataset(rows, a1, slot, y, s1[rows, a1], s2[rows, a1, slot], feasible, 1.0, "threshold_fixture", seed)
    reward = fit_reward_crossfit(data, 5, 1.0, seed=seed, cells="item")
    bundle = NuisanceBundle(reward, propensity_source(data, "reconstructed", floor, behavior=behavior))

    qtab = reward.tables.mean(axis=0)
    greedy = greedy_stage2(qtab, feasible.mask)

    def point(gen):
        s = np.zeros((n, K1))
        s[rows, gen] = 1.0
        return s

    switch = np.where(off, 1, 2)
    lib = PolicyLibrary((
        TwoStagePolicy("offsupport/gen2", point(np.full(n, 2)), greedy),
        TwoStagePolicy("supported/behavior", s1, s2),
        TwoStagePolicy("supported/gen0", point(np.zeros(n, dtype=int)), greedy),
        TwoStagePolicy("supported/gen1", point(np.ones(n, dtype=int)), greedy),
        TwoStagePolicy("supported/switch", point(switch), greedy),
        TwoStagePolicy("supported/mix", 0.5 * s1 + 0.5 * point(switch), greedy),
    ))
    supported = [p for p in lib.ids if p.startswith("supported/")]
    return data, behavior, bundle, lib, "offsupport/gen2", supported
