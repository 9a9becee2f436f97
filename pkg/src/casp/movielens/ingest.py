"""Parsers for the '::'-delimited MovieLens 1M release files.

Files are read line by line with Latin-1 decoding (the release stores movie
titles in that encoding). Any malformed line raises ``DataError`` naming the
file and the 1-based line number.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DataError

GENRES = (
    "Action", "Adventure", "Animation", "Children's", "Comedy", "Crime", "Documentary", "Drama",
    "Fantasy", "Film-Noir", "Horror", "Musical", "Mystery", "Romance", "Sci-Fi", "Thriller",
    "War", "Western",
)
ENCODING = "latin-1"
RATINGS_FILE, MOVIES_FILE, USERS_FILE = "ratings.dat", "movies.dat", "users.dat"
# Size of the genuine ratings file, used to recognise the official release.
RELEASE_RATINGS = 1_000_209


@dataclass(frozen=True)
class Ratings:
    """Rating events in the total order ``(timestamp, user, movie)``."""

    user: np.ndarray
    movie: np.ndarray
    rating: np.ndarray
    timestamp: np.ndarray

    def __len__(self):
        return len(self.user)

    def positive_rate(self, threshold: int = 4) -> float:
        return float(np.mean(self.rating >= threshold))


@dataclass(frozen=True)
class Movies:
    movie_id: np.ndarray
    title: tuple[str, ...]
    genres: tuple[tuple[str, ...], ...]

    def index(self) -> dict[int, int]:
        return {int(m): i for i, m in enumerate(self.movie_id)}

    def genre_matrix(self) -> np.ndarray:
        """``(n_movies, n_genres)`` 0/1 matrix; unknown genre names get extra columns."""
        names = list(GENRES)
        for gs in self.genres:
            for g in gs:
                if g not in names:
                    names.append(g)
        col = {g: j for j, g in enumerate(names)}
        out = np.zeros((len(self.movie_id), len(names)))
        for i, gs in enumerate(self.genres):
            for g in gs:
                out[i, col[g]] = 1.0
        return out


@dataclass(frozen=True)
class Users:
    user_id: np.ndarray
    gender: tuple[str, ...]
    age: np.ndarray
    occupation: np.ndarray
    zipcode: tuple[str, ...]


@dataclass(frozen=True)
class MovieLensTables:
    ratings: Ratings
    movies: Movies
    users: Users


def _lines(path: Path, n_fields: int):
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    with open(path, encoding=ENCODING, newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("::")
            if len(parts) != n_fields:
                raise DataError(f"{path.name}:{lineno}: expected {n_fields} '::'-separated fields, got {len(parts)}")
            yield lineno, parts


def _int(value: str, path: Path, lineno: int, what: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise DataError(f"{path.name}:{lineno}: {what} {value!r} is not an integer") from None


def read_ratings(path) -> Ratings:
    path = Path(path)
    rows = []
    for lineno, (u, m, r, t) in _lines(path, 4):
        rating = _int(r, path, lineno, "rating")
        if not 1 <= rating <= 5:
            raise DataError(f"{path.name}:{lineno}: rating {rating} outside 1..5")
        rows.append((_int(t, path, lineno, "timestamp"), _int(u, path, lineno, "user id"),
                     _int(m, path, lineno, "movie id"), rating))
    if not rows:
        raise DataError(f"{path.name}: empty ratings table")
    arr = np.array(rows, dtype=np.int64)
    order = np.lexsort((arr[:, 2], arr[:, 1], arr[:, 0]))
    arr = arr[order]
    return Ratings(user=arr[:, 1], movie=arr[:, 2], rating=arr[:, 3], timestamp=arr[:, 0])


def read_movies(path) -> Movies:
    path = Path(path)
    ids, titles, genres = [], [], []
    for lineno, (m, title, g) in _lines(path, 3):
        ids.append(_int(m, path, lineno, "movie id"))
        titles.append(title)
        genres.append(tuple(x for x in g.split("|") if x))
    if not ids:
        raise DataError(f"{path.name}: empty movies table")
    if len(set(ids)) != len(ids):
        raise DataError(f"{path.name}: duplicate movie ids")
    order = np.argsort(ids, kind="stable")
    return Movies(np.array(ids, dtype=np.int64)[order], tuple(titles[i] for i in order), tuple(genres[i] for i in order))


def read_users(path) -> Users:
    path = Path(path)
    rows = []
    for lineno, (u, g, a, o, z) in _lines(path, 5):
        rows.append((_int(u, path, lineno, "user id"), g, _int(a, path, lineno, "age"),
                     _int(o, path, lineno, "occupation"), z))
    if not rows:
        raise DataError(f"{path.name}: empty users table")
    rows.sort(key=lambda r: r[0])
    return Users(
        np.array([r[0] for r in rows], dtype=np.int64),
        tuple(r[1] for r in rows),
        np.array([r[2] for r in rows], dtype=np.int64),
        np.array([r[3] for r in rows], dtype=np.int64),
        tuple(r[4] for r in rows),
    )


def ingest(path) -> MovieLensTables:
    """Read ``ratings.dat``, ``movies.dat`` and ``users.dat`` from the directory ``path``."""
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"dataset directory not found: {root}")
    ratings = read_ratings(root / RATINGS_FILE)
    movies = read_movies(root / MOVIES_FILE)
    users = read_users(root / USERS_FILE)
    unknown = np.setdiff1d(np.unique(ratings.movie), movies.movie_id)
    if unknown.size:
        raise DataError(f"ratings reference {unknown.size} movie ids missing from {MOVIES_FILE} (first {unknown[0]})")
    return MovieLensTables(ratings, movies, users)
