"""Seeded random streams.

Every stream is a Philox4x64 counter-based generator keyed by a root seed and
an integer path. The path is passed as the ``spawn_key`` of a
``numpy.random.SeedSequence``, so ``stream(7, PURPOSE_SAMPLE, rep)`` names the
same bits on every platform and is independent of every other path.
"""

import numpy as np

# First component of a stream path; keeps unrelated uses of one seed apart.
PURPOSE_ENV = 1
PURPOSE_SAMPLE = 2
PURPOSE_FOLDS = 3
PURPOSE_PERTURB = 4
PURPOSE_SPLIT = 5
PURPOSE_LOGGER = 6
PURPOSE_CHECK = 7
PURPOSE_FIXTURE = 8

_MASK64 = (1 << 64) - 1


def stream(seed: int, *path: int) -> np.random.Generator:
    """Return the generator for ``(seed, *path)``."""
    ss = np.random.SeedSequence(int(seed) & _MASK64, spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def categorical(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """Draw one index per row of ``probs`` by inverse CDF.

    Zero-probability entries are never returned, including when rounding
    leaves the last cumulative value below the uniform draw.
    """
    probs = np.asarray(probs, dtype=float)
    if probs.ndim == 1:
        probs = probs[None, :]
    u = rng.random(probs.shape[0])
    cdf = np.cumsum(probs, axis=1)
    idx = (cdf <= (u * cdf[:, -1])[:, None]).sum(axis=1)
    last_pos = probs.shape[1] - 1 - np.argmax(probs[:, ::-1] > 0, axis=1)
    idx = np.minimum(idx, last_pos)
    # A zero entry can only be hit by the clip above; walk back to a positive one.
    bad = probs[np.arange(len(idx)), idx] <= 0
    if bad.any():
        for r in np.flatnonzero(bad):
            j = idx[r]
            while probs[r, j] <= 0:
                j -= 1
            idx[r] = j
    return idx
