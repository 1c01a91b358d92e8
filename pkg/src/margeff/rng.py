"""Named random streams derived from a single integer seed.

Each consumer draws from its own ``SeedSequence`` child so simulation draws,
cross-validation folds and forest bootstraps never share a stream, and
adding draws to one consumer leaves the others untouched.
"""

import numpy as np

STREAMS = {
    "simulate": 1,
    "cv_variance": 2,
    "super_learner_folds": 3,
    "learner": 4,
    "power_curve": 5,
}


def stream(seed, name, *key) -> np.random.Generator:
    """Generator for stream ``name`` (with optional integer sub-keys) under ``seed``."""
    seed = 0 if seed is None else int(seed)
    spawn_key = (STREAMS[name],) + tuple(int(k) for k in key)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=spawn_key))


def child_seed(seed, name, *key) -> int:
    """A 32-bit integer seed for libraries that only accept integers."""
    return int(stream(seed, name, *key).integers(0, 2**31 - 1))
