"""Deterministic seed derivation on top of :class:`numpy.random.SeedSequence`."""
import numpy as np


def as_seedseq(seed) -> np.random.SeedSequence:
    """Fresh SeedSequence for ``seed`` (int, sequence, SeedSequence or None)."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key)
    return np.random.SeedSequence(seed)


def child_seed(root: np.random.SeedSequence, *path: int) -> np.random.SeedSequence:
    """Child of ``root`` addressed by ``path``; independent of call order."""
    return np.random.SeedSequence(root.entropy, spawn_key=tuple(root.spawn_key) + tuple(int(p) for p in path))


def rng(root: np.random.SeedSequence, *path: int) -> np.random.Generator:
    return np.random.default_rng(child_seed(root, *path))
