import hashlib
from typing import Union

import numpy as np

SeedLabel = Union[str, int]


def derive_seed(seed: int, *labels: SeedLabel) -> int:
    """Derive an independent 63-bit seed for one component of a run.

    The same ``(seed, labels)`` always yields the same value, so every random
    stream in a run (initialisation, dropout, shuffling per epoch) follows from
    the single run seed.

    Args:
        seed (int): Run seed from the manifest.
        *labels (SeedLabel): Fixed component labels, e.g. ``"shuffle", 3``.

    Returns:
        int: Derived seed.
    """
    text = ":".join([str(seed), *(str(label) for label in labels)])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def make_rng(seed: int, *labels: SeedLabel) -> np.random.Generator:
    """Numpy generator for a labelled stream of the run seed."""
    return np.random.default_rng(derive_seed(seed, *labels))
