import hashlib

import numpy as np


def _label_entropy(label) -> int:
    digest = hashlib.sha256(str(label).encode('utf-8')).digest()
    return int.from_bytes(digest[:8], 'little')


def derive_rng(master_seed: int, *labels) -> np.random.Generator:
    """
    Builds an independent generator for a labelled stream, e.g. `derive_rng(seed, 'attack', 3)`.

    Streams depend only on the master seed and their own label path, so adding a stage never
    shifts the numbers drawn by another one.
    """
    entropy = [int(master_seed) & 0xFFFFFFFFFFFFFFFF] + [_label_entropy(label) for label in labels]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(master_seed: int, *labels) -> int:
    return int(derive_rng(master_seed, *labels).integers(0, 2 ** 63 - 1))
