"""Labelled sub-seed derivation.

Every randomized component asks for its own stream by label, so adding a
new consumer never shifts the draws of an existing one.
"""

from __future__ import annotations

import zlib

import numpy as np


def label_key(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label)
    return zlib.crc32(str(label).encode("utf-8"))


def derive_seed(seed: int, *labels) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed)] + [label_key(lab) for lab in labels])


def derive_rng(seed: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *labels))
