"""Keyed random streams.

Each consumer of randomness gets its own generator derived from
``(seed, purpose, *indices)``. Streams never share state, so the order in
which clients run (or how many threads run them) cannot change any draw.
"""

from __future__ import annotations

import numpy as np

_PURPOSES = {
    "sample": 1,
    "compress": 2,
    "local": 3,
    "downlink": 4,
    "problem": 5,
    "partition": 6,
    "cell": 7,
    "calibrate": 8,
}


def stream(seed: int, purpose: str, *indices: int) -> np.random.Generator:
    key = (_PURPOSES[purpose],) + tuple(int(i) for i in indices)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


def derive_seed(seed: int, purpose: str, *indices: int) -> int:
    key = (_PURPOSES[purpose],) + tuple(int(i) for i in indices)
    return int(np.random.SeedSequence(int(seed), spawn_key=key).generate_state(1, np.uint64)[0] >> 1)
