"""Named, reproducible random streams derived from one top-level seed.

Every stochastic component (splitting, init, negative sampling, dropout)
draws from its own named stream so that changing one component's draw
order never perturbs the others.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream", "stream_seed"]


def _name_key(name: str) -> int:
    # Stable across runs and platforms, unlike hash().
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream(seed: int, name: str) -> np.random.Generator:
    """Generator for the stream `name` under the top-level `seed`."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), _name_key(name)]))


def stream_seed(seed: int, name: str) -> int:
    """Integer sub-seed for the stream, for APIs that take a seed."""
    return int(np.random.SeedSequence([int(seed), _name_key(name)]).generate_state(1)[0])
