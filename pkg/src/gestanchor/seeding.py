"""Named random substreams derived from one root seed.

Every stochastic component draws from its own substream so that changing
one stage (or skipping it entirely) never shifts the randomness seen by
another.
"""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Generator for the substream `name` under the given root seed."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), key]))


def subseed(seed: int, name: str) -> int:
    """A derived integer seed, for APIs that take a seed rather than a rng."""
    key = zlib.crc32(name.encode("utf-8"))
    return int(np.random.SeedSequence([int(seed), key]).generate_state(1)[0])
