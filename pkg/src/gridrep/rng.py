"""Seeded counter-based random number generation.

All sampling in the package goes through generators built here. Philox is
counter-based, so a (seed, stream) pair gives the same sequence on every
platform, and independent workers or episodes can own disjoint streams.
"""

import numpy as np


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Return a Philox generator for the given (seed, stream) pair.

    The stream index occupies the high 64 bits of the 128-bit Philox key,
    so distinct (seed, stream) pairs can never collide.
    """
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be non-negative")
    return np.random.Generator(np.random.Philox(key=int(seed) + (int(stream) << 64)))
