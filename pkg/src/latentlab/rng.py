"""Named, counter-based random streams.

Every stochastic component of the lab draws from a Philox-4x64 bit
generator keyed by ``(seed, stream id)``.  Philox is counter-based, so a
stream is a pure function of its key: the same ``(seed, stream, counter)``
triple yields bitwise-identical draws on every platform and under any
degree of concurrency.  Each purpose gets its own stream id so that, e.g.,
adding one more latent draw can never shift the noise used by a transition
channel or the directions used by a sliced statistic.
"""

from __future__ import annotations

import numpy as np

# Stream ids, one per purpose. Values are arbitrary but frozen.
LATENTS = 1
NOISE = 2
MIXING_PARAMS = 3
SLICES = 4
INIT = 5
EVAL = 6
SPLIT = 7
BOOTSTRAP = 8
PLANNING = 9


def stream(seed: int, stream_id: int, counter: int = 0) -> np.random.Generator:
    """Generator for the given (seed, purpose) pair.

    ``counter`` advances the Philox counter block, giving disjoint
    substreams (one per training step, per sweep cell, ...) without any
    sequential draw bookkeeping.
    """
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    stream_id = int(stream_id) & 0xFFFFFFFFFFFFFFFF
    key = np.array([seed, stream_id], dtype=np.uint64)
    ctr = np.array([0, 0, 0, int(counter) & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=ctr, key=key))
