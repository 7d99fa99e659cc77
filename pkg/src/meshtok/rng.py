"""Reproducible random streams.

All stochastic components draw from Philox4x64 (counter-based), keyed by
(seed, stream id). Stream ids are documented at each call site: sampling
uses the output sequence index, point sampling the mesh index within a set,
training the step number. This scheme is versioned as "philox4x64-v1";
changing it is a breaking format change.
"""

import numpy as np


def philox_stream(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for (seed, stream), identical on every platform."""
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(stream & 0xFFFFFFFFFFFFFFFF)])
    return np.random.Generator(np.random.Philox(key=key))
