"""Counter-based random streams.

Every sample draws from its own Philox stream keyed by
``(seed, stream, index)``, so results do not depend on how work is split
across threads.
"""

import numpy as np

SWEEP_STREAM = 0
SEARCH_STREAM = 1
SECTION_STREAM = 2


def stream_rng(seed: int, index: int, stream: int = SWEEP_STREAM) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(index)))
    return np.random.Generator(np.random.Philox(ss))
