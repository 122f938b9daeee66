"""Counter-based random substreams.

Every stochastic task draws from a Philox generator whose key is derived from
the run seed and a tuple of integer counters (stream tag, iteration, subject,
...).  A task's random numbers therefore depend only on *which* task it is,
never on which worker ran it or in what order, so results are bit-identical
for any worker count.
"""

from __future__ import annotations

import numpy as np

# stream tags
INIT = 1
GIBBS = 2
CMC = 3
PMWG = 4
TEMPER = 5
SMC_INIT = 10
SMC_RESAMPLE = 11
SMC_MOVE = 12
SIMULATE = 20
REPLICATE = 30


def substream(seed: int, *counters: int) -> np.random.Generator:
    """Return an independent generator keyed by ``(seed, *counters)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(c) for c in counters))
    return np.random.Generator(np.random.Philox(ss))
