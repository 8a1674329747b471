"""Counter-based random streams.

Every stochastic routine in the package draws from a Philox generator keyed
by a tuple of integers (master seed plus context indices such as block or
iteration numbers).  Distinct keys give statistically independent streams,
and a stream's output never depends on how many worker processes are in
flight, which is what makes whole experiments reproducible across
``--workers`` settings.
"""

from __future__ import annotations

import numpy as np

__all__ = ["stream", "as_stream", "BLOCK_SIZE"]

# Paths are simulated in fixed-size blocks; block b of a run draws from
# stream(master_seed, *context, b).  The block size is part of the
# reproducibility contract: changing it changes the draws.
BLOCK_SIZE = 32768


def stream(*key: int) -> np.random.Generator:
    """Return a Philox generator keyed by a tuple of non-negative integers."""
    ss = np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in key])
    return np.random.Generator(np.random.Philox(seed=ss))


def as_stream(rng, *subkey: int) -> np.random.Generator:
    """Normalize a seed-or-generator argument to a Generator.

    Integers are expanded to ``stream(rng, *subkey)`` so that the same seed
    plus the same context always produces the same draws.  An existing
    Generator is passed through unchanged (the caller owns its state).
    """
    if isinstance(rng, np.random.Generator):
        return rng
    return stream(int(rng), *subkey)
