"""Counter-based random streams keyed by (seed, stream_id).

Every replicate draws from its own Philox stream, so results do not depend on
the order in which replicates are scheduled.
"""
import numpy as np

DEFAULT_SEED = 20240601


def stream(seed=DEFAULT_SEED, stream_id=0):
    """Return a Philox-backed Generator for the pair (seed, stream_id)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.Philox(ss))


def as_generator(rng, seed=DEFAULT_SEED, stream_id=0):
    if rng is None:
        return stream(seed, stream_id)
    if isinstance(rng, np.random.Generator):
        return rng
    return stream(int(rng), stream_id)
