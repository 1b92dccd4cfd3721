"""Counter-based, hierarchically keyed random streams.

A stream is identified by a path of non-negative integers, e.g.
``(seed, TRAIN, round, client)``. The path is hashed by numpy's
``SeedSequence`` into a Philox key, so any two distinct paths give
independent streams and no stream depends on how many draws were taken from
another. This is what makes client updates independent of scheduling order.
"""
import numpy as np

# domain tags: first path component after the seed
INIT = 1
SAMPLE_CLIENTS = 2
TRAIN = 3
PARTITION = 4
DATA = 5
SPLIT = 6
PROBE = 7
MODEL = 8


def stream(seed, *path):
    """Return a fresh ``Generator`` for the stream at ``(seed, *path)``."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1),
                                spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))
