"""Deterministic RNG substreams derived from a single pipeline seed.

Every stage that consumes randomness pulls its own named substream so that
stages stay reproducible when run individually or as a full pipeline.
"""

import numpy as np

STREAM_DATA = 0
STREAM_SCORER_INIT = 1
STREAM_CLASSIFIER_INIT = 2
STREAM_AUGMENT = 3

_MASK64 = (1 << 64) - 1


def stream_seed(seed, *key):
    """Collapse (seed, *key) into one 64-bit seed for a named substream."""
    ss = np.random.SeedSequence([int(seed) & _MASK64] + [int(k) & _MASK64 for k in key])
    return int(ss.generate_state(1, np.uint64)[0])


def substream(seed, *key):
    """Generator for the substream identified by (seed, *key)."""
    return np.random.default_rng(stream_seed(seed, *key))
