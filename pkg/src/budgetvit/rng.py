"""Seed-splitting scheme.

All randomness in a run flows from a single root seed. Each consumer derives
its own independent PCG64 stream from (root_seed, stream tag, *extra keys),
so components stay reproducible in isolation:

    model init     -> stream(seed, STREAM_MODEL_INIT)
    epoch shuffle  -> stream(seed, STREAM_DATA, epoch)
    augmentation   -> stream(seed, STREAM_AUGMENT, epoch)
    synthetic data -> stream(seed, STREAM_SYNTHETIC, split tag)

Streams keyed by epoch are pure functions of (seed, epoch): resuming from a
checkpoint at any epoch boundary replays the identical sequence.
"""

import numpy as np

STREAM_MODEL_INIT = 1
STREAM_DATA = 2
STREAM_AUGMENT = 3
STREAM_SYNTHETIC = 4
STREAM_GRADCHECK = 5
STREAM_BENCH = 6


def stream(root_seed: int, *keys: int) -> np.random.Generator:
    """Derive an independent generator from the root seed and integer keys."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(root_seed), *map(int, keys)])))


def derived_seed(root_seed: int, *keys: int) -> int:
    """A plain integer seed derived from the root seed (for APIs that take ints)."""
    ss = np.random.SeedSequence([int(root_seed), *map(int, keys)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
