"""Named, independent random streams derived from an integer seed."""

import zlib

import numpy as np


def _tag_words(tags):
    words = []
    for tag in tags:
        if isinstance(tag, (int, np.integer)):
            words.append(int(tag) & 0xFFFFFFFF)
        else:
            words.append(zlib.crc32(str(tag).encode("utf-8")))
    return words


def stream(seed, *tags):
    """Return a generator whose stream depends only on ``(seed, *tags)``."""
    if seed is None:
        raise ValueError("a seed is required for reproducible streams")
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + _tag_words(tags)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(seed, *tags):
    """Deterministic 63-bit child seed."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + _tag_words(tags)
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))
