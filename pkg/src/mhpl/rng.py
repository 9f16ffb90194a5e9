"""Single seeded randomness source.

Every random draw in the package goes through a numpy ``Generator`` backed
by the Philox-4x64 counter-based bit generator, keyed by one u64 seed.
Sub-streams are derived by hashing (seed, tag) with SeedSequence so that
adding a new consumer never shifts the draws of an existing one.
"""
import zlib

import numpy as np


def make_rng(seed: int, *tags) -> np.random.Generator:
    if seed < 0 or seed >= 2**64:
        raise ValueError("seed must be a u64")
    key = [int(seed) & 0xFFFFFFFF, int(seed) >> 32]
    key += [zlib.crc32(str(t).encode()) for t in tags]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
