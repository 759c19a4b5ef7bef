"""Named child random streams derived from a single integer seed.

Each consumer (parameter init, dropout, corpus offsets, ...) draws from its
own stream, so adding a new consumer never shifts the numbers another one sees.
"""
import zlib

import numpy as np


def child_rng(seed, name, *extra):
    key = (zlib.crc32(name.encode("utf-8")),) + tuple(int(e) for e in extra)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))
