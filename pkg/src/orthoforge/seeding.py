import zlib

import numpy as np


def stream(seed: int, *keys) -> np.random.Generator:
    """Independent Philox stream for ``seed`` and a path of keys.

    Keys may be ints or strings; strings are hashed with crc32 so the
    same name always selects the same stream.
    """
    spawn_key = tuple(
        k if isinstance(k, int) else zlib.crc32(str(k).encode('utf-8'))
        for k in keys
    )
    sequence = np.random.SeedSequence(seed & 0xFFFFFFFFFFFFFFFF, spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(sequence))
