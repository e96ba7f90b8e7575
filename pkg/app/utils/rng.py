import zlib
from typing import Union

import numpy as np

StreamKey = Union[str, int]


def _key_to_int(key: StreamKey) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    if isinstance(key, (int, np.integer)) and key >= 0:
        return int(key)
    raise ValueError(f"Stream keys must be strings or non-negative ints, got {key!r}")


def make_rng(seed: int, *stream: StreamKey) -> np.random.Generator:
    """
    Build an independent 64-bit generator for a named stream.

    The same (seed, stream) pair always yields the same sequence, and distinct
    streams never share state, so stochastic steps can run in any order or in
    parallel without changing results.

    Args:
        seed (int): Run seed.
        *stream: Stream name and indices, e.g. ("step", epoch, batch_index).

    Returns:
        np.random.Generator: A PCG64 generator seeded from SeedSequence([seed, *keys]).
    """
    keys = [_key_to_int(seed)] + [_key_to_int(k) for k in stream]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(keys)))
