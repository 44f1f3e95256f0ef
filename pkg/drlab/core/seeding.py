"""Root-seed splitting: every random stream comes from (seed, stream-id...)."""
import zlib
from typing import Union

import numpy as np

StreamKey = Union[int, str]


def _key_to_int(key: StreamKey) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    return int(key) & 0xFFFFFFFFFFFFFFFF


def derive_seed(seed: int, *stream: StreamKey) -> int:
    """Stable 63-bit child seed for ``(seed, *stream)``."""
    sequence = np.random.SeedSequence([_key_to_int(seed)] + [_key_to_int(k) for k in stream])
    return int(sequence.generate_state(1, dtype=np.uint64)[0]) >> 1


def derive_rng(seed: int, *stream: StreamKey) -> np.random.Generator:
    """Independent generator for ``(seed, *stream)``; no global state involved."""
    return np.random.default_rng(
        np.random.SeedSequence([_key_to_int(seed)] + [_key_to_int(k) for k in stream])
    )
