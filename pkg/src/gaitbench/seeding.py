"""One top-level seed fanned out by key path, so work order never changes draws."""
import zlib

import numpy as np


def _key(k):
    if isinstance(k, str):
        return zlib.crc32(k.encode())
    return int(k)


def derive_seed(seed, *keys):
    """Deterministic 63-bit seed for ``keys`` under ``seed`` (a counter-style SeedSequence spawn)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(k) for k in keys))
    hi, lo = ss.generate_state(2)
    return int(((int(hi) << 32) | int(lo)) & ((1 << 63) - 1))


def rng_for(seed, *keys):
    return np.random.default_rng(derive_seed(seed, *keys))
