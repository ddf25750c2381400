"""Deterministic seed derivation.

All randomness in a run flows from one master seed. Components never share
generator state; instead each random decision derives its own seed from the
master seed plus a tuple of naming keys (strings and integers). This makes
every sub-stream pinnable from tests and makes checkpoint/resume trivial:
no generator state needs to be persisted, only the counters that name the
streams.
"""

from __future__ import annotations

import zlib

import numpy as np


def _encode_key(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFF
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    raise TypeError(f"seed key must be int or str, got {type(key).__name__}")


def derive_seed(master_seed: int, *keys) -> int:
    """Collapse (master_seed, keys...) into a single 64-bit seed."""
    seq = np.random.SeedSequence([int(master_seed)] + [_encode_key(k) for k in keys])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def substream(master_seed: int, *keys) -> np.random.Generator:
    """A fresh generator for the named sub-stream."""
    seq = np.random.SeedSequence([int(master_seed)] + [_encode_key(k) for k in keys])
    return np.random.Generator(np.random.PCG64(seq))
