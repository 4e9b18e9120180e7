"""Keyed random substreams.

Every random choice in the toolkit is drawn from a generator derived from the
run seed plus stable keys (parent id, utterance id, epoch, ...), never from
iteration order. That keeps parallel and resumed runs identical.
"""
from __future__ import annotations

import hashlib

import numpy as np

SEED_MAX = 2**64 - 1


def key_to_int(key: str | int) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"substream key must be non-negative, got {key}")
        return int(key)
    digest = hashlib.blake2b(str(key).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= SEED_MAX:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def substream(seed: int, *keys: str | int) -> np.random.Generator:
    """Generator for ``(seed, *keys)``; independent of call order."""
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(key_to_int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def tag(*keys: str | int) -> str:
    return "/".join(str(k) for k in keys)
