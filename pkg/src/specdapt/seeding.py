"""Deterministic random substreams and config hashing."""

from __future__ import annotations

import hashlib
import json
import zlib

import numpy as np


def _key_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFF
    return zlib.crc32(str(key).encode("utf-8"))


def substream(seed: int, *keys) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``.

    Keys may be ints or strings; strings are hashed with crc32 so that
    ``substream(7, "target", "train")`` is stable across processes.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key_int(k) for k in keys))
    return np.random.default_rng(ss)


def derive_seed(seed: int, *keys) -> int:
    return int(substream(seed, *keys).integers(0, 2**31 - 1))


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]
