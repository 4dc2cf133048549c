"""Deterministic hashing and RNG derivation.

Every source of randomness in the engine is derived from explicit string/int
parts via SHA-256 so that runs replay bit-for-bit across processes and
platforms (Python's builtin ``hash`` is salted and unusable for this).
"""

from __future__ import annotations

import hashlib
import json

import numpy as np


def stable_digest(*parts) -> bytes:
    h = hashlib.sha256()
    for part in parts:
        h.update(str(part).encode("utf-8"))
        h.update(b"\x1f")
    return h.digest()


def stable_u64(*parts) -> int:
    return int.from_bytes(stable_digest(*parts)[:8], "big")


def stable_float01(*parts) -> float:
    """Uniform in [0, 1) derived from the parts."""
    return stable_u64(*parts) / 2**64


def stable_token(*parts, length: int = 10) -> str:
    return stable_digest(*parts).hex()[:length]


def rng_from(*parts) -> np.random.Generator:
    return np.random.default_rng(stable_u64(*parts))


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()
