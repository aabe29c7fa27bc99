"""Deterministic, splittable random streams.

Every stochastic routine in the package draws from a generator built here.
A stream is addressed by a master seed plus a tuple of string/integer keys
(for example ``("design", n, trial)``), so concurrently executed trials get
independent, reproducible streams regardless of scheduling order.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["stream", "seed_fingerprint"]

_MASK64 = (1 << 64) - 1


def _key_words(master_seed: int, keys: tuple[int | str, ...]) -> list[int]:
    words = [int(master_seed) & _MASK64]
    for key in keys:
        if isinstance(key, str):
            words.append(zlib.crc32(key.encode("utf-8")))
        else:
            words.append(int(key) & _MASK64)
    return words


def stream(master_seed: int, *keys: int | str) -> np.random.Generator:
    """Generator for the stream addressed by ``(master_seed, *keys)``."""
    return np.random.default_rng(np.random.SeedSequence(_key_words(master_seed, keys)))


def seed_fingerprint(master_seed: int, *keys: int | str) -> int:
    """Stable integer label for a stream, used in logs and CSV output."""
    acc = 0
    for word in _key_words(master_seed, keys):
        acc = zlib.crc32(word.to_bytes(8, "little"), acc)
    return acc
