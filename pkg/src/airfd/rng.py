"""Deterministic random-stream derivation.

A single experiment seed deterministically derives independent substreams keyed
by arbitrary (purpose, index, ...) tags, so that e.g. the fading draw of round 7
never depends on how many noise samples round 6 consumed. String tags are hashed
with SHA-256 (stable across platforms and Python hash randomization) into the
spawn key of a ``numpy.random.SeedSequence``.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["substream"]


def _tag_words(tag: str) -> tuple[int, int]:
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    return (
        int.from_bytes(digest[0:4], "little"),
        int.from_bytes(digest[4:8], "little"),
    )


def substream(seed: int, *tags: str | int) -> np.random.Generator:
    """Derive an independent generator from a root seed and a tag path.

    Args:
        seed: Root experiment seed (any Python int ≥ 0).
        tags: Mixed string/int path, e.g. ``("fading", trial, round_index)``.
            Strings are hashed; ints are used directly (reduced mod 2**32).

    Returns:
        A ``numpy.random.Generator`` (PCG64) unique to the (seed, tags) pair
        and statistically independent of every other tag path.
    """
    words: list[int] = []
    for tag in tags:
        if isinstance(tag, str):
            words.extend(_tag_words(tag))
        else:
            value = int(tag)
            if value < 0:
                raise ValueError(f"integer tags must be nonnegative, got {value}")
            # Split into 32-bit words so arbitrarily large indices stay exact.
            words.append(value & 0xFFFFFFFF)
            words.append((value >> 32) & 0xFFFFFFFF)
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(words))
    return np.random.Generator(np.random.PCG64(sequence))
