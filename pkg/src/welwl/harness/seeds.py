"""Named random substreams derived from one 64-bit root seed.

A stream is addressed by a path such as ``("separation", 3, "ppgn")``.  Each
path element is mapped to a 32-bit word and appended to the root entropy, so
adding trials or components never shifts the streams of existing ones.
"""
from __future__ import annotations

import zlib

import numpy as np

__all__ = ["substream_seed", "substream", "MAX_SEED"]

MAX_SEED = 2 ** 64 - 1


def _word(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0 or part >= 2 ** 32:
            raise ValueError(f"integer path element {part} outside [0, 2^32)")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def substream_seed(root: int, *path) -> np.random.SeedSequence:
    if not 0 <= int(root) <= MAX_SEED:
        raise ValueError(f"root seed must fit in 64 bits, got {root}")
    # type-tag each element so ("a", 1) and (1, "a") cannot collide
    words = []
    for part in path:
        words += [0 if isinstance(part, (int, np.integer)) else 1, _word(part)]
    return np.random.SeedSequence(entropy=int(root), spawn_key=tuple(words))


def substream(root: int, *path) -> np.random.Generator:
    return np.random.default_rng(substream_seed(root, *path))
