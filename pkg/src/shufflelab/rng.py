"""Counter-based random number streams.

Every random draw in the library comes from a stream identified by
``(seed, purpose, indices)``.  The same identifier always reproduces the
same draws, no matter how many other streams were consumed in between.
This is what makes paired strategy comparisons possible: the noise stream
for (epoch, step) is keyed by position, not by how the order strategy
happened to spend the global RNG state.

Implementation: numpy's Philox bit generator.  The 128-bit key holds
(seed, sha256(purpose)), the 256-bit counter holds the indices in its
high words, leaving the low word free for in-stream progression.  Streams
whose identifiers differ in any component are separated by at least 2^64
counter blocks.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


def _purpose_word(purpose: str) -> int:
    digest = hashlib.sha256(purpose.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(seed: int, purpose: str, *indices: int) -> np.random.Generator:
    """Return a fresh Generator for the stream (seed, purpose, *indices).

    Up to three non-negative 64-bit indices are supported; they occupy the
    high counter words so distinct index tuples can never collide.
    """
    if len(indices) > 3:
        raise ValueError("at most three stream indices are supported")
    counter = [0, 0, 0, 0]
    for slot, idx in enumerate(indices, start=1):
        if idx < 0:
            raise ValueError("stream indices must be non-negative")
        counter[slot] = int(idx) & _MASK64
    key = [int(seed) & _MASK64, _purpose_word(purpose)]
    return np.random.Generator(np.random.Philox(counter=counter, key=key))


@dataclass(frozen=True)
class RngStream:
    """Value-type handle for one stream; safe to pass across threads."""

    seed: int
    purpose: str
    indices: tuple[int, ...] = ()

    def generator(self) -> np.random.Generator:
        return substream(self.seed, self.purpose, *self.indices)

    def child(self, *more: int) -> "RngStream":
        return RngStream(self.seed, self.purpose, self.indices + tuple(int(i) for i in more))
