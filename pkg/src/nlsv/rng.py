"""Reproducible random-number streams built on the counter-based Philox
generator.

Every stochastic routine in the package takes an :class:`RngStream`
instead of a bare seed.  A stream is identified by (seed, stream_id):
identical identifiers reproduce identical draw sequences, distinct
stream ids are statistically independent, and streams can be handed to
parallel workers without coordination.  ``substream(k)`` derives a family
of per-task streams (one per observation interval, per forecast origin,
...) so results do not depend on how work is partitioned across workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1
_SUBSTREAM_SHIFT = 32


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        key = np.array([self.seed & _MASK64, self.stream_id & _MASK64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def substream(self, index: int) -> "RngStream":
        """Independent child stream for task ``index`` (single level only).

        Parent stream ids are expected below 2**32 and indices below
        2**32; the child id packs both so distinct (parent, index) pairs
        never collide.
        """
        if index < 0:
            raise ValueError("substream index must be >= 0")
        child = ((self.stream_id << _SUBSTREAM_SHIFT) ^ (index + 1)) & _MASK64
        return RngStream(self.seed, child)
