"""Counter-based random streams keyed by (master seed, trajectory index).

Every trajectory owns a Philox generator derived from a ``SeedSequence`` whose
spawn key is the trajectory index, so ensembles can be run in any order (or on
any worker) and reproduce bit-for-bit.  Event-driven engines read uniforms
through :class:`UniformStream`, which buffers draws in blocks; the sequence of
uniforms it hands out does not depend on the block size.
"""
from __future__ import annotations

import hashlib

import numpy as np

BLOCK = 1 << 16


def seed_sequence(seed: int, index: int | tuple[int, ...] = ()) -> np.random.SeedSequence:
    key = (index,) if isinstance(index, int) else tuple(index)
    return np.random.SeedSequence(int(seed), spawn_key=key)


def generator(seed: int, index: int | tuple[int, ...] = ()) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed_sequence(seed, index)))


def cell_seed(master: int, *parts) -> int:
    """128-bit seed for an experiment cell, hashed from the master seed and cell key.

    Reshaping a parameter grid never changes the seed of a surviving cell.
    """
    text = "|".join([str(int(master))] + [repr(p) for p in parts])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:16], "little")


class UniformStream:
    """Buffered uniforms on [0, 1) drawn from one Philox generator."""

    def __init__(self, gen: np.random.Generator | int, index: int | tuple[int, ...] = ()):
        self.gen = gen if isinstance(gen, np.random.Generator) else generator(gen, index)
        self.buf = np.empty(0)
        self.pos = 0
        self.consumed = 0

    def ensure(self, k: int) -> None:
        """Make at least ``k`` unread uniforms available in ``buf[pos:]``."""
        avail = self.buf.size - self.pos
        if avail >= k:
            return
        fresh = self.gen.random(max(BLOCK, k - avail))
        self.buf = np.concatenate([self.buf[self.pos:], fresh])
        self.pos = 0

    def advance(self, k: int) -> None:
        self.pos += k
        self.consumed += k

    def take(self, k: int) -> np.ndarray:
        self.ensure(k)
        out = self.buf[self.pos:self.pos + k]
        self.advance(k)
        return out

    def uniform(self) -> float:
        return float(self.take(1)[0])

    def exponential(self) -> float:
        return float(-np.log1p(-self.take(1)[0]))
