"""Seeded random streams.

Every random quantity in a run comes from a stream keyed by
``(master_seed, agent, purpose)``.  The key is fed to
:class:`numpy.random.SeedSequence` as ``spawn_key=(agent, purpose_code)``, so
adding a new purpose or a new agent never perturbs an existing stream.

Streams hand out values in fixed-size blocks.  Whether a consumer pulls one
row at a time or a whole block, it sees the same sequence, which is what lets
the batched simulator and the per-agent reference path agree bit for bit.
"""

from __future__ import annotations

import numpy as np

# Stable codes; never renumber.
PURPOSES = {
    "init": 0,
    "gradient": 1,
    "action": 2,
    "problem": 3,
}

BLOCK = 512

LAWS = ("normal", "uniform", "laplace")

MAX_SEED = 2**64 - 1


def check_seed(seed: int) -> int:
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise TypeError(f"seed must be an integer, got {type(seed).__name__}")
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def generator(seed: int, agent: int, purpose: str) -> np.random.Generator:
    """Return the generator for one ``(seed, agent, purpose)`` key."""
    seq = np.random.SeedSequence(check_seed(seed), spawn_key=(int(agent), PURPOSES[purpose]))
    return np.random.Generator(np.random.PCG64(seq))


class NoiseStream:
    """Block-buffered stream of ``width`` draws per step.

    ``law`` is one of ``normal`` (standard), ``uniform`` on [0, 1) or
    ``laplace`` scaled to unit variance.
    """

    def __init__(self, gen: np.random.Generator, width: int, law: str = "normal", block: int = BLOCK):
        if law not in LAWS:
            raise ValueError(f"unknown noise law {law!r}")
        self.gen = gen
        self.width = int(width)
        self.law = law
        self.block = int(block)
        self._buf = np.empty((0, self.width))
        self._pos = 0

    def _draw(self) -> np.ndarray:
        shape = (self.block, self.width)
        if self.law == "normal":
            return self.gen.standard_normal(shape)
        if self.law == "uniform":
            return self.gen.random(shape)
        return self.gen.laplace(0.0, 1.0 / np.sqrt(2.0), shape)

    def take(self) -> np.ndarray:
        """Next single row of shape ``(width,)``."""
        if self._pos >= self._buf.shape[0]:
            self._buf = self._draw()
            self._pos = 0
        row = self._buf[self._pos]
        self._pos += 1
        return row

    def take_block(self) -> np.ndarray:
        """Next full block; only valid on a block boundary."""
        if self._pos != self._buf.shape[0]:
            raise RuntimeError("take_block called mid-block")
        self._buf = self._draw()
        self._pos = self._buf.shape[0]
        return self._buf


def stream(seed: int, agent: int, purpose: str, width: int, law: str = "normal") -> NoiseStream:
    return NoiseStream(generator(seed, agent, purpose), width, law)
