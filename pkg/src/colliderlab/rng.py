"""Counter-based random streams.

Every trial owns a fixed block of ``SLOTS`` uniform draws addressed by
``(seed, stream, trial index)`` through numpy's Philox generator, so any
partitioning of the trial range reproduces the same numbers bit for bit.
"""

from __future__ import annotations

import numpy as np
from numpy.random import Generator, Philox, SeedSequence

SLOTS = 8
# Philox4x64 emits four 64-bit words per counter step.
_STEPS_PER_TRIAL = SLOTS // 4


class StreamExhausted(RuntimeError):
    pass


class TrialDraws:
    """Sequential view over one trial's uniform block."""

    def __init__(self, values: np.ndarray):
        self._values = values
        self._pos = 0

    def random(self) -> float:
        if self._pos >= len(self._values):
            raise StreamExhausted(f"trial block holds only {len(self._values)} draws")
        value = float(self._values[self._pos])
        self._pos += 1
        return value

    def skip(self, count: int = 1) -> None:
        self._pos += count


class RandomStream:
    """Deterministic source of per-trial uniforms.

    ``stream`` separates independent uses under the same master seed.
    """

    def __init__(self, seed: int, stream: int = 0):
        if not 0 <= int(seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self.stream = int(stream)
        self._key = SeedSequence([self.seed, self.stream]).generate_state(2, np.uint64)

    def block(self, start: int, stop: int) -> np.ndarray:
        """Uniforms for trials ``start..stop-1`` as a ``(stop-start, SLOTS)`` array."""
        if stop < start or start < 0:
            raise ValueError("invalid trial range")
        gen = Generator(Philox(key=self._key, counter=start * _STEPS_PER_TRIAL))
        return gen.random((stop - start) * SLOTS).reshape(stop - start, SLOTS)

    def trial(self, index: int) -> TrialDraws:
        return TrialDraws(self.block(index, index + 1)[0])

    def substream(self, stream: int) -> "RandomStream":
        return RandomStream(self.seed, stream)

    def generator(self, index: int = 0) -> Generator:
        """A free-running numpy Generator, for draws outside the trial grid."""
        return Generator(Philox(key=self._key, counter=[0, 0, 1, index]))


def partition_plan(n_trials: int, partitions: int, start: int = 0) -> list[tuple[int, int]]:
    """Split ``[start, start + n_trials)`` into contiguous, near-equal ranges."""
    if partitions < 1:
        raise ValueError("partitions must be >= 1")
    edges = np.linspace(start, start + n_trials, min(partitions, max(n_trials, 1)) + 1)
    edges = np.round(edges).astype(np.int64)
    return [(int(lo), int(hi)) for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo]


def map_partitions(fn, plan, workers: int = 1) -> list:
    """Apply ``fn(lo, hi)`` over a plan; results come back in plan order."""
    if workers <= 1 or len(plan) <= 1:
        return [fn(lo, hi) for lo, hi in plan]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda r: fn(*r), plan))
