"""Counter-based splittable random streams.

Each stream is a Philox generator whose key is derived from
``(seed, block, replicate...)`` through a ``SeedSequence`` spawn key, so any
replicate can be regenerated without replaying the ones before it.  Work is
cut into fixed-size blocks; the block layout depends only on the number of
samples and the block size, never on the number of workers.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Sequence, TypeVar

import numpy as np

T = TypeVar("T")


@dataclass(frozen=True)
class Block:
    """A contiguous run of replicates sharing one stream."""

    index: int
    start: int
    size: int


@dataclass(frozen=True)
class StreamFactory:
    """Hands out reproducible Philox generators keyed by integers."""

    seed: int
    block_size: int = 4096

    def generator(self, *key: int) -> np.random.Generator:
        """Generator for the stream addressed by ``key``."""
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=tuple(int(k) for k in key))
        return np.random.Generator(np.random.Philox(sequence))

    def blocks(self, n_samples: int) -> List[Block]:
        """Fixed partition of ``n_samples`` replicates into blocks."""
        if n_samples < 1:
            return []
        return [
            Block(index=i, start=start, size=min(self.block_size, n_samples - start))
            for i, start in enumerate(range(0, n_samples, self.block_size))
        ]

    def block_generator(self, block: Block, *tag: int) -> np.random.Generator:
        """Stream of a block; ``tag`` separates independent uses of one block."""
        return self.generator(*tag, block.index)


def map_ordered(func: Callable[..., T], items: Sequence[object], workers: int = 1) -> List[T]:
    """Order-preserving parallel map over blocks or independent solves."""
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))
