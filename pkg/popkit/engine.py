"""
Engine - Seeded parallel Monte Carlo harness.
Every stochastic task gets its own derived seed, so results never depend
on how many worker threads run them.
"""
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Sequence, Tuple, TypeVar

import numpy as np
import structlog

from .errors import ParameterError

log = structlog.get_logger()

T = TypeVar("T")
R = TypeVar("R")


def derive_seed(master_seed: int, label: str, index: int = 0) -> int:
    """
    Stable 64-bit seed for (master_seed, label, index).

    The label is folded to crc32 and used with the index as the spawn key of
    a numpy SeedSequence rooted at master_seed; the first 64-bit word of its
    state is the seed. This mapping is part of the reproduction contract and
    must not change.
    """
    if master_seed < 0:
        raise ParameterError("seed", f"must be non-negative, got {master_seed}")
    if index < 0:
        raise ParameterError("index", f"must be non-negative, got {index}")
    seq = np.random.SeedSequence(master_seed, spawn_key=(zlib.crc32(label.encode()), index))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def derive_rng(master_seed: int, label: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, label, index))


def blocks(total: int, block_size: int) -> List[Tuple[int, int]]:
    """Split `total` items into (start, stop) ranges of a fixed size."""
    if block_size < 1:
        raise ParameterError("block_size", "must be positive")
    return [(start, min(start + block_size, total)) for start in range(0, total, block_size)]


class Engine:
    """Owns the worker count and runs independent tasks in order."""

    def __init__(self, threads: int = 1):
        self.threads = threads

    def configure(self, threads: int) -> None:
        if threads < 1:
            raise ParameterError("threads", f"must be at least 1, got {threads}")
        self.threads = threads

    def map(self, fn: Callable[[T], R], tasks: Iterable[T]) -> List[R]:
        """Apply fn to every task; results keep task order."""
        tasks = list(tasks)
        start = time.monotonic()
        if self.threads == 1 or len(tasks) < 2:
            results = [fn(t) for t in tasks]
        else:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                results = list(pool.map(fn, tasks))
        log.debug("engine.map", tasks=len(tasks), threads=self.threads,
                  seconds=round(time.monotonic() - start, 3))
        return results

    def monte_carlo(
        self,
        fn: Callable[[np.random.Generator, int], R],
        trials: int,
        master_seed: int,
        label: str,
        block_size: int = 100_000,
    ) -> List[R]:
        """
        Run fn(rng, n) over fixed-size trial blocks.
        Block b draws from derive_seed(master_seed, label, b).
        """
        if trials < 1:
            raise ParameterError("trials", f"must be at least 1, got {trials}")
        spans: Sequence[Tuple[int, int]] = blocks(trials, block_size)

        def run_block(item: Tuple[int, Tuple[int, int]]) -> R:
            index, (lo, hi) = item
            return fn(derive_rng(master_seed, label, index), hi - lo)

        return self.map(run_block, enumerate(spans))


# Singleton
engine = Engine()
