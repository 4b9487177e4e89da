"""Counter-based random streams for reproducible parallel Monte Carlo.

Replicates are laid out in fixed-width blocks of ``BLOCK_SIZE`` lanes.  Block
``k`` of sampler family ``tag`` and experiment stream ``stream`` draws from a
Philox generator keyed by ``SeedSequence(seed, spawn_key=(tag, stream, k))``,
and every block is always simulated at full width.  A replicate's draws
therefore depend only on ``(seed, tag, stream, replicate index)``, never on
how many replicates were requested or how blocks were spread over workers.
"""

from __future__ import annotations

import secrets
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

import numpy as np

from .errors import ParameterError

BLOCK_SIZE = 512

SKELETON = 0
LIMIT = 1
ENDPOINT = 2

MAX_SEED = 2**64 - 1


def check_seed(seed: int) -> int:
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)) or not 0 <= int(seed) <= MAX_SEED:
        raise ParameterError(f"seed must be an integer in [0, 2**64), got {seed!r}")
    return int(seed)


def draw_seed() -> int:
    return secrets.randbits(64)


def block_generator(seed: int, tag: int, block: int, stream: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=(tag, stream, block))
    return np.random.Generator(np.random.Philox(ss))


def n_blocks(replicates: int) -> int:
    return -(-replicates // BLOCK_SIZE)


def locate(replicate: int) -> tuple[int, int]:
    """(block, lane) holding a replicate index."""
    return divmod(replicate, BLOCK_SIZE)


def map_blocks(fn: Callable, tasks: Sequence, workers: int = 1) -> list:
    """Apply ``fn`` to every task, preserving task order in the result."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(fn, tasks))
