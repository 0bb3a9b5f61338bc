"""Worker-pool helper with fixed task granularity.

Tasks are realization blocks whose boundaries depend only on the
configuration, never on the worker count, and results are reduced in task
order; parallel and serial runs therefore emit identical bits.
"""

from concurrent.futures import ProcessPoolExecutor

from .noise import REAL_BLOCK


def realization_blocks(n: int) -> list[tuple[int, int]]:
    """Split [0, n) into REAL_BLOCK-aligned half-open ranges."""
    return [(r0, min(r0 + REAL_BLOCK, n)) for r0 in range(0, n, REAL_BLOCK)]


def map_blocks(fn, tasks, workers: int = 1) -> list:
    """Apply `fn` to every task, in order; `workers` > 1 uses processes."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as ex:
        return list(ex.map(fn, tasks))
