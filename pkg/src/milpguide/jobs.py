"""Order-preserving map over a process pool; jobs <= 1 runs inline."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor


def pmap(fn, args: list, jobs: int = 1) -> list:
    if jobs <= 1 or len(args) <= 1:
        return [fn(a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, args))
