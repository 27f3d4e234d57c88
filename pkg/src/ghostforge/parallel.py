"""Thread-count policy.

``GHOSTFORGE_THREADS`` caps the worker count of every fan-out in the
package. Fan-outs only ever partition independent items and reassemble them
in index order, so the worker count never changes a result.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

from .errors import ConfigError

ENV_VAR = "GHOSTFORGE_THREADS"

T = TypeVar("T")
R = TypeVar("R")


def thread_count(requested: int | None = None) -> int:
    if requested is not None:
        n = requested
    else:
        raw = os.environ.get(ENV_VAR, "").strip()
        if not raw:
            return os.cpu_count() or 1
        try:
            n = int(raw)
        except ValueError:
            raise ConfigError(f"{ENV_VAR} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"thread count must be >= 1, got {n}")
    return n


def ordered_map(fn: Callable[[T], R], items: Sequence[T], threads: int | None = None) -> list[R]:
    """``[fn(x) for x in items]``, possibly computed on a thread pool."""
    workers = min(thread_count(threads), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))
