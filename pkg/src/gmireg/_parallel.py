"""Ordered process-pool map with shared read-only state.

Results come back in input order whatever the worker count, so callers can
assemble outputs deterministically. ``jobs=1`` runs inline.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Iterable, Sequence

_STATE: dict[str, Any] = {}


def default_jobs() -> int:
    return max(1, os.cpu_count() or 1)


def shared(key: str):
    return _STATE[key]


def _install(state: dict) -> None:
    _STATE.clear()
    _STATE.update(state)


def ordered_map(fn: Callable, items: Sequence, jobs: int | None = None, state: dict | None = None) -> list:
    """``[fn(x) for x in items]``, optionally across ``jobs`` processes.

    ``state`` is made available to ``fn`` through :func:`shared` in every
    worker (and inline).
    """
    items = list(items)
    jobs = default_jobs() if jobs is None else max(1, int(jobs))
    state = state or {}
    if jobs == 1 or len(items) <= 1:
        previous = dict(_STATE)
        _install(state)
        try:
            return [fn(x) for x in items]
        finally:
            _install(previous)
    with ProcessPoolExecutor(max_workers=jobs, initializer=_install, initargs=(state,)) as pool:
        return list(pool.map(fn, items))


def chunked(seq: Iterable, n_chunks: int) -> list[list]:
    seq = list(seq)
    n_chunks = max(1, min(n_chunks, len(seq)))
    size, extra = divmod(len(seq), n_chunks)
    out, start = [], 0
    for i in range(n_chunks):
        stop = start + size + (1 if i < extra else 0)
        out.append(seq[start:stop])
        start = stop
    return out
