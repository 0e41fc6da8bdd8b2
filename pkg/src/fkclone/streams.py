"""Random streams.

Every stochastic routine takes an explicit ``numpy.random.Generator``
(PCG64).  Replica ``r`` of a stream tagged ``tag`` under master seed ``s``
always draws from::

    Generator(PCG64(SeedSequence(entropy=s, spawn_key=(*tag, r))))

so results never depend on how replicas are scheduled over threads.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, a SeedSequence or an integer seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(rng))
    if rng is None:
        raise TypeError("an explicit random stream is required")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(rng))))


def replica_stream(seed: int, tag: Sequence[int], replica: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(t) for t in tag) + (int(replica),))
    return np.random.Generator(np.random.PCG64(ss))


def default_threads() -> int:
    return max(1, os.cpu_count() or 1)


def map_replicas(fn: Callable[[int], T], replicas: Iterable[int], threads: int | None = None) -> list[T]:
    """Apply ``fn`` to each replica index, preserving order.

    ``fn`` must derive its own stream from the replica index; the jitted
    kernels release the GIL so threads give real parallelism.
    """
    idx = list(replicas)
    threads = default_threads() if threads is None else int(threads)
    if threads <= 1 or len(idx) <= 1:
        return [fn(r) for r in idx]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, idx))
