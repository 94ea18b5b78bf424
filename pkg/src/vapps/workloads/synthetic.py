"""Random Get/Inc traffic over a small dense table, for consistency sweeps."""

from __future__ import annotations

import random
from typing import Dict

from ..core import DENSE, WorkerId
from ..policy import ConsistencyPolicy
from ..topology import TableSpec, Topology

TABLE = 0


def worker_rng(seed: int, worker: WorkerId, salt: str = "") -> random.Random:
    # String seeds hash through SHA-512, so this is stable across runs and platforms.
    return random.Random(f"{salt}:{seed}:{worker.process_id}:{worker.thread_id}")


def inc_tables(policy: ConsistencyPolicy, rows: int = 2, cols: int = 2) -> Dict[int, TableSpec]:
    return {TABLE: TableSpec(TABLE, policy, DENSE, cols)}


def inc_programs(topology: Topology, seed: int, *, rows: int = 2, cols: int = 2,
                 clocks: int = 3, ops_per_clock: int = 6, read_fraction: float = 0.4,
                 u: float = 1.0):
    """One program per worker: ``clocks`` rounds of random Gets and Incs, then Clock."""

    def make(worker: WorkerId):
        def program(api):
            rng = worker_rng(seed, worker, "inc")
            reads = 0
            for _ in range(clocks):
                for _ in range(ops_per_clock):
                    r, c = rng.randrange(rows), rng.randrange(cols)
                    if rng.random() < read_fraction:
                        yield from api.get(TABLE, r, c)
                        reads += 1
                    else:
                        yield from api.inc(TABLE, r, c, rng.uniform(-u, u))
                yield from api.clock()
            return reads
        return program

    return {w: make(w) for w in topology.workers}
