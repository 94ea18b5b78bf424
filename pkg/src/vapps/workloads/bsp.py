"""Phased read/write workload and its serial bulk-synchronous reference.

Even clocks read every parameter; odd clocks write deltas computed from
those reads. With zero staleness every read phase must observe exactly the
updates of all earlier write phases, so the run must match a serial
executor that performs the rounds one after another.
"""

from __future__ import annotations

import math
from collections import defaultdict
from typing import Dict, List, Sequence

from ..core import DENSE, ParamKey, WorkerId
from ..policy import ConsistencyPolicy, Model
from ..topology import TableSpec, Topology
from .synthetic import worker_rng

TABLE = 0


def bsp_tables(rows: int, cols: int, u: float = 1e9) -> Dict[int, TableSpec]:
    return {TABLE: TableSpec(TABLE, ConsistencyPolicy(Model.CAP, u, staleness_s=0), DENSE, cols)}


def _deltas(rng, reads: Dict[ParamKey, float]):
    total = math.fsum(reads.values())
    out = []
    for i, key in enumerate(sorted(reads)):
        if rng.random() < 0.7:
            out.append((key, 0.3 * math.sin(total + i) + rng.uniform(-1.0, 1.0)))
    return out


def phased_programs(topology: Topology, seed: int, rounds: int, rows: int, cols: int):
    def make(worker: WorkerId):
        def program(api):
            rng = worker_rng(seed, worker, "bsp")
            for _ in range(rounds):
                reads = {}
                for r in range(rows):
                    row = yield from api.get_row(TABLE, r)
                    for c, v in row.items():
                        reads[ParamKey(TABLE, r, c)] = v
                yield from api.clock()
                for key, d in _deltas(rng, reads):
                    yield from api.inc(TABLE, key.row_id, key.col_id, d)
                yield from api.clock()
        return program

    return {w: make(w) for w in topology.workers}


def serial_bsp(workers: Sequence[WorkerId], seed: int, rounds: int, rows: int, cols: int
               ) -> List[Dict[ParamKey, float]]:
    """State after each round, computed one round at a time with exact sums."""
    state: Dict[ParamKey, List[float]] = defaultdict(list)
    keys = [ParamKey(TABLE, r, c) for r in range(rows) for c in range(cols)]
    rngs = {w: worker_rng(seed, w, "bsp") for w in workers}
    history = []
    for _ in range(rounds):
        reads = {k: math.fsum(state[k]) for k in keys}
        for w in sorted(workers):
            for key, d in _deltas(rngs[w], reads):
                state[key].append(d)
        history.append({k: math.fsum(state[k]) for k in keys})
    return history


class MasterSnapshots:
    """Records each shard's master state whenever its global minimum clock advances."""

    def __init__(self):
        self.by_shard: Dict[int, Dict[int, Dict[ParamKey, float]]] = defaultdict(dict)

    def server_min_advanced(self, server, new_min: int) -> None:
        self.by_shard[server.shard_id][new_min] = server.master_snapshot()

    def after_round(self, rnd: int, rows: int, cols: int, num_shards: int) -> Dict[ParamKey, float]:
        """Combined master state once round ``rnd`` (0-based) has been written.

        Round r writes at clock 2r+1; the next read phase starts at 2r+2.
        """
        clock = 2 * rnd + 2
        merged: Dict[ParamKey, float] = {}
        for s in range(num_shards):
            merged.update(self.by_shard[s].get(clock, {}))
        return {ParamKey(TABLE, r, c): merged.get(ParamKey(TABLE, r, c), 0.0)
                for r in range(rows) for c in range(cols)}
