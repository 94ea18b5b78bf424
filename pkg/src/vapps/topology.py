"""Deployment layout: which workers live in which process, which shard owns a row."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

from .core import DENSE, ParamTable, WorkerId
from .errors import ConfigError
from .policy import ConsistencyPolicy

# Odd prime multiplier keeps rows of different tables from landing in lockstep.
_TABLE_STRIDE = 1000003


def partition(table_id: int, row_id: int, num_shards: int) -> int:
    if num_shards < 1:
        raise ValueError("num_shards must be >= 1")
    return (table_id * _TABLE_STRIDE + row_id) % num_shards


@dataclass(frozen=True)
class TableSpec:
    table_id: int
    policy: ConsistencyPolicy
    row_kind: str = DENSE
    row_length: Optional[int] = None

    def new_table(self) -> ParamTable:
        return ParamTable(self.table_id, self.row_kind, self.row_length)


@dataclass
class Topology:
    num_shards: int
    processes: Dict[int, List[WorkerId]] = field(default_factory=dict)

    @classmethod
    def uniform(cls, num_processes: int, threads_per_process: int, num_shards: int = 1) -> "Topology":
        procs = {p: [WorkerId(p, t) for t in range(threads_per_process)] for p in range(num_processes)}
        return cls(num_shards, procs)

    def __post_init__(self):
        if self.num_shards < 1:
            raise ConfigError("need at least one server shard")
        seen = set()
        for p, ws in self.processes.items():
            for w in ws:
                if w.process_id != p or w in seen:
                    raise ConfigError(f"worker {w} misplaced or duplicated")
                seen.add(w)
        self._required: Dict[WorkerId, List[int]] = {}

    @property
    def workers(self) -> List[WorkerId]:
        return sorted(w for ws in self.processes.values() for w in ws)

    @property
    def P(self) -> int:
        return len(self.workers)

    def process_of(self) -> Dict[WorkerId, int]:
        return {w: w.process_id for w in self.workers}

    def shard_of(self, table_id: int, row_id: int) -> int:
        return partition(table_id, row_id, self.num_shards)

    def required(self, origin: WorkerId) -> List[int]:
        """Processes that must apply an origin's updates before they count as synchronized."""
        req = self._required.get(origin)
        if req is None:
            req = self._required[origin] = sorted(
                p for p, ws in self.processes.items() if any(w != origin for w in ws))
        return req
