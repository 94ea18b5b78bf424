"""Value types shared by the client, server and simulator.

Cells store their value as a list of non-overlapping float partials
(Shewchuk's exact summation), so the value of a cell is the correctly
rounded sum of every delta ever applied to it, whatever the arrival order.
That is what lets two replicas that saw the same multiset of updates agree
bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Union

from .errors import ContractViolation


class _Key(NamedTuple):
    table_id: int
    row_id: int
    col_id: int


class ParamKey(_Key):
    """(table, row, col) address of one parameter. Orders lexicographically."""

    __slots__ = ()

    def __new__(cls, table_id: int, row_id: int, col_id: int):
        if table_id < 0 or row_id < 0 or col_id < 0:
            raise ValueError(f"negative id in key ({table_id}, {row_id}, {col_id})")
        return super().__new__(cls, table_id, row_id, col_id)

    @property
    def row(self):
        return (self.table_id, self.row_id)


class _Worker(NamedTuple):
    process_id: int
    thread_id: int


class WorkerId(_Worker):
    __slots__ = ()

    def __new__(cls, process_id: int, thread_id: int):
        if process_id < 0 or thread_id < 0:
            raise ValueError(f"negative worker id ({process_id}, {thread_id})")
        return super().__new__(cls, process_id, thread_id)

    def __str__(self) -> str:
        return f"w{self.process_id}.{self.thread_id}"


@dataclass(frozen=True)
class UpdateRecord:
    origin: WorkerId
    seq: int
    clock: int
    key: ParamKey
    delta: float

    def __post_init__(self):
        if self.seq < 1:
            raise ContractViolation(f"seq must start at 1, got {self.seq}")


# -- exact accumulation -----------------------------------------------------

def grow_partials(partials: List[float], x: float) -> None:
    """Add ``x`` into ``partials`` in place, keeping the sum exact."""
    i = 0
    for y in partials:
        if abs(x) < abs(y):
            x, y = y, x
        hi = x + y
        lo = y - (hi - x)
        if lo:
            partials[i] = lo
            i += 1
        x = hi
    partials[i:] = [x]


def exact_partials(values: Iterable[float]) -> List[float]:
    partials: List[float] = []
    for v in values:
        grow_partials(partials, v)
    return partials


def exact_sum(values: Iterable[float]) -> float:
    return math.fsum(values)


# -- vector clock -----------------------------------------------------------

class VectorClock:
    """Clock per participant; ``min()`` is the progress of the group."""

    def __init__(self, participants: Iterable = ()):
        self.entries: Dict = {p: 0 for p in participants}

    def register(self, pid, value: int = 0) -> None:
        if pid in self.entries:
            raise ContractViolation(f"{pid!r} already registered")
        self.entries[pid] = value

    def tick(self, pid) -> int:
        if pid not in self.entries:
            raise ContractViolation(f"unknown clock participant {pid!r}")
        self.entries[pid] += 1
        return self.entries[pid]

    def advance_to(self, pid, value: int) -> bool:
        """Raise ``pid`` to ``value``; returns True if the entry changed."""
        old = self.entries.get(pid)
        if old is None:
            raise ContractViolation(f"unknown clock participant {pid!r}")
        if value < old:
            raise ContractViolation(f"clock of {pid!r} regressed {old} -> {value}")
        self.entries[pid] = value
        return value != old

    def get(self, pid) -> int:
        return self.entries[pid]

    def min(self) -> int:
        if not self.entries:
            raise ContractViolation("min() of an empty vector clock")
        return min(self.entries.values())

    def __contains__(self, pid) -> bool:
        return pid in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def __repr__(self) -> str:
        return f"VectorClock({self.entries!r})"


def vclock_tick(vc: VectorClock, pid) -> int:
    return vc.tick(pid)


def vclock_min(vc: VectorClock) -> int:
    return vc.min()


# -- tables -------------------------------------------------------------------

DENSE = "dense"
SPARSE = "sparse"


class ParamTable:
    """Rows of exactly-accumulated cells.

    Dense rows are fixed-length lists of partial lists; sparse rows map
    col_id to a partial list. Absent cells read as 0.0.
    """

    def __init__(self, table_id: int, row_kind: str = DENSE, row_length: Optional[int] = None):
        if row_kind not in (DENSE, SPARSE):
            raise ValueError(f"row_kind must be dense or sparse, not {row_kind!r}")
        if row_kind == DENSE and (row_length is None or row_length < 1):
            raise ValueError("dense tables need a positive row_length")
        self.table_id = table_id
        self.row_kind = row_kind
        self.row_length = row_length
        self.rows: Dict[int, Union[List[List[float]], Dict[int, List[float]]]] = {}

    def _check_col(self, col_id: int) -> None:
        if self.row_kind == DENSE and not 0 <= col_id < self.row_length:
            raise IndexError(f"col {col_id} outside dense row of length {self.row_length}")

    def _cell(self, row_id: int, col_id: int, create: bool) -> Optional[List[float]]:
        row = self.rows.get(row_id)
        if row is None:
            if not create:
                return None
            row = [[] for _ in range(self.row_length)] if self.row_kind == DENSE else {}
            self.rows[row_id] = row
        if self.row_kind == DENSE:
            return row[col_id]
        cell = row.get(col_id)
        if cell is None and create:
            cell = row[col_id] = []
        return cell

    def apply(self, row_id: int, col_id: int, delta: float) -> float:
        self._check_col(col_id)
        cell = self._cell(row_id, col_id, True)
        grow_partials(cell, delta)
        return math.fsum(cell)

    def apply_partials(self, row_id: int, col_id: int, partials: Sequence[float]) -> None:
        self._check_col(col_id)
        cell = self._cell(row_id, col_id, True)
        for x in partials:
            grow_partials(cell, x)

    def partials(self, row_id: int, col_id: int) -> List[float]:
        self._check_col(col_id)
        cell = self._cell(row_id, col_id, False)
        return list(cell) if cell else []

    def get(self, row_id: int, col_id: int) -> float:
        self._check_col(col_id)
        cell = self._cell(row_id, col_id, False)
        return math.fsum(cell) if cell else 0.0

    def columns(self, row_id: int) -> List[int]:
        if self.row_kind == DENSE:
            return list(range(self.row_length))
        return sorted(self.rows.get(row_id, {}))

    def get_row(self, row_id: int) -> Dict[int, float]:
        return {c: self.get(row_id, c) for c in self.columns(row_id)}

    def keys(self) -> List[ParamKey]:
        out = []
        for r in sorted(self.rows):
            for c in self.columns(r):
                out.append(ParamKey(self.table_id, r, c))
        return out

    def snapshot(self) -> Dict[ParamKey, float]:
        return {k: self.get(k.row_id, k.col_id) for k in self.keys()}


def apply_delta(table: ParamTable, key: ParamKey, delta: float) -> float:
    if key.table_id != table.table_id:
        raise ContractViolation(f"key {key} does not belong to table {table.table_id}")
    return table.apply(key.row_id, key.col_id, delta)


def coalesce(updates: Sequence[UpdateRecord]) -> float:
    """Sum the deltas of updates that all target one key (left-to-right fold)."""
    total = 0.0
    if not updates:
        return total
    key = updates[0].key
    for u in updates:
        if u.key != key:
            raise ContractViolation(f"coalesce over mixed keys {key} and {u.key}")
        total += u.delta
    return total
