"""Omniscient update ledger for simulated runs.

The ledger is deliberately independent of the protocol's own bookkeeping:
it records every issued update with the set of processes that have applied
it, and recomputes every worker's view from scratch. Checks run whenever a
view can change (an Inc is issued or a chunk is applied), which covers
every scheduler step.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Mapping, Optional, Set, Tuple

from .core import ParamKey, UpdateRecord, WorkerId
from .errors import BoundViolation
from .topology import TableSpec, Topology


class _Rec:
    __slots__ = ("origin", "seq", "clock", "key", "delta", "seen_by")

    def __init__(self, r: UpdateRecord):
        self.origin, self.seq, self.clock, self.key, self.delta = r.origin, r.seq, r.clock, r.key, r.delta
        self.seen_by: Set[int] = set()


@dataclass
class Violation:
    kind: str
    detail: str


@dataclass
class AuditSummary:
    checks: Dict[str, int] = field(default_factory=lambda: defaultdict(int))
    violations: List[Violation] = field(default_factory=list)
    max_divergence: float = 0.0
    max_divergence_ratio: float = 0.0  # divergence / model bound
    max_view_error_ratio: float = 0.0      # divergence / 2v(P-1)
    view_error_exceeded: int = 0
    max_unsynced: float = 0.0
    max_half_synced: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.violations


class Ledger:
    def __init__(self, topology: Topology, tables: Mapping[int, TableSpec], *,
                 check_divergence: bool = True, raise_on_violation: bool = False,
                 max_violations: int = 50):
        self.topology = topology
        self.tables = dict(tables)
        self.workers = topology.workers
        self.P = len(self.workers)
        self.check_divergence = check_divergence
        self.raise_on_violation = raise_on_violation
        self.max_violations = max_violations
        self.open_by_key: Dict[ParamKey, List[_Rec]] = defaultdict(list)
        self.open_by_origin: Dict[WorkerId, List[_Rec]] = defaultdict(list)
        self.base: Dict[ParamKey, List[float]] = defaultdict(list)
        self.all_deltas: Dict[ParamKey, List[float]] = defaultdict(list)
        self.marks: Dict[Tuple[int, int, WorkerId], int] = defaultdict(int)
        self.summary = AuditSummary()

    # -- helpers ------------------------------------------------------------

    def _fail(self, kind: str, detail: str) -> None:
        if len(self.summary.violations) < self.max_violations:
            self.summary.violations.append(Violation(kind, detail))
        if self.raise_on_violation:
            raise BoundViolation(f"{kind}: {detail}")

    def visible(self, worker: WorkerId, rec: _Rec) -> bool:
        return rec.origin == worker or worker.process_id in rec.seen_by

    def view(self, worker: WorkerId, key: ParamKey) -> float:
        vals = list(self.base.get(key, ()))
        vals.extend(r.delta for r in self.open_by_key.get(key, ()) if self.visible(worker, r))
        return math.fsum(vals)

    def open_records(self, key: ParamKey) -> List[_Rec]:
        return list(self.open_by_key.get(key, ()))

    def _is_global(self, rec: _Rec) -> bool:
        return all(p in rec.seen_by for p in self.topology.required(rec.origin))

    def _retire(self, recs: List[_Rec]) -> None:
        for r in recs:
            self.open_by_key[r.key].remove(r)
            if not self.open_by_key[r.key]:
                del self.open_by_key[r.key]
            self.open_by_origin[r.origin].remove(r)
            self.base[r.key].append(r.delta)

    # -- hooks --------------------------------------------------------------

    def on_issue(self, client, rec: UpdateRecord) -> None:
        r = _Rec(rec)
        self.all_deltas[rec.key].append(rec.delta)
        if self._is_global(r):
            self.base[rec.key].append(rec.delta)
        else:
            self.open_by_key[rec.key].append(r)
            self.open_by_origin[rec.origin].append(r)
        self._check_key(rec.key)

    def on_apply(self, client, shard: int, chunk) -> None:
        proc = client.proc_id
        mk = (proc, shard, chunk.origin)
        self.summary.checks["fifo"] += 1
        if chunk.first_seq != self.marks[mk] + 1:
            self._fail("fifo", f"process {proc} shard {shard}: {chunk.origin} jumped "
                               f"{self.marks[mk]} -> {chunk.first_seq}")
        self.marks[mk] = chunk.last_seq
        touched, done = set(), []
        for r in self.open_by_origin.get(chunk.origin, ()):
            if r.seq > chunk.last_seq:
                break
            if self.topology.shard_of(r.key.table_id, r.key.row_id) != shard or r.seq < chunk.first_seq:
                continue
            r.seen_by.add(proc)
            touched.add(r.key)
            if self._is_global(r):
                done.append(r)
        self._retire(done)
        for key in sorted(touched):
            self._check_key(key)

    def on_get(self, client, worker: WorkerId, key: ParamKey, value: float, clock: int) -> None:
        s = self.summary
        s.checks["read_my_writes"] += 1
        expect = self.view(worker, key)
        if value != expect:
            self._fail("read_my_writes", f"{worker} read {value!r} on {key}, ledger view {expect!r}")
        policy = self.tables[key.table_id].policy
        if policy.model.uses_clock:
            s.checks["staleness"] += 1
            need = clock - policy.staleness_s - 1
            for r in self.open_by_key.get(key, ()):
                if r.origin != worker and r.clock <= need and not self.visible(worker, r):
                    self._fail("staleness", f"{worker} at clock {clock} misses {r.origin}#{r.seq} "
                                            f"(clock {r.clock}) on {key}")

    def on_clock(self, client, worker: WorkerId, clock: int) -> None:
        pass

    def on_flush(self, client, worker: WorkerId, first: int, last: int) -> None:
        pass

    def server_min_advanced(self, server, new_min: int) -> None:
        pass

    # -- value-bound checks -------------------------------------------------

    def _check_key(self, key: ParamKey) -> None:
        policy = self.tables[key.table_id].policy
        if not policy.model.uses_value:
            return
        s = self.summary
        recs = self.open_by_key.get(key, ())
        # Bounds are evaluated at the slowest writer's clock, which is the
        # loosest bound any record still open on this key was admitted under.
        at = min((r.clock for r in recs), default=0)
        v = policy.value_bound(at)
        m = policy.half_sync_bound(at)
        per_origin: Dict[WorkerId, List[float]] = defaultdict(list)
        half = []
        for r in recs:
            per_origin[r.origin].append(r.delta)
            if any(p in r.seen_by for p in self.topology.required(r.origin)):
                half.append(abs(r.delta))
        s.checks["unsynced"] += 1
        for origin, deltas in per_origin.items():
            signed = abs(math.fsum(deltas))
            mag = math.fsum(abs(d) for d in deltas)
            s.max_unsynced = max(s.max_unsynced, signed)
            limit = v if len(deltas) > 1 else max(v, policy.magnitude_cap_u)
            if signed > limit:
                self._fail("unsynced", f"{origin} unsynced {signed!r} > {limit} on {key}")
            if policy.vap_mode == "magnitude" and mag > limit:
                self._fail("unsynced", f"{origin} unsynced magnitude {mag!r} > {limit} on {key}")
        if policy.model.strong:
            s.checks["half_synced"] += 1
            h = math.fsum(half)
            s.max_half_synced = max(s.max_half_synced, h)
            if h > m:
                self._fail("half_synced", f"half-synchronized magnitude {h!r} > {m} on {key}")
        if self.check_divergence:
            self._check_divergence(key, policy, recs, v, m)

    def _check_divergence(self, key, policy, recs, v, m) -> None:
        s = self.summary
        s.checks["divergence"] += 1
        offsets = []
        for w in self.workers:
            offsets.append(math.fsum(r.delta for r in recs if self.visible(w, r)))
        worst = max(offsets) - min(offsets) if offsets else 0.0
        bound = 2 * m if policy.model.strong else m * self.P
        s.max_divergence = max(s.max_divergence, worst)
        if bound > 0:
            s.max_divergence_ratio = max(s.max_divergence_ratio, worst / bound)
        if worst > bound:
            self._fail("divergence", f"views differ by {worst!r} > {bound} on {key} "
                                     f"({policy.model.value})")
        err_bound = 2 * v * (self.P - 1)
        if worst > err_bound:
            s.view_error_exceeded += 1
        if err_bound > 0:
            s.max_view_error_ratio = max(s.max_view_error_ratio, worst / err_bound)
        elif worst > 0:
            s.max_view_error_ratio = math.inf

    # -- quiescence ---------------------------------------------------------

    def expected_totals(self) -> Dict[ParamKey, float]:
        return {k: math.fsum(v) for k, v in sorted(self.all_deltas.items())}

    def pairwise_divergence(self, key: ParamKey) -> Tuple[float, Optional[Tuple[WorkerId, WorkerId]]]:
        worst, pair = 0.0, None
        views = {w: self.view(w, key) for w in self.workers}
        for a, b in combinations(self.workers, 2):
            d = abs(views[a] - views[b])
            if d > worst:
                worst, pair = d, (a, b)
        return worst, pair
