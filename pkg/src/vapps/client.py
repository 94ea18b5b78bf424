"""Client library: Get/Inc/Clock over a shared process cache.

API calls are generators. They yield ``OP`` once at the start of every call
(a scheduling point for the simulator) and yield a ``Wait`` whenever the
consistency controller blocks them; whoever drives the generator resumes it
once ``Wait.predicate()`` holds. The simulator and the threaded socket
driver both drive the same code.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Tuple

from .core import DENSE, ParamKey, ParamTable, UpdateRecord, VectorClock, WorkerId, exact_partials
from .errors import ConfigError, ContractViolation, ProtocolError
from .policy import (
    Model, Verdict, check_clock_advance, check_read, check_write, required_clock, write_fits,
)
from .sync import SyncTracker
from .topology import TableSpec, Topology
from .transport.messages import (
    Ack, Chunk, ClientPull, ClientPush, ClockMsg, Entry, PullReply, ServerPush, server_node,
    shard_of_node,
)

log = logging.getLogger(__name__)

OP = "op"
DEFAULT_FLUSH_THRESHOLD = 64


class Wait:
    __slots__ = ("predicate", "reason")

    def __init__(self, predicate: Callable[[], bool], reason: str):
        self.predicate = predicate
        self.reason = reason

    def __repr__(self) -> str:
        return f"Wait({self.reason!r})"


@dataclass
class ThreadCache:
    owner: WorkerId
    clock: int = 0
    next_seq: int = 1
    pending: List[UpdateRecord] = field(default_factory=list)
    # Own deltas not yet returned by the server, per key, oldest first.
    overlay: Dict[ParamKey, List[float]] = field(default_factory=dict)
    inflight: Dict[Tuple[int, int], Dict[ParamKey, int]] = field(default_factory=dict)
    blocked_ticks: int = 0


class ClientProcess:
    def __init__(self, proc_id: int, topology: Topology, tables: Mapping[int, TableSpec],
                 send: Callable[[object], None], observer=None,
                 flush_threshold: int = DEFAULT_FLUSH_THRESHOLD):
        if proc_id not in topology.processes:
            raise ConfigError(f"process {proc_id} not in topology")
        self.proc_id = proc_id
        self.topology = topology
        self.tables = dict(tables)
        self.send = send
        self.observer = observer
        self.flush_threshold = flush_threshold
        self.shards = list(range(topology.num_shards))
        self.cache: Dict[int, ParamTable] = {t: s.new_table() for t, s in self.tables.items()}
        self.applied: Dict[Tuple[int, WorkerId], int] = defaultdict(int)
        self.known_through: Dict[int, int] = {s: -1 for s in self.shards}
        self.server_min: Dict[int, int] = {s: 0 for s in self.shards}
        self.threads: Dict[WorkerId, ThreadCache] = {w: ThreadCache(w) for w in topology.processes[proc_id]}
        self.vclock = VectorClock(self.threads)
        self.reported_min = 0
        pseudo = [("shard", s) for s in self.shards]
        self.tracker = SyncTracker(lambda o: pseudo if topology.required(o) else [])
        self._outstanding_pulls: Dict[Tuple[int, int, int], int] = {}
        self._next_request = 1
        clock_s = [s.policy.staleness_s for s in self.tables.values() if s.policy.model.uses_clock]
        self.clock_staleness: Optional[int] = min(clock_s) if clock_s else None
        self._clock_policy = next((s.policy for s in self.tables.values()
                                   if s.policy.model.uses_clock
                                   and s.policy.staleness_s == self.clock_staleness), None)
        self.has_ssp = any(s.policy.model is Model.SSP for s in self.tables.values())
        self.stats = {"pushes": 0, "pulls": 0, "blocked_reads": 0, "blocked_writes": 0,
                      "blocked_clocks": 0}

    # -- lookups ------------------------------------------------------------

    def _spec(self, table_id: int) -> TableSpec:
        spec = self.tables.get(table_id)
        if spec is None:
            raise ConfigError(f"table {table_id} is not configured")
        return spec

    def _thread(self, worker: WorkerId) -> ThreadCache:
        th = self.threads.get(worker)
        if th is None:
            raise ContractViolation(f"{worker} is not registered in process {self.proc_id}")
        return th

    def global_min(self) -> int:
        return min(self.server_min.values())

    def read_value(self, worker: WorkerId, key: ParamKey) -> float:
        parts = self.cache[key.table_id].partials(key.row_id, key.col_id)
        own = self.threads[worker].overlay.get(key)
        if own:
            parts.extend(own)
        return math.fsum(parts)

    # -- Get ----------------------------------------------------------------

    def _await_coverage(self, worker: WorkerId, spec: TableSpec, row_id: int):
        th = self.threads[worker]
        policy = spec.policy
        shard = self.topology.shard_of(spec.table_id, row_id)
        probe = ParamKey(spec.table_id, row_id, 0)
        decision = check_read(policy, worker, th.clock, probe, self.known_through[shard])
        if decision.verdict is Verdict.FETCH_THEN_PROCEED:
            need = required_clock(th.clock, policy.staleness_s)
            self.stats["blocked_reads"] += 1
            self._request_pull(shard, spec.table_id, row_id, th.clock, policy.staleness_s, need)
            yield Wait(lambda: self.known_through[shard] >= need, decision.wait_condition)

    def get(self, worker: WorkerId, table_id: int, row_id: int, col_id: int):
        yield OP
        spec = self._spec(table_id)
        self._thread(worker)
        key = ParamKey(table_id, row_id, col_id)
        yield from self._await_coverage(worker, spec, row_id)
        value = self.read_value(worker, key)
        if self.observer is not None:
            self.observer.on_get(self, worker, key, value, self.threads[worker].clock)
        return value

    def get_row(self, worker: WorkerId, table_id: int, row_id: int):
        """Batched Get of every column of a row; returns {col: value}."""
        yield OP
        spec = self._spec(table_id)
        self._thread(worker)
        yield from self._await_coverage(worker, spec, row_id)
        table = self.cache[table_id]
        clock = self.threads[worker].clock
        if self.observer is None and spec.row_kind == DENSE:
            return self._dense_row(worker, table, row_id)
        cols = table.columns(row_id)
        if spec.row_kind != DENSE:
            cols = sorted(set(cols) | {k.col_id for k in self.threads[worker].overlay
                                       if k.table_id == table_id and k.row_id == row_id})
        out = {}
        for c in cols:
            key = ParamKey(table_id, row_id, c)
            out[c] = v = self.read_value(worker, key)
            if self.observer is not None:
                self.observer.on_get(self, worker, key, v, clock)
        return out

    def _dense_row(self, worker: WorkerId, table: ParamTable, row_id: int) -> Dict[int, float]:
        # Plain tuples hash and compare equal to ParamKey, which saves building keys.
        cells = table.rows.get(row_id)
        overlay = self.threads[worker].overlay
        fsum = math.fsum
        out = {}
        for c in range(table.row_length):
            parts = cells[c] if cells is not None else ()
            own = overlay.get((table.table_id, row_id, c)) if overlay else None
            out[c] = fsum([*parts, *own]) if own else fsum(parts)
        return out

    def _request_pull(self, shard: int, table_id: int, row_id: int, clock: int, s: int, need: int) -> None:
        k = (shard, table_id, row_id)
        if self._outstanding_pulls.get(k, -2) >= need:
            return
        self._outstanding_pulls[k] = need
        self.stats["pulls"] += 1
        rid = self._next_request
        self._next_request += 1
        self.send(ClientPull(self.proc_id, server_node(shard), table_id, row_id, clock, s, rid))

    # -- Inc ----------------------------------------------------------------

    def _write_ok(self, worker: WorkerId, key: ParamKey, delta: float, policy) -> bool:
        if not self.tracker.has_unsynced(worker, key):
            return True
        return write_fits(policy, delta, self.tracker.unsynced_sum(worker, key, policy.vap_mode),
                          self.threads[worker].clock)

    def inc(self, worker: WorkerId, table_id: int, row_id: int, col_id: int, delta: float):
        yield OP
        spec = self._spec(table_id)
        th = self._thread(worker)
        key = ParamKey(table_id, row_id, col_id)
        if spec.row_kind == DENSE and not 0 <= col_id < spec.row_length:
            raise IndexError(f"col {col_id} outside dense row of length {spec.row_length}")
        policy = spec.policy
        delta = float(delta)
        while True:
            decision = check_write(
                policy, worker, key, delta,
                self.tracker.unsynced_sum(worker, key, policy.vap_mode),
                unsynced_empty=not self.tracker.has_unsynced(worker, key), clock=th.clock)
            if decision.verdict is not Verdict.BLOCK:
                break
            self.stats["blocked_writes"] += 1
            self.flush_now(worker, drain=True)
            yield Wait(lambda: self._write_ok(worker, key, delta, policy), decision.wait_condition)
        rec = UpdateRecord(worker, th.next_seq, th.clock, key, delta)
        th.next_seq += 1
        th.pending.append(rec)
        th.overlay.setdefault(key, []).append(delta)
        self.tracker.record_issue(worker, rec)
        if self.observer is not None:
            self.observer.on_issue(self, rec)
        if len(th.pending) >= self.flush_threshold:
            self.flush_now(worker)

    # -- Clock --------------------------------------------------------------

    def clock(self, worker: WorkerId):
        yield OP
        th = self._thread(worker)
        self.flush_now(worker, force=True)
        old = th.clock
        th.clock = self.vclock.tick(worker)
        if self.observer is not None:
            self.observer.on_clock(self, worker, th.clock)
        pmin = self.vclock.min()
        if pmin > self.reported_min:
            self.reported_min = pmin
            for s in self.shards:
                self.send(ClockMsg(self.proc_id, server_node(s), pmin))
        if self._clock_policy is not None:
            new = th.clock
            decision = check_clock_advance(self._clock_policy, worker, new, self.global_min(), old)
            if decision.verdict is Verdict.BLOCK:
                self.stats["blocked_clocks"] += 1
                s = self.clock_staleness
                yield Wait(lambda: new - self.global_min() <= s, decision.wait_condition)
        return th.clock

    # -- flush --------------------------------------------------------------

    def flush(self, worker: WorkerId):
        yield OP
        self._thread(worker)
        self.flush_now(worker)

    def can_flush_async(self, worker: WorkerId) -> bool:
        th = self.threads[worker]
        return bool(th.pending) and not self.has_ssp

    def flush_now(self, worker: WorkerId, force: bool = False, drain: bool = False) -> bool:
        """Push the thread's pending writes. Under SSP only clock() (force) pushes."""
        th = self.threads[worker]
        if not th.pending:
            return False
        if self.has_ssp and not force:
            return False
        by_key: Dict[ParamKey, List[float]] = {}
        for rec in th.pending:
            by_key.setdefault(rec.key, []).append(rec.delta)
        first, last = th.pending[0].seq, th.pending[-1].seq
        per_shard: Dict[int, List[Entry]] = {s: [] for s in self.shards}
        for key in sorted(by_key):
            deltas = by_key[key]
            shard = self.topology.shard_of(key.table_id, key.row_id)
            per_shard[shard].append(Entry(key, tuple(exact_partials(deltas)),
                                          math.fsum(abs(d) for d in deltas)))
            th.inflight.setdefault((shard, last), {})[key] = len(deltas)
        for s in self.shards:
            chunk = Chunk(worker, first, last, th.clock, tuple(per_shard[s]))
            self.send(ClientPush(self.proc_id, server_node(s), (chunk,)))
        th.pending.clear()
        self.stats["pushes"] += 1
        if self.observer is not None:
            self.observer.on_flush(self, worker, first, last)
        return True

    # -- incoming -----------------------------------------------------------

    def handle(self, msg) -> None:
        if isinstance(msg, ServerPush):
            self.apply_server_push(msg)
        elif isinstance(msg, PullReply):
            self._on_pull_reply(msg)
        elif isinstance(msg, Ack):
            shard = shard_of_node(msg.sender)
            for origin, mark in msg.marks:
                self.tracker.record_ack(("shard", shard), origin, mark)
        elif isinstance(msg, ClockMsg):
            shard = shard_of_node(msg.sender)
            self.server_min[shard] = max(self.server_min[shard], msg.clock)
        else:
            raise ProtocolError(f"client cannot handle {type(msg).__name__}")

    def apply_server_push(self, msg: ServerPush) -> Dict[WorkerId, int]:
        shard = shard_of_node(msg.sender)
        expect: Dict[WorkerId, int] = {}
        for ch in msg.chunks:
            prev = expect.get(ch.origin, self.applied[(shard, ch.origin)])
            if ch.first_seq != prev + 1:
                raise ProtocolError(
                    f"process {self.proc_id}: {ch.origin} chunk starts at {ch.first_seq} after {prev}")
            expect[ch.origin] = ch.last_seq
        marks = {}
        for ch in msg.chunks:
            for e in ch.entries:
                self.cache[e.key.table_id].apply_partials(e.key.row_id, e.key.col_id, e.partials)
            th = self.threads.get(ch.origin)
            if th is not None:
                for key, n in th.inflight.pop((shard, ch.last_seq), {}).items():
                    rest = th.overlay[key][n:]
                    if rest:
                        th.overlay[key] = rest
                    else:
                        del th.overlay[key]
            self.applied[(shard, ch.origin)] = ch.last_seq
            marks[ch.origin] = ch.last_seq
            if self.observer is not None:
                self.observer.on_apply(self, shard, ch)
        self.known_through[shard] = max(self.known_through[shard], msg.known_through)
        if marks:
            self.send(Ack(self.proc_id, msg.sender, tuple(sorted(marks.items()))))
        return marks

    def _on_pull_reply(self, msg: PullReply) -> None:
        shard = shard_of_node(msg.sender)
        self.known_through[shard] = max(self.known_through[shard], msg.known_through)
        k = (shard, msg.table_id, msg.row_id)
        if self._outstanding_pulls.get(k, -2) <= msg.known_through:
            self._outstanding_pulls.pop(k, None)
        table = self.cache[msg.table_id]
        for col, value in msg.values:
            if table.get(msg.row_id, col) != value:
                raise ProtocolError(
                    f"pull reply for ({msg.table_id}, {msg.row_id}, {col}) disagrees with cache")

    # -- inspection ---------------------------------------------------------

    def quiescent(self) -> bool:
        return all(not th.pending and not th.inflight for th in self.threads.values())


class WorkerApi:
    """Binds a worker id to its process so programs can ``yield from api.get(...)``."""

    def __init__(self, client: ClientProcess, worker: WorkerId):
        self.client = client
        self.worker = worker

    def get(self, table_id: int, row_id: int, col_id: int):
        return self.client.get(self.worker, table_id, row_id, col_id)

    def get_row(self, table_id: int, row_id: int):
        return self.client.get_row(self.worker, table_id, row_id)

    def inc(self, table_id: int, row_id: int, col_id: int, delta: float):
        return self.client.inc(self.worker, table_id, row_id, col_id, delta)

    def clock(self):
        return self.client.clock(self.worker)

    def flush(self):
        return self.client.flush(self.worker)

    @property
    def current_clock(self) -> int:
        return self.client.threads[self.worker].clock
