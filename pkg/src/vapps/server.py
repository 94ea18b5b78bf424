"""Server shard: master rows, process vector clock, prioritized server push."""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Callable, Deque, Dict, List, Mapping, Optional

from .core import ParamKey, ParamTable, VectorClock, WorkerId
from .errors import ProtocolError
from .policy import gate_propagation
from .sync import SyncTracker
from .topology import TableSpec, Topology, partition
from .transport.messages import (
    Ack, Chunk, ClientPull, ClientPush, ClockMsg, PullReply, ServerPush, server_node,
)

log = logging.getLogger(__name__)

DEFAULT_BATCH_SIZE = 128


@dataclass
class _ParkedPull:
    proc: int
    msg: ClientPull


class ServerShard:
    """One shard's event loop body. ``send(msg)`` hands a message to the transport.

    Behaviour is a deterministic function of the order in which ``handle``
    is called.
    """

    def __init__(self, shard_id: int, topology: Topology, tables: Mapping[int, TableSpec],
                 send: Callable[[object], None], batch_size: int = DEFAULT_BATCH_SIZE,
                 observer=None):
        self.shard_id = shard_id
        self.node = server_node(shard_id)
        self.topology = topology
        self.tables = dict(tables)
        self.send = send
        self.batch_size = batch_size
        self.observer = observer
        self.master: Dict[int, ParamTable] = {t: spec.new_table() for t, spec in self.tables.items()}
        self.vclock = VectorClock(sorted(topology.processes))
        self.tracker = SyncTracker(topology.required)
        self.queues: Dict[int, Dict[WorkerId, Deque[Chunk]]] = {p: {} for p in topology.processes}
        self.parked: List[_ParkedPull] = []
        self.announced_min = 0
        self.stats = {"pushes_in": 0, "pushes_out": 0, "pulls": 0, "gated": 0}

    # -- helpers ------------------------------------------------------------

    def owns(self, table_id: int, row_id: int) -> bool:
        return partition(table_id, row_id, self.topology.num_shards) == self.shard_id

    def known_through(self, dest: int) -> int:
        """Largest clock c such that ``dest`` has been sent every update stamped <= c."""
        kt = self.vclock.min() - 1
        for q in self.queues[dest].values():
            if q:
                kt = min(kt, q[0].clock - 1)
        return kt

    def _policy(self, key: ParamKey):
        return self.tables[key.table_id].policy

    # -- dispatch -----------------------------------------------------------

    def handle(self, msg) -> None:
        if isinstance(msg, ClientPush):
            self.handle_client_push(msg)
        elif isinstance(msg, ClientPull):
            self.handle_client_pull(msg)
        elif isinstance(msg, ClockMsg):
            self.handle_clock_message(msg.sender, msg.clock)
        elif isinstance(msg, Ack):
            self.handle_ack(msg.sender, msg.marks)
        else:
            raise ProtocolError(f"server cannot handle {type(msg).__name__}")

    def handle_client_push(self, msg: ClientPush) -> None:
        self.stats["pushes_in"] += 1
        for ch in msg.chunks:
            expected = self.tracker.last_seq[ch.origin] + 1
            if ch.first_seq != expected:
                raise ProtocolError(
                    f"shard {self.shard_id}: {ch.origin} chunk starts at {ch.first_seq}, expected {expected}")
            for e in ch.entries:
                if not self.owns(e.key.table_id, e.key.row_id):
                    raise ProtocolError(f"shard {self.shard_id} does not own {e.key}")
                self.master[e.key.table_id].apply_partials(e.key.row_id, e.key.col_id, e.partials)
            self.tracker.record_chunk(ch.origin, ch.first_seq, ch.last_seq,
                                      [(e.key, e.delta, e.magnitude) for e in ch.entries])
            for q in self.queues.values():
                q.setdefault(ch.origin, deque()).append(ch)
        if msg.acks:
            self.handle_ack(msg.sender, msg.acks, pump=False)
        self._progress()

    def handle_ack(self, proc: int, marks, pump: bool = True) -> None:
        advanced: Dict[int, list] = {}
        for origin, mark in marks:
            for o, full in self.tracker.record_ack(proc, origin, mark):
                advanced.setdefault(o.process_id, []).append((o, full))
        for p in sorted(advanced):
            self.send(Ack(self.node, p, tuple(sorted(advanced[p]))))
        if pump:
            self._progress()

    def handle_clock_message(self, proc: int, clock: int) -> None:
        if proc not in self.vclock:
            self.vclock.register(proc)
            self.queues.setdefault(proc, {})
        self.vclock.advance_to(proc, clock)
        new_min = self.vclock.min()
        if new_min > self.announced_min:
            self.announced_min = new_min
            if self.observer is not None:
                self.observer.server_min_advanced(self, new_min)
            for p in sorted(self.vclock.entries):
                self.send(ClockMsg(self.node, p, new_min))
        self._progress()

    def handle_client_pull(self, msg: ClientPull) -> None:
        if not self.owns(msg.table_id, msg.row_id):
            raise ProtocolError(f"shard {self.shard_id} does not own row ({msg.table_id}, {msg.row_id})")
        if msg.table_id not in self.master:
            raise ProtocolError(f"unknown table {msg.table_id}")
        self.stats["pulls"] += 1
        self.parked.append(_ParkedPull(msg.sender, msg))
        self._progress()

    # -- server push --------------------------------------------------------

    def _gated(self, dest: int, ch: Chunk) -> bool:
        origin = ch.origin
        req = self.tracker.required(origin)
        if dest not in req or ch.last_seq <= self.tracker.partial_watermark(origin):
            return False  # sending here makes nothing newly half-synchronized
        for e in ch.entries:
            policy = self._policy(e.key)
            if not policy.model.strong:
                continue
            half = self.tracker.half_synced_magnitude(e.key)
            if half > 0 and not gate_propagation(policy, e.key, half, e.magnitude, ch.clock).proceed:
                return True
        return False

    def schedule_server_push(self, dest: int, force_clock: Optional[int] = None) -> Optional[ServerPush]:
        """Build one batch for ``dest``.

        Origins are served by descending pending magnitude (ties by worker id);
        each origin's chunks leave in seq order. ``force_clock`` restricts the
        batch to chunks stamped at or below it and lifts the size limit.
        """
        queues = self.queues[dest]
        batch: List[Chunk] = []
        size = 0
        blocked = set()
        while force_clock is not None or size < self.batch_size:
            best, best_score = None, -1.0
            for origin in sorted(queues):
                q = queues[origin]
                if not q or origin in blocked:
                    continue
                if force_clock is not None and q[0].clock > force_clock:
                    continue
                score = math.fsum(ch.magnitude for ch in q)
                if score > best_score:
                    best, best_score = origin, score
            if best is None:
                break
            ch = queues[best][0]
            if self._gated(dest, ch):
                self.stats["gated"] += 1
                blocked.add(best)
                continue
            queues[best].popleft()
            self.tracker.record_sent(dest, best, ch.last_seq)
            batch.append(ch)
            size += max(1, len(ch.entries))
        if not batch:
            return None
        self.stats["pushes_out"] += 1
        return ServerPush(self.node, dest, tuple(batch), self.known_through(dest))

    def _pump(self) -> None:
        for dest in sorted(self.queues):
            while True:
                msg = self.schedule_server_push(dest)
                if msg is None:
                    break
                self.send(msg)

    def _serve_pulls(self) -> None:
        still = []
        for pp in self.parked:
            m = pp.msg
            need = m.clock - m.staleness - 1
            if self.vclock.min() - 1 < need:
                still.append(pp)
                continue
            if self.known_through(pp.proc) < need:
                msg = self.schedule_server_push(pp.proc, force_clock=need)
                if msg is not None:
                    self.send(msg)
                if self.known_through(pp.proc) < need:
                    still.append(pp)
                    continue
            self.send(PullReply(self.node, pp.proc, m.table_id, m.row_id,
                                self.replica_row(pp.proc, m.table_id, m.row_id),
                                self.known_through(pp.proc), m.request_id))
        self.parked = still

    def _progress(self) -> None:
        self._pump()
        if self.parked:
            self._serve_pulls()

    def replica_row(self, dest: int, table_id: int, row_id: int):
        """Row as ``dest`` holds it once everything sent so far has arrived."""
        table = self.master[table_id]
        out = []
        for col in table.columns(row_id):
            parts = table.partials(row_id, col)
            for q in self.queues[dest].values():
                for ch in q:
                    for e in ch.entries:
                        if e.key.row_id == row_id and e.key.table_id == table_id and e.key.col_id == col:
                            parts.extend(-p for p in e.partials)
            out.append((col, math.fsum(parts)))
        return tuple(out)

    def master_snapshot(self) -> Dict[ParamKey, float]:
        out = {}
        for t in sorted(self.master):
            out.update(self.master[t].snapshot())
        return out
