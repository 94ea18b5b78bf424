"""Synchronization tracking with cumulative acknowledgment watermarks.

An update from ``origin`` with sequence number ``seq`` is *fully
synchronized* once every client that has to see it has acked a mark
>= seq, and *half synchronized* while some but not all of them have. The
clients that have to see an origin's updates are supplied by the caller:
typically every process hosting a worker other than the origin.

Because links are FIFO per origin, one integer per (client, origin) is
enough to describe what a client has applied.
"""

from __future__ import annotations

import math
from collections import defaultdict, deque
from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Deque, Dict, Hashable, Iterable, List, Mapping, Optional, Tuple

from .core import ParamKey, UpdateRecord, WorkerId, grow_partials
from .errors import ContractViolation, OutsideSimulation
from .policy import MAGNITUDE, SIGNED, ConsistencyPolicy


class _Counter:
    """Exact running sum: adding then removing a value leaves no residue."""

    __slots__ = ("parts",)

    def __init__(self):
        self.parts: List[float] = []

    def add(self, x: float) -> None:
        grow_partials(self.parts, x)

    def value(self) -> float:
        return math.fsum(self.parts)


@dataclass
class DivergenceReport:
    key: ParamKey
    max_divergence: float
    worst_pair: Optional[Tuple[WorkerId, WorkerId]]
    weak_bound: float
    strong_bound: float
    view_error_bound: float
    weak_ok: bool
    strong_ok: bool
    view_error_ok: bool
    ok: bool


class SyncTracker:
    """Per-(origin, key) logs of not-yet-fully-synchronized updates.

    ``required`` maps an origin to the clients that must ack its updates.
    ``process_of`` is only needed for omniscient divergence audits, where
    the ack marks are the true applied marks of every process.
    """

    def __init__(self, required: Callable[[WorkerId], Iterable[Hashable]], *,
                 omniscient: bool = False,
                 process_of: Optional[Mapping[WorkerId, int]] = None):
        self._required_fn = required
        self._required: Dict[WorkerId, Tuple[Hashable, ...]] = {}
        self.omniscient = omniscient
        self.process_of = dict(process_of or {})
        self.last_seq: Dict[WorkerId, int] = defaultdict(int)
        self.acked: Dict[Tuple[Hashable, WorkerId], int] = {}
        self.sent: Dict[Tuple[Hashable, WorkerId], int] = {}
        self._full: Dict[WorkerId, int] = {}
        self._logs: Dict[Tuple[WorkerId, ParamKey], Deque[list]] = {}
        self._signed: Dict[Tuple[WorkerId, ParamKey], _Counter] = {}
        self._mag: Dict[Tuple[WorkerId, ParamKey], _Counter] = {}
        self._keys_of: Dict[WorkerId, set] = defaultdict(set)
        self._origins_of: Dict[ParamKey, set] = defaultdict(set)

    # -- membership ---------------------------------------------------------

    def required(self, origin: WorkerId) -> Tuple[Hashable, ...]:
        req = self._required.get(origin)
        if req is None:
            req = self._required[origin] = tuple(sorted(set(self._required_fn(origin)), key=repr))
        return req

    # -- recording ----------------------------------------------------------

    def _log(self, origin: WorkerId, seq: int, key: ParamKey, delta: float, mag: float) -> None:
        ok = (origin, key)
        log = self._logs.get(ok)
        if log is None:
            log = self._logs[ok] = deque()
            self._signed[ok] = _Counter()
            self._mag[ok] = _Counter()
        log.append([seq, delta, mag])
        self._signed[ok].add(delta)
        self._mag[ok].add(mag)
        self._keys_of[origin].add(key)
        self._origins_of[key].add(origin)

    def record_issue(self, origin: WorkerId, rec: UpdateRecord) -> float:
        """Log one freshly issued update; returns the new signed unsynced sum."""
        if rec.origin != origin:
            raise ContractViolation(f"record from {rec.origin} logged under {origin}")
        if rec.seq != self.last_seq[origin] + 1:
            raise ContractViolation(
                f"{origin}: seq {rec.seq} does not follow {self.last_seq[origin]}")
        self.last_seq[origin] = rec.seq
        if not self.required(origin):
            self._full[origin] = rec.seq  # nobody else has to see it
            return 0.0
        self._log(origin, rec.seq, rec.key, rec.delta, abs(rec.delta))
        return self.unsynced_sum(origin, rec.key)

    def record_chunk(self, origin: WorkerId, first_seq: int, last_seq: int,
                     entries: Iterable[Tuple[ParamKey, float, float]]) -> None:
        """Log a contiguous, atomically delivered range of an origin's updates.

        Each entry is (key, combined delta, sum of |delta|), logged at
        ``last_seq`` since no client can see part of the range.
        """
        if first_seq != self.last_seq[origin] + 1 or last_seq < first_seq:
            raise ContractViolation(
                f"{origin}: chunk [{first_seq}, {last_seq}] does not follow {self.last_seq[origin]}")
        self.last_seq[origin] = last_seq
        if not self.required(origin):
            self._full[origin] = last_seq
            return
        for key, delta, mag in entries:
            self._log(origin, last_seq, key, delta, mag)

    def record_sent(self, client: Hashable, origin: WorkerId, mark: int) -> None:
        prev = self.sent.get((client, origin), 0)
        if mark < prev:
            raise ContractViolation(f"sent mark ({client}, {origin}) regressed {prev} -> {mark}")
        self.sent[(client, origin)] = mark

    def record_ack(self, client: Hashable, origin: WorkerId, seq_mark: int) -> List[Tuple[WorkerId, int]]:
        """Raise the ack mark of ``client`` for ``origin``.

        Returns [(origin, new full watermark)] when full synchronization
        advanced, which is when blocked writers may wake up.
        """
        prev = self.acked.get((client, origin), 0)
        if seq_mark < prev:
            raise ContractViolation(f"ack ({client}, {origin}) regressed {prev} -> {seq_mark}")
        if seq_mark > self.last_seq[origin]:
            raise ContractViolation(
                f"ack ({client}, {origin}) = {seq_mark} beyond issued {self.last_seq[origin]}")
        if seq_mark == prev:
            return []
        self.acked[(client, origin)] = seq_mark
        old_full = self._full.get(origin, 0)
        if self._collect(origin) > old_full:
            return [(origin, self._full[origin])]
        return []

    def _collect(self, origin: WorkerId) -> int:
        """Recompute the full watermark and drop log entries at or below it."""
        full = self._compute_full(origin)
        self._full[origin] = full
        for key in list(self._keys_of[origin]):
            ok = (origin, key)
            log = self._logs[ok]
            while log and log[0][0] <= full:
                _, delta, mag = log.popleft()
                self._signed[ok].add(-delta)
                self._mag[ok].add(-mag)
            if not log:
                del self._logs[ok], self._signed[ok], self._mag[ok]
                self._keys_of[origin].discard(key)
                self._origins_of[key].discard(origin)
        return full

    # -- queries ------------------------------------------------------------

    def _compute_full(self, origin: WorkerId) -> int:
        req = self.required(origin)
        if not req:
            return self.last_seq[origin]
        return min(self.acked.get((c, origin), 0) for c in req)

    def full_watermark(self, origin: WorkerId) -> int:
        return self._full.get(origin, 0)

    def partial_watermark(self, origin: WorkerId) -> int:
        req = self.required(origin)
        if not req:
            return self.last_seq[origin]
        return max(max(self.acked.get((c, origin), 0), self.sent.get((c, origin), 0)) for c in req)

    def unsynced_sum(self, origin: WorkerId, key: ParamKey, mode: str = SIGNED) -> float:
        ok = (origin, key)
        counters = self._mag if mode == MAGNITUDE else self._signed
        c = counters.get(ok)
        return c.value() if c is not None else 0.0

    def has_unsynced(self, origin: WorkerId, key: ParamKey) -> bool:
        return (origin, key) in self._logs

    def unsynced_log(self, origin: WorkerId, key: ParamKey) -> List[Tuple[int, float, float]]:
        return [tuple(e) for e in self._logs.get((origin, key), ())]

    def half_synced_magnitude(self, key: ParamKey) -> float:
        mags = []
        for origin in self._origins_of.get(key, ()):
            full = self._full.get(origin, 0)
            partial = self.partial_watermark(origin)
            for seq, _, mag in self._logs[(origin, key)]:
                if full < seq <= partial:
                    mags.append(mag)
        return math.fsum(mags)

    def pending_keys(self) -> List[ParamKey]:
        return sorted(k for k, origins in self._origins_of.items() if origins)

    # -- omniscient audit ---------------------------------------------------

    def _visible(self, worker: WorkerId, origin: WorkerId, seq: int) -> bool:
        if worker == origin:
            return True
        return self.acked.get((self.process_of[worker], origin), 0) >= seq

    def view_offsets(self, key: ParamKey) -> Dict[WorkerId, float]:
        """Per worker: sum of not-fully-synchronized updates it can see on ``key``.

        Fully synchronized updates are visible to everyone, so differences of
        these offsets are differences of the workers' views.
        """
        if not self.omniscient:
            raise OutsideSimulation("view offsets need the omniscient simulator view")
        out = {}
        for w in self.process_of:
            vals = []
            for origin in self._origins_of.get(key, ()):
                for seq, delta, _ in self._logs[(origin, key)]:
                    if self._visible(w, origin, seq):
                        vals.append(delta)
            out[w] = math.fsum(vals)
        return out

    def divergence_audit(self, key: ParamKey, policy: ConsistencyPolicy, clock: int = 0) -> DivergenceReport:
        if not self.omniscient:
            raise OutsideSimulation("divergence audit needs the omniscient simulator view")
        offsets = self.view_offsets(key)
        P = len(offsets)
        worst, pair = 0.0, None
        for a, b in combinations(sorted(offsets), 2):
            d = abs(offsets[a] - offsets[b])
            if d > worst:
                worst, pair = d, (a, b)
        m = policy.half_sync_bound(clock)
        v = policy.value_bound(clock)
        weak_bound = m * P
        strong_bound = 2 * m
        view_error_bound = 2 * v * (P - 1)
        weak_ok = worst <= weak_bound
        strong_ok = worst <= strong_bound
        return DivergenceReport(
            key=key, max_divergence=worst, worst_pair=pair,
            weak_bound=weak_bound, strong_bound=strong_bound, view_error_bound=view_error_bound,
            weak_ok=weak_ok, strong_ok=strong_ok, view_error_ok=worst <= view_error_bound,
            ok=strong_ok if policy.model.strong else weak_ok,
        )

