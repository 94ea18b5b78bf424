"""Deterministic single-threaded simulator.

Every scheduler step performs exactly one action chosen by a seeded
generator: deliver the head message of one link, advance one worker by one
API call, or let one worker push its buffered writes in the background.
Messages are encoded on send and decoded on delivery, so the codec runs on
every simulated trace. (seed, topology, tables, programs) determine the
event log completely.
"""

from __future__ import annotations

import hashlib
import logging
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Deque, Dict, List, Mapping, Optional, Sequence, Tuple

from .audit import Ledger
from .client import OP, ClientProcess, Wait, WorkerApi
from .core import WorkerId
from .errors import ConfigError, SimulationDeadlock
from .server import DEFAULT_BATCH_SIZE, ServerShard
from .topology import TableSpec, Topology
from .transport.codec import decode, encode
from .transport.messages import Tag, is_server, server_node

log = logging.getLogger(__name__)

UNIFORM = "uniform"
LAGGARD = "laggard"
BURST = "burst"
PROFILES = (UNIFORM, LAGGARD, BURST)
DEFAULT_FAIRNESS_BOUND = 1000

Program = Callable[[WorkerApi], object]


class Fanout:
    """Forwards observer hooks to every listener that defines them."""

    def __init__(self, listeners: Sequence[object]):
        self.listeners = [x for x in listeners if x is not None]

    def __getattr__(self, name):
        targets = [getattr(x, name) for x in self.listeners if hasattr(x, name)]

        if len(targets) == 1:
            call = targets[0]
        else:
            def call(*args):
                for t in targets:
                    t(*args)
        setattr(self, name, call)
        return call


@dataclass
class _WorkerState:
    worker: WorkerId
    gen: object
    wait: Optional[Wait] = None
    done: bool = False
    result: object = None
    ops: int = 0
    started: bool = False
    blocked: int = 0


@dataclass
class SimResult:
    steps: int
    results: Dict[WorkerId, object]
    event_log: List[str]
    max_message_age: int
    messages: Dict[str, int]
    blocked: Dict[WorkerId, int]
    ledger: Optional[Ledger] = None
    stats: Dict[str, int] = field(default_factory=dict)

    @property
    def log_digest(self) -> str:
        return hashlib.sha256("\n".join(self.event_log).encode()).hexdigest()


class Simulation:
    def __init__(self, topology: Topology, tables: Mapping[int, TableSpec],
                 programs: Mapping[WorkerId, Program], seed: int, *,
                 profile: str = UNIFORM, laggard: Optional[int] = None, delay_factor: float = 50.0,
                 quantum: int = 1, fairness_bound: int = DEFAULT_FAIRNESS_BOUND,
                 batch_size: int = DEFAULT_BATCH_SIZE, flush_threshold: int = 64,
                 ledger: bool = True, check_divergence: bool = True, observers: Sequence = (),
                 record_log: bool = True, max_steps: int = 50_000_000):
        if profile not in PROFILES:
            raise ConfigError(f"unknown adversary profile {profile!r}")
        if set(programs) != set(topology.workers):
            raise ConfigError("need exactly one program per worker")
        if profile == LAGGARD:
            laggard = max(topology.processes) if laggard is None else laggard
            if laggard not in topology.processes:
                raise ConfigError(f"laggard process {laggard} not in topology")
        self.topology = topology
        self.tables = dict(tables)
        self.rng = random.Random(seed)
        self.profile = profile
        self.laggard = laggard
        self.slow_weight = 1.0 / delay_factor
        self.quantum = quantum
        self.fairness_bound = fairness_bound
        self.record_log = record_log
        self.max_steps = max_steps
        self.ledger = Ledger(topology, tables, check_divergence=check_divergence) if ledger else None
        listeners = [x for x in (self.ledger, *observers) if x is not None]
        self.observer = Fanout(listeners) if listeners else None
        self.step = 0
        self.links: Dict[Tuple[int, int], Deque[Tuple[int, bytes, str]]] = {}
        self.event_log: List[str] = []
        self.max_age = 0
        self.msg_counts: Dict[str, int] = {t.name: 0 for t in Tag}
        self._burst_link: Optional[Tuple[int, int]] = None
        self._burst_left = 0

        self.servers = {
            s: ServerShard(s, topology, tables, self._sender(server_node(s)), batch_size, self.observer)
            for s in range(topology.num_shards)
        }
        self.clients = {
            p: ClientProcess(p, topology, tables, self._sender(p), self.observer, flush_threshold)
            for p in sorted(topology.processes)
        }
        self.workers: Dict[WorkerId, _WorkerState] = {}
        for w in topology.workers:
            api = WorkerApi(self.clients[w.process_id], w)
            self.workers[w] = _WorkerState(w, programs[w](api))

    # -- network ------------------------------------------------------------

    def _sender(self, node: int):
        def send(msg) -> None:
            data = encode(msg)
            link = (node, msg.dest)
            q = self.links.get(link)
            if q is None:
                q = self.links[link] = deque()
            q.append((self.step, data, msg.tag.name))
            self.msg_counts[msg.tag.name] += 1
        return send

    def _deliver(self, link: Tuple[int, int]) -> None:
        q = self.links[link]
        sent_at, data, tag = q.popleft()
        self.max_age = max(self.max_age, self.step - sent_at)
        msg = decode(data)
        self._log(f"deliver {link[0]}->{link[1]} {tag} {len(data)}B")
        dest = link[1]
        if is_server(dest):
            self.servers[dest - server_node(0)].handle(msg)
        else:
            self.clients[dest].handle(msg)

    def _log(self, text: str) -> None:
        if self.record_log:
            self.event_log.append(f"{self.step} {text}")

    # -- workers ------------------------------------------------------------

    def _runnable(self, st: _WorkerState) -> bool:
        return not st.done and (st.wait is None or st.wait.predicate())

    def _run_worker(self, st: _WorkerState) -> None:
        if st.wait is not None:
            self._log(f"wake {st.worker}")
            st.wait = None
        client = self.clients[st.worker.process_id]
        ops = 0
        while True:
            try:
                y = st.gen.send(None)
            except StopIteration as stop:
                st.done = True
                st.ops += ops
                st.result = stop.value
                client.flush_now(st.worker, force=True)
                self._log(f"done {st.worker}")
                return
            if y is OP:
                if st.started:
                    ops += 1
                st.started = True
                if ops >= self.quantum:
                    st.ops += ops
                    self._log(f"run {st.worker}")
                    return
                continue
            if isinstance(y, Wait):
                if y.predicate():
                    continue
                st.wait = y
                st.blocked += 1
                st.ops += ops
                self._log(f"block {st.worker} {y.reason}")
                return
            raise TypeError(f"worker {st.worker} yielded {y!r}")

    # -- scheduling ---------------------------------------------------------

    def _link_weight(self, link: Tuple[int, int]) -> float:
        if self.profile == LAGGARD and self.laggard in link:
            return self.slow_weight
        return 1.0

    def _actions(self) -> Tuple[List[tuple], List[float]]:
        acts, weights = [], []
        for link in sorted(self.links):
            if self.links[link]:
                acts.append(("deliver", link))
                weights.append(self._link_weight(link))
        for w in sorted(self.workers):
            st = self.workers[w]
            if self._runnable(st):
                acts.append(("run", w))
                weights.append(1.0)
            if self.clients[w.process_id].can_flush_async(w):
                acts.append(("flush", w))
                weights.append(0.5)
        return acts, weights

    def _forced(self) -> Optional[Tuple[int, int]]:
        oldest, link = None, None
        for lk in sorted(self.links):
            q = self.links[lk]
            if q and (oldest is None or q[0][0] < oldest):
                oldest, link = q[0][0], lk
        if oldest is not None and self.step - oldest >= self.fairness_bound:
            return link
        return None

    def _choose(self, acts, weights):
        if self.profile == BURST:
            if self._burst_left > 0 and self.links.get(self._burst_link):
                self._burst_left -= 1
                return ("deliver", self._burst_link)
            self._burst_left = 0
            links = [a for a in acts if a[0] == "deliver"]
            if links and self.rng.random() < 0.1:
                act = self.rng.choice(links)
                self._burst_link = act[1]
                self._burst_left = self.rng.randint(2, 8) - 1
                return act
        return self.rng.choices(acts, weights)[0]

    def run(self) -> SimResult:
        while True:
            if self.step >= self.max_steps:
                raise SimulationDeadlock(f"no quiescence after {self.max_steps} steps")
            forced = self._forced()
            if forced is not None:
                while forced is not None:  # everything overdue goes out this step
                    self._deliver(forced)
                    forced = self._forced()
                self.step += 1
                continue
            acts, weights = self._actions()
            if not acts:
                break
            kind, target = self._choose(acts, weights)
            if kind == "deliver":
                self._deliver(target)
            elif kind == "run":
                self._run_worker(self.workers[target])
            else:
                self.clients[target.process_id].flush_now(target)
                self._log(f"flush {target}")
            self.step += 1
        stuck = [st for st in self.workers.values() if not st.done]
        if stuck:
            reasons = "; ".join(f"{st.worker}: {st.wait.reason if st.wait else '?'}" for st in stuck)
            raise SimulationDeadlock(f"step {self.step}: no runnable action ({reasons})")
        stats = {}
        for c in self.clients.values():
            for k, v in c.stats.items():
                stats[k] = stats.get(k, 0) + v
        for s in self.servers.values():
            for k, v in s.stats.items():
                stats["server_" + k] = stats.get("server_" + k, 0) + v
        return SimResult(
            steps=self.step,
            results={w: st.result for w, st in sorted(self.workers.items())},
            event_log=self.event_log,
            max_message_age=self.max_age,
            messages=dict(self.msg_counts),
            blocked={w: st.blocked for w, st in sorted(self.workers.items())},
            ledger=self.ledger,
            stats=stats,
        )

    # -- inspection ---------------------------------------------------------

    def master_state(self):
        out = {}
        for s in sorted(self.servers):
            out.update(self.servers[s].master_snapshot())
        return dict(sorted(out.items()))


def simulate(topology: Topology, tables: Mapping[int, TableSpec],
             programs: Mapping[WorkerId, Program], seed: int, **kw) -> Tuple[Simulation, SimResult]:
    sim = Simulation(topology, tables, programs, seed, **kw)
    return sim, sim.run()
