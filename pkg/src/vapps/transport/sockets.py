"""TCP transport: real threads around the same ServerShard / ClientProcess logic.

Each connection has one reader thread and one writer thread. A shard runs a
single event-loop thread fed by its readers. A client process serializes
all access to its cache with one lock; worker threads drive the API
generators and sleep on a condition variable while blocked.

A client announces itself by sending ``ClockMsg(clock=0)`` right after
connecting (an idempotent clock report), and ends its session by shutting
down its write side. A shard stops once every process of the topology has
connected and hung up.
"""

from __future__ import annotations

import logging
import queue
import socket
import struct
import threading
import time
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from ..client import OP, ClientProcess, Wait, WorkerApi
from ..core import WorkerId
from ..errors import DecodeError, ProtocolError, StalenessUnavailable
from ..server import DEFAULT_BATCH_SIZE, ServerShard
from ..topology import TableSpec, Topology
from .codec import decode_frame, encode
from .messages import ClockMsg, server_node

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 30.0
FLUSH_INTERVAL = 0.01
_LEN = struct.Struct(">I")
_STOP = object()


def _recv_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            if buf:
                raise DecodeError("connection closed mid-frame")
            return None
        buf += chunk
    return bytes(buf)


class Connection:
    """Framed, ordered message pipe over one socket."""

    def __init__(self, sock: socket.socket, on_message: Callable[[object], None],
                 on_close: Callable[[], None], name: str):
        self.sock = sock
        self.name = name
        self._out: "queue.Queue" = queue.Queue()
        self._on_message = on_message
        self._on_close = on_close
        self.reader = threading.Thread(target=self._read_loop, name=f"{name}-rx", daemon=True)
        self.writer = threading.Thread(target=self._write_loop, name=f"{name}-tx", daemon=True)

    def start(self) -> None:
        self.reader.start()
        self.writer.start()

    def send(self, msg) -> None:
        self._out.put(encode(msg))

    def finish_writes(self) -> None:
        """Flush queued frames, then half-close the socket."""
        self._out.put(_STOP)

    def _write_loop(self) -> None:
        while True:
            item = self._out.get()
            if item is _STOP:
                try:
                    self.sock.shutdown(socket.SHUT_WR)
                except OSError:
                    pass
                return
            try:
                self.sock.sendall(item)
            except OSError as exc:
                log.debug("%s: dropping frame after send failure: %s", self.name, exc)

    def _read_loop(self) -> None:
        try:
            while True:
                head = _recv_exact(self.sock, 4)
                if head is None:
                    break
                (n,) = _LEN.unpack(head)
                body = _recv_exact(self.sock, n)
                if body is None:
                    raise DecodeError("connection closed mid-frame")
                self._on_message(decode_frame(body))
        except DecodeError as exc:
            log.warning("%s: dropping connection after bad frame: %s", self.name, exc)
            try:
                self.sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
        except OSError as exc:
            log.warning("%s: connection failed: %s", self.name, exc)
        finally:
            self._on_close()

    def close(self) -> None:
        self.finish_writes()
        self.writer.join(timeout=5)
        try:
            self.sock.close()
        except OSError:
            pass


class ServerNode:
    def __init__(self, shard: int, topology: Topology, tables: Mapping[int, TableSpec],
                 host: str = "127.0.0.1", port: int = 0, batch_size: int = DEFAULT_BATCH_SIZE):
        self.topology = topology
        self.events: "queue.Queue" = queue.Queue()
        self.conns: Dict[int, Connection] = {}
        self._backlog: Dict[int, List[object]] = {}
        self.shard = ServerShard(shard, topology, tables, self._send, batch_size)
        self.listener = socket.create_server((host, port))
        self.address = self.listener.getsockname()[:2]
        self.error: Optional[BaseException] = None
        self._closed: set = set()
        self._threads = [
            threading.Thread(target=self._accept_loop, name=f"shard{shard}-accept", daemon=True),
            threading.Thread(target=self._event_loop, name=f"shard{shard}-loop", daemon=True),
        ]

    def start(self) -> "ServerNode":
        for t in self._threads:
            t.start()
        return self

    def join(self, timeout: Optional[float] = None) -> None:
        self._threads[1].join(timeout)
        if self.error is not None:
            raise self.error

    def _send(self, msg) -> None:
        conn = self.conns.get(msg.dest)
        if conn is None:
            self._backlog.setdefault(msg.dest, []).append(msg)
        elif msg.dest not in self._closed:
            conn.send(msg)

    def _accept_loop(self) -> None:
        while True:
            try:
                sock, _ = self.listener.accept()
            except OSError:
                return
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            holder: Dict[str, Connection] = {}
            conn = Connection(sock, lambda m, h=holder: self.events.put(("msg", h["c"], m)),
                              lambda h=holder: self.events.put(("eof", h["c"], None)),
                              f"shard{self.shard.shard_id}-peer")
            holder["c"] = conn
            conn.start()

    def _event_loop(self) -> None:
        procs = {}
        try:
            while len(self._closed) < len(self.topology.processes):
                kind, conn, msg = self.events.get()
                if kind == "eof":
                    proc = procs.get(id(conn))
                    if proc is not None:
                        self._closed.add(proc)
                    continue
                proc = procs.get(id(conn))
                if proc is None:
                    if not isinstance(msg, ClockMsg):
                        raise ProtocolError("first message on a connection must be a clock report")
                    proc = procs[id(conn)] = msg.sender
                    self.conns[proc] = conn
                    for pending in self._backlog.pop(proc, []):
                        conn.send(pending)
                self.shard.handle(msg)
        except BaseException as exc:  # surfaced by join()
            self.error = exc
        finally:
            for conn in self.conns.values():
                conn.close()
            self.listener.close()


class ClientNode:
    def __init__(self, proc: int, topology: Topology, tables: Mapping[int, TableSpec],
                 addresses: Sequence[Tuple[str, int]], timeout: float = DEFAULT_TIMEOUT,
                 flush_threshold: int = 64, connect_timeout: float = 30.0):
        if len(addresses) != topology.num_shards:
            raise ProtocolError(f"need {topology.num_shards} shard addresses, got {len(addresses)}")
        self.timeout = timeout
        self.cond = threading.Condition()
        self.client = ClientProcess(proc, topology, tables, self._send, flush_threshold=flush_threshold)
        self.conns: Dict[int, Connection] = {}
        self._open = set()
        self.error: Optional[BaseException] = None
        for shard, addr in enumerate(addresses):
            sock = _connect(addr, connect_timeout)
            conn = Connection(sock, self._on_message, lambda s=shard: self._on_close(s),
                              f"proc{proc}-shard{shard}")
            self.conns[server_node(shard)] = conn
            self._open.add(shard)
            conn.start()
            conn.send(ClockMsg(proc, server_node(shard), 0))
        self._stop_flusher = threading.Event()
        self._flusher = threading.Thread(target=self._flush_loop, name=f"proc{proc}-flush", daemon=True)
        self._flusher.start()

    def _send(self, msg) -> None:
        self.conns[msg.dest].send(msg)

    def _on_message(self, msg) -> None:
        with self.cond:
            try:
                self.client.handle(msg)
            except BaseException as exc:
                self.error = exc
            self.cond.notify_all()

    def _on_close(self, shard: int) -> None:
        with self.cond:
            self._open.discard(shard)
            self.cond.notify_all()

    def _flush_loop(self) -> None:
        while not self._stop_flusher.wait(FLUSH_INTERVAL):
            with self.cond:
                for w in self.client.threads:
                    if self.client.can_flush_async(w):
                        self.client.flush_now(w)

    def drive(self, gen):
        """Run an API generator (or a whole worker program) to completion on this thread."""
        with self.cond:
            while True:
                if self.error is not None:
                    raise self.error
                try:
                    y = gen.send(None)
                except StopIteration as stop:
                    return stop.value
                if y is OP:
                    continue
                if isinstance(y, Wait):
                    deadline = time.monotonic() + self.timeout
                    while not y.predicate():
                        if self.error is not None:
                            raise self.error
                        left = deadline - time.monotonic()
                        if left <= 0 or not self._open:
                            raise StalenessUnavailable(f"timed out waiting for: {y.reason}")
                        self.cond.wait(left)
                    continue
                raise TypeError(f"API generator yielded {y!r}")

    def run_programs(self, programs: Mapping[WorkerId, Callable]) -> Dict[WorkerId, object]:
        results: Dict[WorkerId, object] = {}
        errors: List[BaseException] = []

        def body(w):
            try:
                results[w] = self.drive(programs[w](WorkerApi(self.client, w)))
                with self.cond:
                    self.client.flush_now(w, force=True)
            except BaseException as exc:
                errors.append(exc)

        threads = [threading.Thread(target=body, args=(w,), name=str(w)) for w in sorted(self.client.threads)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if errors:
            raise errors[0]
        return results

    def close(self) -> None:
        """Hang up; returns once every shard has closed its side."""
        self._stop_flusher.set()
        self._flusher.join()
        for conn in self.conns.values():
            conn.finish_writes()
        deadline = time.monotonic() + self.timeout
        with self.cond:
            while self._open and time.monotonic() < deadline:
                self.cond.wait(deadline - time.monotonic())
        for conn in self.conns.values():
            conn.close()


def _connect(addr: Tuple[str, int], timeout: float) -> socket.socket:
    deadline = time.monotonic() + timeout
    while True:
        try:
            sock = socket.create_connection(addr, timeout=timeout)
            sock.settimeout(None)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            return sock
        except OSError:
            if time.monotonic() >= deadline:
                raise
            time.sleep(0.05)


def run_local(topology: Topology, tables: Mapping[int, TableSpec], programs: Mapping[WorkerId, Callable],
              timeout: float = DEFAULT_TIMEOUT, host: str = "127.0.0.1"):
    """Start every shard and client of ``topology`` in this process over loopback TCP.

    Returns (worker results, master state of all shards at shutdown).
    """
    servers = [ServerNode(s, topology, tables, host, 0).start() for s in range(topology.num_shards)]
    addrs = [s.address for s in servers]
    clients = {p: ClientNode(p, topology, tables, addrs, timeout) for p in sorted(topology.processes)}
    results: Dict[WorkerId, object] = {}
    errors: List[BaseException] = []

    def proc_body(p):
        try:
            procs_programs = {w: programs[w] for w in topology.processes[p]}
            results.update(clients[p].run_programs(procs_programs))
        except BaseException as exc:
            errors.append(exc)
        finally:
            clients[p].close()

    threads = [threading.Thread(target=proc_body, args=(p,)) for p in clients]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for s in servers:
        s.join(timeout)
    if errors:
        raise errors[0]
    master = {}
    for s in servers:
        master.update(s.shard.master_snapshot())
    return results, dict(sorted(master.items()))
