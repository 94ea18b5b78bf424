"""Wire message schema shared by the simulator and the socket transport."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple, Tuple

from ..core import ParamKey, WorkerId

SERVER_BASE = 1_000_000


def server_node(shard: int) -> int:
    return SERVER_BASE + shard


def is_server(node: int) -> bool:
    return node >= SERVER_BASE


def shard_of_node(node: int) -> int:
    return node - SERVER_BASE


class Tag(enum.IntEnum):
    CLIENT_PUSH = 1
    CLIENT_PULL = 2
    PULL_REPLY = 3
    SERVER_PUSH = 4
    CLOCK = 5
    ACK = 6


class Entry(NamedTuple):
    """Coalesced updates of one origin to one key within one chunk.

    ``partials`` sum exactly to the combined delta; ``magnitude`` is the sum
    of the individual |delta| values, which strong-VAP accounting needs.
    """

    key: ParamKey
    partials: Tuple[float, ...]
    magnitude: float

    @property
    def delta(self) -> float:
        return math.fsum(self.partials)


@dataclass(frozen=True)
class Chunk:
    """A contiguous seq range of one origin's updates, delivered atomically."""

    origin: WorkerId
    first_seq: int
    last_seq: int
    clock: int
    entries: Tuple[Entry, ...]

    def restricted(self, keep) -> "Chunk":
        return Chunk(self.origin, self.first_seq, self.last_seq, self.clock,
                     tuple(e for e in self.entries if keep(e.key)))

    @property
    def magnitude(self) -> float:
        return math.fsum(e.magnitude for e in self.entries)


@dataclass(frozen=True)
class ClientPush:
    sender: int
    dest: int
    chunks: Tuple[Chunk, ...]
    acks: Tuple[Tuple[WorkerId, int], ...] = ()
    tag = Tag.CLIENT_PUSH


@dataclass(frozen=True)
class ClientPull:
    sender: int
    dest: int
    table_id: int
    row_id: int
    clock: int
    staleness: int
    request_id: int
    tag = Tag.CLIENT_PULL


@dataclass(frozen=True)
class PullReply:
    sender: int
    dest: int
    table_id: int
    row_id: int
    values: Tuple[Tuple[int, float], ...]
    known_through: int
    request_id: int
    tag = Tag.PULL_REPLY


@dataclass(frozen=True)
class ServerPush:
    sender: int
    dest: int
    chunks: Tuple[Chunk, ...]
    known_through: int
    tag = Tag.SERVER_PUSH


@dataclass(frozen=True)
class ClockMsg:
    """Client -> server: process min thread clock. Server -> client: global min."""

    sender: int
    dest: int
    clock: int
    tag = Tag.CLOCK


@dataclass(frozen=True)
class Ack:
    """Client -> server: applied marks. Server -> client: full-sync marks."""

    sender: int
    dest: int
    marks: Tuple[Tuple[WorkerId, int], ...]
    tag = Tag.ACK


Message = (ClientPush, ClientPull, PullReply, ServerPush, ClockMsg, Ack)
