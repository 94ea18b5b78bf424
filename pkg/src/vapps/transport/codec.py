"""Byte-level framing.

Frame layout::

    u32 BE  length of everything after this field
    u8      version (1)
    u8      variant tag
    ...     fields in declared order, little-endian fixed width
    u32 LE  CRC32 of version, tag and fields

Integers are i64, counts are u32, reals are IEEE-754 f64. Chunk entries
are grouped by row: (table, row, n) followed by n (col, partials, magnitude).
"""

from __future__ import annotations

import struct
import zlib
from typing import List, Tuple

from ..core import ParamKey, WorkerId
from ..errors import DecodeError
from .messages import (
    Ack, Chunk, ClientPull, ClientPush, ClockMsg, Entry, PullReply, ServerPush, Tag,
)

VERSION = 1
MAX_FRAME = 2 ** 31

_I64 = struct.Struct("<q")
_U32 = struct.Struct("<I")
_F64 = struct.Struct("<d")
_LEN = struct.Struct(">I")


class _Writer:
    def __init__(self):
        self.buf = bytearray()

    def i64(self, v: int) -> None:
        self.buf += _I64.pack(v)

    def u32(self, v: int) -> None:
        self.buf += _U32.pack(v)

    def f64(self, v: float) -> None:
        self.buf += _F64.pack(v)

    def worker(self, w: WorkerId) -> None:
        self.i64(w.process_id)
        self.i64(w.thread_id)

    def marks(self, marks) -> None:
        self.u32(len(marks))
        for origin, mark in marks:
            self.worker(origin)
            self.i64(mark)

    def chunks(self, chunks) -> None:
        self.u32(len(chunks))
        for ch in chunks:
            self.worker(ch.origin)
            self.i64(ch.first_seq)
            self.i64(ch.last_seq)
            self.i64(ch.clock)
            rows: List[Tuple[Tuple[int, int], List[Entry]]] = []
            for e in ch.entries:
                if rows and rows[-1][0] == e.key.row:
                    rows[-1][1].append(e)
                else:
                    rows.append((e.key.row, [e]))
            self.u32(len(rows))
            for (table_id, row_id), entries in rows:
                self.i64(table_id)
                self.i64(row_id)
                self.u32(len(entries))
                for e in entries:
                    self.i64(e.key.col_id)
                    self.u32(len(e.partials))
                    for p in e.partials:
                        self.f64(p)
                    self.f64(e.magnitude)


class _Reader:
    def __init__(self, data: bytes, pos: int, end: int):
        self.data = data
        self.pos = pos
        self.end = end

    def _take(self, n: int) -> int:
        p = self.pos
        if p + n > self.end:
            raise DecodeError("field runs past end of frame")
        self.pos = p + n
        return p

    def i64(self) -> int:
        return _I64.unpack_from(self.data, self._take(8))[0]

    def u32(self) -> int:
        return _U32.unpack_from(self.data, self._take(4))[0]

    def f64(self) -> float:
        return _F64.unpack_from(self.data, self._take(8))[0]

    def count(self, min_item_size: int) -> int:
        n = self.u32()
        if n * min_item_size > self.end - self.pos:
            raise DecodeError(f"sequence of {n} items cannot fit in frame")
        return n

    def worker(self) -> WorkerId:
        return WorkerId(self.i64(), self.i64())

    def marks(self):
        return tuple((self.worker(), self.i64()) for _ in range(self.count(24)))

    def chunks(self):
        out = []
        for _ in range(self.count(36)):
            origin = self.worker()
            first, last, clock = self.i64(), self.i64(), self.i64()
            entries = []
            for _ in range(self.count(20)):
                table_id, row_id = self.i64(), self.i64()
                for _ in range(self.count(20)):
                    col = self.i64()
                    partials = tuple(self.f64() for _ in range(self.count(8)))
                    entries.append(Entry(ParamKey(table_id, row_id, col), partials, self.f64()))
            out.append(Chunk(origin, first, last, clock, tuple(entries)))
        return tuple(out)


def _encode_body(msg, w: _Writer) -> None:
    w.i64(msg.sender)
    w.i64(msg.dest)
    if isinstance(msg, ClientPush):
        w.chunks(msg.chunks)
        w.marks(msg.acks)
    elif isinstance(msg, ClientPull):
        for v in (msg.table_id, msg.row_id, msg.clock, msg.staleness, msg.request_id):
            w.i64(v)
    elif isinstance(msg, PullReply):
        w.i64(msg.table_id)
        w.i64(msg.row_id)
        w.u32(len(msg.values))
        for col, val in msg.values:
            w.i64(col)
            w.f64(val)
        w.i64(msg.known_through)
        w.i64(msg.request_id)
    elif isinstance(msg, ServerPush):
        w.chunks(msg.chunks)
        w.i64(msg.known_through)
    elif isinstance(msg, ClockMsg):
        w.i64(msg.clock)
    elif isinstance(msg, Ack):
        w.marks(msg.marks)
    else:
        raise TypeError(f"not a message: {msg!r}")


def encode(msg) -> bytes:
    if not isinstance(msg, (ClientPush, ClientPull, PullReply, ServerPush, ClockMsg, Ack)):
        raise TypeError(f"not a message: {msg!r}")
    w = _Writer()
    w.buf += bytes((VERSION, int(msg.tag)))
    try:
        _encode_body(msg, w)
    except struct.error as exc:
        raise ValueError(f"field out of range in {type(msg).__name__}: {exc}") from None
    w.u32(zlib.crc32(w.buf))
    if len(w.buf) >= MAX_FRAME:
        raise ValueError(f"frame of {len(w.buf)} bytes exceeds 2^31")
    return _LEN.pack(len(w.buf)) + bytes(w.buf)


def _decode_body(tag: int, r: _Reader):
    sender, dest = r.i64(), r.i64()
    if tag == Tag.CLIENT_PUSH:
        return ClientPush(sender, dest, r.chunks(), r.marks())
    if tag == Tag.CLIENT_PULL:
        return ClientPull(sender, dest, r.i64(), r.i64(), r.i64(), r.i64(), r.i64())
    if tag == Tag.PULL_REPLY:
        table_id, row_id = r.i64(), r.i64()
        values = tuple((r.i64(), r.f64()) for _ in range(r.count(16)))
        return PullReply(sender, dest, table_id, row_id, values, r.i64(), r.i64())
    if tag == Tag.SERVER_PUSH:
        return ServerPush(sender, dest, r.chunks(), r.i64())
    if tag == Tag.CLOCK:
        return ClockMsg(sender, dest, r.i64())
    if tag == Tag.ACK:
        return Ack(sender, dest, r.marks())
    raise DecodeError(f"unknown variant tag {tag}")


def decode_frame(frame: bytes):
    """Decode bytes that follow the length prefix. Never returns a partial message."""
    if len(frame) < 6:
        raise DecodeError("frame shorter than header and checksum")
    body_end = len(frame) - 4
    (crc,) = _U32.unpack_from(frame, body_end)
    if zlib.crc32(frame[:body_end]) != crc:
        raise DecodeError("checksum mismatch")
    if frame[0] != VERSION:
        raise DecodeError(f"unsupported version {frame[0]}")
    r = _Reader(frame, 2, body_end)
    try:
        msg = _decode_body(frame[1], r)
    except ValueError as exc:  # e.g. negative ids rejected by the key types
        raise DecodeError(str(exc)) from None
    if r.pos != body_end:
        raise DecodeError(f"{body_end - r.pos} trailing bytes in frame")
    return msg


def decode(data: bytes):
    """Decode exactly one length-prefixed frame."""
    if len(data) < 4:
        raise DecodeError("missing length prefix")
    (n,) = _LEN.unpack_from(data, 0)
    if len(data) - 4 != n:
        raise DecodeError(f"length prefix says {n} bytes, got {len(data) - 4}")
    return decode_frame(data[4:])
