"""Wire messages, the binary codec and the TCP transport."""

from .codec import decode, decode_frame, encode
from .messages import (
    Ack, Chunk, ClientPull, ClientPush, ClockMsg, Entry, PullReply, ServerPush, Tag,
    server_node,
)

__all__ = [
    "Ack", "Chunk", "ClientPull", "ClientPush", "ClockMsg", "Entry", "PullReply",
    "ServerPush", "Tag", "decode", "decode_frame", "encode", "server_node",
]
