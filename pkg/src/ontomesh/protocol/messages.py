"""Node messages and the length-prefixed frame codec.

A frame is a 4-byte big-endian unsigned length followed by that many bytes
of UTF-8 JSON holding one message::

    {"type": "OntologyRequest", "sender": "n1", "correlation": "n1-q1", "payload": {...}}
"""

from __future__ import annotations

import enum
import json
import socket
import struct
from dataclasses import dataclass, field
from typing import Any, Optional

from ..errors import ProtocolError

HEADER = struct.Struct(">I")
MAX_FRAME = 64 * 1024 * 1024


class MessageType(str, enum.Enum):
    REGISTER = "Register"
    NODE_LIST = "NodeList"
    ONTOLOGY_REQUEST = "OntologyRequest"
    ONTOLOGY_RESPONSE = "OntologyResponse"
    ENQUEUE = "Enqueue"
    INTEGRATION_DONE = "IntegrationDone"
    ACK = "Ack"
    ERROR = "Error"


# message types that belong to a query flow and must carry a correlation id
CORRELATED = frozenset({
    MessageType.NODE_LIST, MessageType.ONTOLOGY_REQUEST, MessageType.ONTOLOGY_RESPONSE,
    MessageType.ENQUEUE, MessageType.INTEGRATION_DONE,
})


@dataclass(frozen=True)
class NodeMessage:
    type: MessageType
    sender: str
    correlation: str = ""
    payload: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "type", MessageType(self.type))
        if self.type in CORRELATED and not self.correlation:
            raise ProtocolError(f"{self.type.value} message needs a correlation id")

    def to_json(self) -> dict:
        return {"type": self.type.value, "sender": self.sender,
                "correlation": self.correlation, "payload": self.payload}

    def encode(self) -> bytes:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"),
                          ensure_ascii=False).encode("utf-8")

    @classmethod
    def decode(cls, body: bytes) -> "NodeMessage":
        try:
            doc = json.loads(body.decode("utf-8"))
            return cls(doc["type"], doc["sender"], doc.get("correlation", ""), doc.get("payload") or {})
        except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed message: {exc}") from None


def encode_frame(message: NodeMessage) -> bytes:
    body = message.encode()
    if len(body) > MAX_FRAME:
        raise ProtocolError(f"frame too large: {len(body)} bytes")
    return HEADER.pack(len(body)) + body


class FrameDecoder:
    """Incremental decoder: feed bytes, collect complete messages."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[NodeMessage]:
        self._buf += data
        out = []
        while len(self._buf) >= HEADER.size:
            (n,) = HEADER.unpack_from(self._buf)
            if n > MAX_FRAME:
                raise ProtocolError(f"frame too large: {n} bytes")
            if len(self._buf) < HEADER.size + n:
                break
            body = bytes(self._buf[HEADER.size:HEADER.size + n])
            del self._buf[:HEADER.size + n]
            out.append(NodeMessage.decode(body))
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)


def _recv_exactly(sock: socket.socket, n: int) -> Optional[bytes]:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            if buf:
                raise ProtocolError("connection closed mid-frame")
            return None
        buf += chunk
    return bytes(buf)


def read_frame(sock: socket.socket) -> Optional[NodeMessage]:
    """Read one message; ``None`` on clean end of stream."""
    header = _recv_exactly(sock, HEADER.size)
    if header is None:
        return None
    (n,) = HEADER.unpack(header)
    if n > MAX_FRAME:
        raise ProtocolError(f"frame too large: {n} bytes")
    body = _recv_exactly(sock, n)
    if body is None:
        raise ProtocolError("connection closed mid-frame")
    return NodeMessage.decode(body)


def write_frame(sock: socket.socket, message: NodeMessage) -> None:
    sock.sendall(encode_frame(message))
