"""Distributed runtime: node roles, message codec and transports."""

from .messages import FrameDecoder, MessageType, NodeMessage, encode_frame, read_frame, write_frame
from .node import (DuplicateNodeError, Event, IntegrationQueue, IntegrationResult, Job, Node,
                   QueryState, Repository, register_node)
from .transport import SimulatedNetwork, SocketTransport, parse_address, wait_for

__all__ = [
    "DuplicateNodeError", "Event", "FrameDecoder", "IntegrationQueue", "IntegrationResult",
    "Job", "MessageType", "Node", "NodeMessage", "QueryState", "Repository",
    "SimulatedNetwork", "SocketTransport", "encode_frame", "parse_address", "read_frame",
    "register_node", "wait_for", "write_frame",
]
