"""Transports: a deterministic in-process network and TCP sockets.

Both hand messages to ``Node.handle`` one at a time and call
``Node.step_integration`` only when the node has nothing else to process.
"""

from __future__ import annotations

import logging
import queue
import socket
import socketserver
import threading
import time
from collections import deque
from typing import Callable, Union

from ..errors import ProtocolError
from .messages import NodeMessage, read_frame, write_frame
from .node import Node

log = logging.getLogger(__name__)

Address = tuple[str, int]


class SimulatedNetwork:
    """Lossless FIFO network; ``run`` delivers until every node is idle.

    Delivery order is global send order, so a scenario replays identically.
    """

    def __init__(self):
        self.nodes: dict[str, Node] = {}
        self.in_flight: deque[tuple[str, NodeMessage]] = deque()
        self.delivered = 0

    def add(self, node: Node) -> Node:
        if node.id in self.nodes:
            raise ValueError(f"duplicate node {node.id!r}")
        self.nodes[node.id] = node
        node.attach(_SimEndpoint(self))
        return node

    def send(self, dest: str, msg: NodeMessage) -> None:
        if dest not in self.nodes:
            raise ProtocolError(f"no route to {dest!r}")
        self.in_flight.append((dest, msg))

    def run(self, max_steps: int = 1_000_000) -> int:
        steps = 0
        while steps < max_steps:
            if self.in_flight:
                dest, msg = self.in_flight.popleft()
                self.nodes[dest].handle(msg)
                self.delivered += 1
            elif not any(n.step_integration() for n in self.nodes.values()):
                break
            steps += 1
        return steps

    def start_all(self) -> None:
        for node in self.nodes.values():
            node.start()
        self.run()

    def ledger(self) -> dict[str, int]:
        total: dict[str, int] = {}
        for node in self.nodes.values():
            for k, v in node.sent.items():
                total[k] = total.get(k, 0) + v
        return dict(sorted(total.items()))

    def reset_counters(self) -> None:
        for node in self.nodes.values():
            node.sent.clear()
            node.received.clear()


class _SimEndpoint:
    def __init__(self, network: SimulatedNetwork):
        self.network = network

    def send(self, dest: str, msg: NodeMessage) -> None:
        self.network.send(dest, msg)

    def learn(self, node_id: str, address) -> None:
        pass


class _FrameHandler(socketserver.BaseRequestHandler):
    def handle(self):
        while True:
            try:
                msg = read_frame(self.request)
            except (ProtocolError, OSError) as exc:
                log.warning("dropping connection from %s: %s", self.client_address, exc)
                return
            if msg is None:
                return
            self.server.deliver(msg)


class _Server(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = False

    def __init__(self, address: Address, deliver: Callable[[NodeMessage], None]):
        self.deliver = deliver
        super().__init__(address, _FrameHandler)


class SocketTransport:
    """Runs one node behind a TCP listener.

    Inbound frames and local calls go through a single inbox consumed by
    the reactor thread, which is the only thread that touches the node.
    """

    def __init__(self, node: Node, listen: Address, connect_timeout: float = 5.0):
        self.node = node
        self.addresses: dict[str, Address] = {}
        self.connect_timeout = connect_timeout
        self.inbox: "queue.Queue[Union[NodeMessage, Callable]]" = queue.Queue()
        # raises OSError when the address is taken
        self.server = _Server(listen, self.inbox.put)
        self.address: Address = self.server.server_address[:2]
        node.address = list(self.address)
        node.attach(self)
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._lock = threading.Lock()
        self._conns: dict[str, socket.socket] = {}
        self.errors: list[str] = []

    def learn(self, node_id: str, address) -> None:
        if address is None:
            return
        address = (address[0], int(address[1]))
        with self._lock:
            if self.addresses.get(node_id) != address:
                stale = self._conns.pop(node_id, None)
                if stale is not None:
                    stale.close()
            self.addresses[node_id] = address

    def send(self, dest: str, msg: NodeMessage) -> None:
        if dest == self.node.id:
            self.inbox.put(msg)
            return
        addr = self.addresses.get(dest)
        if addr is None:
            raise ProtocolError(f"no address for {dest!r}")
        with self._lock:
            try:
                conn = self._conns.get(dest)
                if conn is None:
                    conn = socket.create_connection(addr, timeout=self.connect_timeout)
                    self._conns[dest] = conn
                write_frame(conn, msg)
            except OSError as exc:
                self._conns.pop(dest, None)
                self.errors.append(f"{dest}@{addr[0]}:{addr[1]}: {exc}")
                log.warning("send to %s failed: %s", dest, exc)

    def call(self, fn: Callable[[Node], object], timeout: float = 10.0):
        """Run ``fn(node)`` on the reactor thread and return its result."""
        box: dict = {}
        done = threading.Event()

        def task(node):
            try:
                box["value"] = fn(node)
            except BaseException as exc:  # re-raised in the caller
                box["error"] = exc
            done.set()

        self.inbox.put(task)
        if not done.wait(timeout):
            raise TimeoutError("reactor did not answer")
        if "error" in box:
            raise box["error"]
        return box.get("value")

    def _reactor(self) -> None:
        while not self._stop.is_set():
            try:
                item = self.inbox.get(timeout=0.01)
            except queue.Empty:
                self.node.step_integration()
                continue
            if callable(item):
                item(self.node)
            else:
                try:
                    self.node.handle(item)
                except Exception:  # noqa: BLE001 - one bad message must not kill the node
                    log.exception("node %s failed handling %s", self.node.id, item.type.value)

    def start(self) -> "SocketTransport":
        for target in (self.server.serve_forever, self._reactor):
            t = threading.Thread(target=target, daemon=True, name=f"{self.node.id}-{target.__name__}")
            t.start()
            self._threads.append(t)
        return self

    def close(self) -> None:
        self._stop.set()
        self.server.shutdown()
        self.server.server_close()
        with self._lock:
            for conn in self._conns.values():
                try:
                    conn.close()
                except OSError:
                    pass
            self._conns.clear()
        for t in self._threads:
            t.join(timeout=2)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.close()


def wait_for(predicate: Callable[[], bool], timeout: float, interval: float = 0.01) -> bool:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(interval)
    return predicate()


def parse_address(text: str) -> Address:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must look like host:port, got {text!r}")
    return host, int(port)

