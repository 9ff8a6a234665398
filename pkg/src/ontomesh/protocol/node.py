"""Message-driven node: container, queue, query and integration roles.

A node reacts to one message at a time (``handle``) and runs at most one
queued integration job per ``step_integration`` call. Transports decide
when those are invoked; the node never blocks and never spawns threads.

Query flow started at node Q over N peers::

    Q -> registry   NodeList (request)
    registry -> Q   NodeList (node list)
    Q -> P          OntologyRequest              } once per peer
    P internal      spawn + return (2 hops)      }
    P -> Q          OntologyResponse             }
    Q -> Q          Enqueue                      }
    Q -> Q          IntegrationDone              }
"""

from __future__ import annotations

import json
import logging
import time
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

from ..errors import OntomeshError
from ..integrator import AggregationPolicy, PipelineResult, integrate_pipeline
from ..model import OntologyModel, load_ontology, save_ontology
from ..similarity import EstimatorConfig
from .messages import MessageType, NodeMessage

log = logging.getLogger(__name__)

INTERNAL = "internal"
SPAWN_HOPS = 2


class DuplicateNodeError(OntomeshError):
    pass


class Repository:
    """Node registry; preserves registration order."""

    def __init__(self):
        self.nodes: dict[str, Any] = {}

    def register(self, node_id: str, address: Any = None) -> "Repository":
        if node_id in self.nodes:
            raise DuplicateNodeError(f"node {node_id!r} already registered")
        self.nodes[node_id] = address
        return self

    def listing(self) -> list[tuple[str, Any]]:
        return list(self.nodes.items())


def register_node(repo: Repository, node_id: str, address: Any = None) -> Repository:
    return repo.register(node_id, address)


@dataclass
class Job:
    correlation: str
    ontology: str
    origin: str


@dataclass
class IntegrationQueue:
    pending: deque = field(default_factory=deque)
    active: Optional[Job] = None


@dataclass
class IntegrationResult:
    correlation: str
    origin: str
    ok: bool
    error: Optional[str] = None
    pipeline: Optional[PipelineResult] = None

    def summary(self) -> dict:
        out = {"origin": self.origin, "status": "ok" if self.ok else "failed"}
        if self.ok:
            p = self.pipeline
            out.update(merges=len(p.matches), copies=len(p.copies),
                       classes=len(p.merged.classes), instances=len(p.merged.instances))
        else:
            out["error"] = self.error
        return out


@dataclass
class QueryState:
    correlation: str
    peers: list[str] = field(default_factory=list)
    done: list[dict] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    listed: bool = False

    @property
    def complete(self) -> bool:
        return self.listed and len(self.done) == len(self.peers)


@dataclass(frozen=True)
class Event:
    timestamp: float
    node: str
    event: str
    correlation: str
    detail: dict = field(default_factory=dict)

    def key(self) -> tuple:
        """Event identity without the timestamp."""
        return (self.node, self.event, self.correlation, json.dumps(self.detail, sort_keys=True))

    def to_json(self) -> dict:
        return {"timestamp": self.timestamp, "node": self.node, "event": self.event,
                "correlation": self.correlation, **self.detail}


class Node:
    def __init__(self, node_id: str, model: Optional[OntologyModel],
                 policy: Optional[AggregationPolicy] = None,
                 estimators: Sequence[str] = ("lexical",),
                 config: Optional[EstimatorConfig] = None,
                 registry: Optional[str] = None,
                 address: Any = None,
                 clock: Callable[[], float] = time.time):
        self.id = node_id
        self.model = model
        self.estimators = tuple(estimators)
        self.policy = policy or AggregationPolicy.uniform(self.estimators)
        self.config = config or EstimatorConfig()
        self.registry = registry or node_id
        self.repository = Repository() if self.registry == node_id else None
        self.address = address
        self.queue = IntegrationQueue()
        self.sent: Counter = Counter()
        self.received: Counter = Counter()
        self.dropped: Counter = Counter()
        self.events: list[Event] = []
        self.queries: dict[str, QueryState] = {}
        self.results: list[IntegrationResult] = []
        self.registered = False
        self.transport = None
        self._clock = clock
        self._query_seq = 0

    def __repr__(self):
        return f"Node({self.id!r}, registry={self.registry!r})"

    # -- plumbing -----------------------------------------------------------

    def attach(self, transport) -> None:
        self.transport = transport

    def send(self, dest: str, type_: MessageType, correlation: str = "", **payload) -> None:
        msg = NodeMessage(type_, self.id, correlation, payload)
        self.sent[msg.type.value] += 1
        self.transport.send(dest, msg)

    def emit(self, event: str, correlation: str = "", **detail) -> None:
        self.events.append(Event(self._clock(), self.id, event, correlation, detail))

    def ledger(self) -> dict[str, int]:
        return dict(sorted(self.sent.items()))

    # -- startup ------------------------------------------------------------

    def start(self) -> None:
        """Register with the repository.

        The registry node registers itself locally, unless it holds no
        ontology, in which case it only keeps the node list.
        """
        if self.repository is not None:
            if self.model is not None:
                self.repository.register(self.id, self.address)
            self.registered = True
        else:
            self.send(self.registry, MessageType.REGISTER, address=self.address)

    # -- query role ---------------------------------------------------------

    def submit_query(self) -> str:
        self._query_seq += 1
        correlation = f"{self.id}-q{self._query_seq}"
        self.queries[correlation] = QueryState(correlation)
        self.emit("query-start", correlation)
        self.send(self.registry, MessageType.NODE_LIST, correlation, reply_to=self.address)
        return correlation

    def _on_node_list(self, msg: NodeMessage) -> None:
        if "nodes" not in msg.payload:
            # request side: only the registry answers
            if self.repository is None:
                self.send(msg.sender, MessageType.ERROR, msg.correlation, error="not a registry")
                return
            self._learn(msg.sender, msg.payload.get("reply_to"))
            self.send(msg.sender, MessageType.NODE_LIST, msg.correlation,
                      nodes=[[nid, addr] for nid, addr in self.repository.listing()])
            return
        query = self.queries.get(msg.correlation)
        if query is None or query.listed:
            self._drop(msg, "stale-correlation")
            return
        query.listed = True
        for nid, addr in msg.payload["nodes"]:
            if nid == self.id:
                continue
            self._learn(nid, addr)
            query.peers.append(nid)
        if not query.peers:
            query.flags.append("no-other-nodes")
            self.emit("query-complete", query.correlation, peers=0, flag="no-other-nodes")
            return
        for nid in query.peers:
            self.send(nid, MessageType.ONTOLOGY_REQUEST, query.correlation, reply_to=self.address)

    def _on_ontology_response(self, msg: NodeMessage) -> None:
        query = self.queries.get(msg.correlation)
        if query is None or msg.sender not in query.peers or query.complete:
            self._drop(msg, "stale-correlation")
            return
        self.send(self.id, MessageType.ENQUEUE, msg.correlation,
                  ontology=msg.payload.get("ontology"), origin=msg.sender)

    def _on_integration_done(self, msg: NodeMessage) -> None:
        query = self.queries.get(msg.correlation)
        if query is None:
            self._drop(msg, "stale-correlation")
            return
        query.done.append(msg.payload)
        if query.complete:
            self.emit("query-complete", query.correlation, peers=len(query.peers))

    # -- container role -----------------------------------------------------

    def _on_ontology_request(self, msg: NodeMessage) -> None:
        self._learn(msg.sender, msg.payload.get("reply_to"))
        # container -> integrating role -> container, inside this node
        self.sent[INTERNAL] += SPAWN_HOPS
        if self.model is None:
            self.send(msg.sender, MessageType.ERROR, msg.correlation, error="node holds no ontology")
            return
        try:
            body = save_ontology(self.model).decode("utf-8")
        except Exception as exc:  # noqa: BLE001 - any failure becomes an Error reply
            self.send(msg.sender, MessageType.ERROR, msg.correlation, error=str(exc))
            return
        self.emit("request-served", msg.correlation, to=msg.sender)
        self.send(msg.sender, MessageType.ONTOLOGY_RESPONSE, msg.correlation, ontology=body)

    # -- queue role ---------------------------------------------------------

    def _on_enqueue(self, msg: NodeMessage) -> None:
        ontology = msg.payload.get("ontology")
        origin = msg.payload.get("origin", msg.sender)
        self.queue.pending.append(Job(msg.correlation, ontology if isinstance(ontology, str) else "", origin))
        self.emit("enqueue", msg.correlation, origin=origin)

    def step_integration(self) -> Optional[IntegrationResult]:
        """Run the next queued job, if any, to completion."""
        if self.queue.active is not None or not self.queue.pending:
            return None
        job = self.queue.active = self.queue.pending.popleft()
        self.emit("integration-start", job.correlation, origin=job.origin)
        try:
            received = load_ontology(job.ontology)
            pipeline = integrate_pipeline(self.model, received, self.estimators,
                                          self.policy, self.config)
        except OntomeshError as exc:
            result = IntegrationResult(job.correlation, job.origin, False, error=str(exc))
            log.warning("node %s: integration of ontology from %s failed: %s", self.id, job.origin, exc)
        else:
            self.model = pipeline.merged
            result = IntegrationResult(job.correlation, job.origin, True, pipeline=pipeline)
        self.results.append(result)
        self.emit("integration-done", job.correlation, origin=job.origin,
                  status="ok" if result.ok else "failed")
        self.queue.active = None
        self.send(self.id, MessageType.INTEGRATION_DONE, job.correlation, **result.summary())
        return result

    def run_integration_loop(self):
        """Yield results until the queue is empty."""
        while (result := self.step_integration()) is not None:
            yield result

    # -- registry role ------------------------------------------------------

    def _on_register(self, msg: NodeMessage) -> None:
        if self.repository is None:
            self.send(msg.sender, MessageType.ERROR, error="not a registry")
            return
        try:
            self.repository.register(msg.sender, msg.payload.get("address"))
        except DuplicateNodeError as exc:
            # answer the newcomer, then restore the registered node's route
            self._learn(msg.sender, msg.payload.get("address"))
            self.send(msg.sender, MessageType.ERROR, error=str(exc))
            self._learn(msg.sender, self.repository.nodes[msg.sender])
            return
        self._learn(msg.sender, msg.payload.get("address"))
        self.send(msg.sender, MessageType.ACK)

    def _on_ack(self, msg: NodeMessage) -> None:
        self.registered = True

    def _on_error(self, msg: NodeMessage) -> None:
        self.emit("error", msg.correlation, source=msg.sender, error=msg.payload.get("error"))
        log.warning("node %s: error from %s: %s", self.id, msg.sender, msg.payload.get("error"))
        query = self.queries.get(msg.correlation)
        if query is None:
            return
        if not query.listed:
            # the registry refused the listing; nothing will follow
            query.listed = True
            query.flags.append("registry-error")
            return
        if msg.sender in query.peers and not query.complete:
            # a peer that cannot serve its ontology counts as a failed integration
            query.done.append({"origin": msg.sender, "status": "failed",
                               "error": msg.payload.get("error")})
            if query.complete:
                self.emit("query-complete", query.correlation, peers=len(query.peers))

    # -- dispatch -----------------------------------------------------------

    _HANDLERS = {
        MessageType.REGISTER: "_on_register",
        MessageType.NODE_LIST: "_on_node_list",
        MessageType.ONTOLOGY_REQUEST: "_on_ontology_request",
        MessageType.ONTOLOGY_RESPONSE: "_on_ontology_response",
        MessageType.ENQUEUE: "_on_enqueue",
        MessageType.INTEGRATION_DONE: "_on_integration_done",
        MessageType.ACK: "_on_ack",
        MessageType.ERROR: "_on_error",
    }

    def handle(self, msg: NodeMessage) -> None:
        self.received[msg.type.value] += 1
        getattr(self, self._HANDLERS[msg.type])(msg)

    def _drop(self, msg: NodeMessage, reason: str) -> None:
        self.dropped[reason] += 1
        log.info("node %s: dropped %s from %s (%s)", self.id, msg.type.value, msg.sender, reason)

    def _learn(self, node_id: str, address: Any) -> None:
        if address is not None and self.transport is not None:
            self.transport.learn(node_id, address)
