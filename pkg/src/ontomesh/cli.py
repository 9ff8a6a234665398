"""Command line: ``ontomesh {integrate,serve,query,bench,generate}``.

Exit codes: 0 success, 1 input error, 2 integration error, 3 network error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .errors import IntegrationError, OntomeshError, ParseError, ValidationError
from .integrator import AggregationPolicy, integrate_pipeline, load_alignment
from .model import dumps_canonical, read_ontology, save_ontology
from .protocol import Node, SimulatedNetwork, SocketTransport, parse_address, wait_for
from .similarity import (ESTIMATORS, FLOODING_VARIANTS, EstimatorConfig, FloodingParams,
                         SynonymDictionary, UpperMap)
from .supplychain import generate_fixture

EXIT_OK, EXIT_INPUT, EXIT_INTEGRATION, EXIT_NETWORK = 0, 1, 2, 3

PRESETS = {
    "both-similar": ("lexical",),
    "lexical-only": ("lexical", "dictionary"),
    "structural-only": ("structural", "flooding"),
    "both-dissimilar": ("dictionary", "upper", "instance-jaccard"),
}

REGISTRY_ENV = "ONTOMESH_REGISTRY"
REGISTRY_ALIAS = "registry"

log = logging.getLogger("ontomesh")


class CommandError(Exception):
    def __init__(self, code: int, kind: str, message: str, **extra):
        super().__init__(message)
        self.code, self.kind, self.extra = code, kind, extra


@dataclass
class RunConfig:
    mode: str = "simple"
    preset: Optional[str] = "both-similar"
    estimators: tuple[str, ...] = ()
    weights: dict[str, float] = field(default_factory=dict)
    threshold: float = 0.7
    flooding: FloodingParams = field(default_factory=FloodingParams)
    inputs: tuple[str, ...] = ()
    output: Optional[str] = None

    def __post_init__(self):
        if self.mode == "simple":
            if self.preset not in PRESETS:
                raise ValueError(f"simple mode needs a preset from {sorted(PRESETS)}")
            if self.estimators:
                raise ValueError("--estimators is a full-mode setting")
            self.estimators = PRESETS[self.preset]
        elif self.mode == "full":
            if not self.estimators:
                raise ValueError("full mode needs --estimators")
            self.preset = None
        else:
            raise ValueError(f"unknown mode {self.mode!r}")
        unknown = [e for e in self.estimators if e not in ESTIMATORS]
        if unknown:
            raise ValueError(f"unknown estimators {unknown}; choose from {list(ESTIMATORS)}")
        self.policy()  # weights and threshold are checked here

    def policy(self) -> AggregationPolicy:
        weights = self.weights or {e: 1.0 for e in self.estimators}
        return AggregationPolicy(weights, self.threshold)

    def to_json(self) -> dict:
        return {"mode": self.mode, "preset": self.preset, "estimators": list(self.estimators),
                "policy": self.policy().to_json(),
                "flooding": {"epsilon": self.flooding.epsilon,
                             "max_iterations": self.flooding.max_iterations,
                             "seed_matrix": self.flooding.seed_matrix,
                             "variant": self.flooding.variant}}


# -- helpers -------------------------------------------------------------------

def _read_bytes(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise CommandError(EXIT_INPUT, "input-error", f"cannot read {path}: {exc.strerror}", path=path)


def _load_model(path: str):
    _read_bytes(path)
    try:
        return read_ontology(path)
    except (ParseError, ValidationError) as exc:
        raise CommandError(EXIT_INPUT, "input-error", f"{path}: {exc}", path=path)


def _parse_weights(text: Optional[str]) -> dict[str, float]:
    if not text:
        return {}
    out = {}
    for item in text.split(","):
        name, _, value = item.partition("=")
        try:
            out[name.strip()] = float(value)
        except ValueError:
            raise CommandError(EXIT_INPUT, "input-error", f"bad weight {item!r}; use name=value")
    return out


def _run_config(args, inputs: Sequence[str] = ()) -> RunConfig:
    try:
        return RunConfig(
            mode=args.mode,
            preset=args.preset if args.mode == "simple" else None,
            estimators=tuple(e for e in (args.estimators or "").split(",") if e),
            weights=_parse_weights(args.weights),
            threshold=args.threshold,
            flooding=FloodingParams(args.flooding_epsilon, args.flooding_max_iters,
                                    variant=args.flooding_variant),
            inputs=tuple(inputs),
            output=getattr(args, "out", None),
        )
    except (ValueError, ValidationError) as exc:
        raise CommandError(EXIT_INPUT, "input-error", str(exc))


def _estimator_config(args, run: RunConfig) -> EstimatorConfig:
    config = EstimatorConfig(flooding=run.flooding)
    try:
        if args.dictionary:
            config.dictionary = SynonymDictionary.loads(_read_bytes(args.dictionary))
        if args.upper:
            config.upper = UpperMap.loads(_read_bytes(args.upper))
    except (ParseError, ValidationError) as exc:
        raise CommandError(EXIT_INPUT, "input-error", str(exc))
    return config


def _write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)


def _registry_address(args) -> Optional[tuple[str, int]]:
    text = args.registry or os.environ.get(REGISTRY_ENV)
    if not text:
        return None
    try:
        return parse_address(text)
    except ValueError as exc:
        raise CommandError(EXIT_INPUT, "input-error", str(exc))


# -- commands ------------------------------------------------------------------

def cmd_integrate(args) -> int:
    run = _run_config(args, (args.ontology_a, args.ontology_b))
    model_a, model_b = _load_model(args.ontology_a), _load_model(args.ontology_b)
    gold = None
    if args.gold:
        try:
            gold = load_alignment(_read_bytes(args.gold))
        except ParseError as exc:
            raise CommandError(EXIT_INPUT, "input-error", f"{args.gold}: {exc}", path=args.gold)
    config = _estimator_config(args, run)
    try:
        result = integrate_pipeline(model_a, model_b, run.estimators, run.policy(), config, gold)
    except OntomeshError as exc:
        raise CommandError(EXIT_INTEGRATION, "integration-error", str(exc))

    out = Path(args.out)
    report = {"seed": args.seed, "config": run.to_json(), **result.to_json(args.emit_matrices)}
    _write(out / "merged.onto.json", save_ontology(result.merged))
    _write(out / "commands.json", dumps_canonical(
        {"seed": args.seed, "commands": [c.to_json() for c in result.commands]}))
    _write(out / "report.json", dumps_canonical(report))
    summary = {"merged": str(out / "merged.onto.json"), "merges": len(result.matches),
               "copies": len(result.copies), "seed": args.seed}
    if result.report:
        summary.update(unconditional=result.report.unconditional,
                       conditional=result.report.conditional)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _node_from_args(args, node_id: str, registry: Optional[str]) -> Node:
    run = _run_config(args)
    model = _load_model(args.ontology) if args.ontology else None
    return Node(node_id, model, run.policy(), run.estimators, _estimator_config(args, run),
                registry=registry)


def _dump_events(node: Node, path: Optional[str]) -> None:
    if path:
        lines = [json.dumps(e.to_json(), sort_keys=True) for e in node.events]
        _write(Path(path), ("\n".join(lines) + "\n" if lines else "").encode("utf-8"))


def cmd_serve(args) -> int:
    registry = _registry_address(args)
    if registry and not args.ontology:
        raise CommandError(EXIT_INPUT, "input-error", "a node that joins a registry needs --ontology")
    node = _node_from_args(args, args.id, REGISTRY_ALIAS if registry else None)
    try:
        transport = SocketTransport(node, parse_address(args.listen))
    except OSError as exc:
        raise CommandError(EXIT_NETWORK, "network-error",
                           f"cannot listen on {args.listen}: {exc.strerror or exc}", retriable=True)
    except ValueError as exc:
        raise CommandError(EXIT_INPUT, "input-error", str(exc))
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        try:
            signal.signal(sig, lambda *_: stop.set())
        except ValueError:  # not the main thread
            pass
    with transport:
        if registry:
            transport.learn(REGISTRY_ALIAS, registry)
        transport.call(lambda n: n.start())
        if registry and not wait_for(lambda: node.registered or bool(transport.errors)
                                     or any(e.event == "error" for e in node.events), args.timeout):
            raise CommandError(EXIT_NETWORK, "network-error", "registry did not answer", retriable=True)
        if not node.registered:
            detail = transport.errors or [e.detail.get("error") for e in node.events if e.event == "error"]
            raise CommandError(EXIT_NETWORK, "network-error", f"registration failed: {detail}",
                               retriable=True)
        host, port = transport.address
        print(json.dumps({"node": node.id, "listen": f"{host}:{port}",
                          "registry": args.registry or os.environ.get(REGISTRY_ENV) or "self"}),
              flush=True)
        stop.wait(args.run_for if args.run_for > 0 else None)
    _dump_events(node, args.events)
    return EXIT_OK


def cmd_query(args) -> int:
    registry = _registry_address(args)
    if registry is None:
        raise CommandError(EXIT_INPUT, "input-error", f"no registry: pass --registry or set {REGISTRY_ENV}")
    node = _node_from_args(args, args.id, REGISTRY_ALIAS)
    try:
        transport = SocketTransport(node, parse_address(args.listen))
    except OSError as exc:
        raise CommandError(EXIT_NETWORK, "network-error", f"cannot listen on {args.listen}: {exc}",
                           retriable=True)
    with transport:
        transport.learn(REGISTRY_ALIAS, registry)
        correlation = transport.call(lambda n: n.submit_query())
        query = node.queries[correlation]
        finished = wait_for(lambda: query.complete or bool(transport.errors), args.timeout)
        if transport.errors:
            raise CommandError(EXIT_NETWORK, "network-error", "; ".join(transport.errors), retriable=True)
        if not finished:
            raise CommandError(EXIT_NETWORK, "network-error",
                               f"query {correlation} timed out after {args.timeout}s "
                               f"({len(query.done)}/{len(query.peers)} peers done)", retriable=True)
        merged = transport.call(lambda n: n.model)
    if "no-other-nodes" in query.flags:
        print(json.dumps({"correlation": correlation, "notice": "no-other-nodes"}))
    for done in query.done:
        print(json.dumps({"correlation": correlation, **done}, sort_keys=True))
    if args.out:
        _write(Path(args.out), save_ontology(merged))
    _dump_events(node, args.events)
    failed = [d for d in query.done if d.get("status") != "ok"]
    return EXIT_INTEGRATION if failed and len(failed) == len(query.done) else EXIT_OK


def bench_counts(sizes: Sequence[int], seed: int) -> dict[int, dict[str, int]]:
    """Message ledger of one query flow for each peer count, on the simulated network."""
    a, b = generate_fixture("small", False, seed=seed).models()
    out = {}
    for n in sizes:
        net = SimulatedNetwork()
        query = net.add(Node("q", a, AggregationPolicy.uniform(["lexical"])))
        for i in range(n):
            net.add(Node(f"p{i + 1}", b, registry="q"))
        net.start_all()
        net.reset_counters()
        query.submit_query()
        net.run()
        out[n] = net.ledger()
    return out


def cmd_bench(args) -> int:
    sizes = sorted(set(args.nodes))
    if sizes[0] < 1:
        raise CommandError(EXIT_INPUT, "input-error", "--nodes values must be >= 1")
    probe = sizes if len(sizes) >= 2 else [0] + sizes
    counts = bench_counts(probe, args.seed)
    totals = {n: sum(c.values()) for n, c in counts.items()}
    n1, n2 = probe[0], probe[1]
    a = (totals[n2] - totals[n1]) // (n2 - n1)
    b = totals[n1] - a * n1
    exact = all(totals[n] == a * n + b for n in probe)
    for n in sizes:
        print(json.dumps({"nodes": n, "total": totals[n], "ledger": counts[n]}, sort_keys=True))
    print(json.dumps({"a": a, "b": b, "fit": "exact" if exact else "inexact", "seed": args.seed},
                     sort_keys=True))
    return EXIT_OK if exact else EXIT_INTEGRATION


def cmd_generate(args) -> int:
    fixture = generate_fixture(args.scale, args.convergent, seed=args.seed)
    path = fixture.write(args.out)
    print(json.dumps({"fixture": str(path), "scale": args.scale, "convergent": args.convergent,
                      "seed": args.seed}))
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CommandError(EXIT_INPUT, "usage-error", message)


def _add_integration_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=["simple", "full"], default="simple")
    p.add_argument("--preset", choices=sorted(PRESETS), default="both-similar")
    p.add_argument("--estimators", help="comma-separated estimator names (full mode)")
    p.add_argument("--weights", help="comma-separated name=weight pairs")
    p.add_argument("--threshold", type=float, default=0.7)
    p.add_argument("--flooding-epsilon", type=float, default=1e-4)
    p.add_argument("--flooding-max-iters", type=int, default=100)
    p.add_argument("--flooding-variant", choices=FLOODING_VARIANTS, default="A")
    p.add_argument("--dictionary", help="synonym dictionary (.dict.json)")
    p.add_argument("--upper", help="upper category map (.upper.json)")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ontomesh", description="Distributed ontology integration.")
    parser.add_argument("--version", action="version", version=f"ontomesh {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("integrate", help="integrate ontology B into ontology A offline")
    p.add_argument("ontology_a")
    p.add_argument("ontology_b")
    p.add_argument("--out", default="integration-out")
    p.add_argument("--gold", help="gold alignment (.align.json)")
    p.add_argument("--emit-matrices", action="store_true")
    _add_integration_flags(p)
    p.set_defaults(func=cmd_integrate)

    p = sub.add_parser("serve", help="run a node")
    p.add_argument("--ontology", help="local ontology (optional for a bare registry)")
    p.add_argument("--id", required=True)
    p.add_argument("--listen", default="127.0.0.1:0")
    p.add_argument("--registry", help=f"registry host:port (default ${REGISTRY_ENV}; none = be the registry)")
    p.add_argument("--timeout", type=float, default=10.0)
    p.add_argument("--run-for", type=float, default=0.0, help="stop after this many seconds (0 = forever)")
    p.add_argument("--events", help="write the event log here on exit")
    _add_integration_flags(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("query", help="collect and integrate every node's ontology")
    p.add_argument("--ontology", required=True)
    p.add_argument("--id", default="query")
    p.add_argument("--listen", default="127.0.0.1:0")
    p.add_argument("--registry")
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--out", help="write the merged ontology here")
    p.add_argument("--events", help="write the event log here")
    _add_integration_flags(p)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("bench", help="message counts per query flow on the simulated network")
    p.add_argument("--nodes", type=int, nargs="+", default=[1, 2, 4, 8])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("generate", help="write a supply-chain demo fixture")
    p.add_argument("--scale", choices=["small", "medium"], default="small")
    p.add_argument("--convergent", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=4242)
    p.set_defaults(func=cmd_generate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except CommandError as exc:
        print(json.dumps({"error": exc.kind, "message": str(exc), "exit": exc.code, **exc.extra},
                         sort_keys=True), file=sys.stderr)
        return exc.code
    except IntegrationError as exc:
        print(json.dumps({"error": "integration-error", "message": str(exc), "exit": EXIT_INTEGRATION}),
              file=sys.stderr)
        return EXIT_INTEGRATION


if __name__ == "__main__":
    sys.exit(main())
