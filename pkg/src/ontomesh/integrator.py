"""Combine estimator matrices into copy/merge commands and execute them.

The flow for one integration job is::

    matrices = [estimate_matrix(name, a, b) for name in estimators]
    aggregate = aggregate_matrices(matrices, policy)
    matches = select_matches(aggregate, policy.threshold)
    commands = build_commands(matches, a, b)
    merged = execute_integration(a, b, commands)

``integrate_pipeline`` runs all of it and keeps every intermediate result.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence, Union

import numpy as np

from .errors import IntegrationError, OntomeshError, ParseError, ValidationError
from .model import (Alias, ClassDef, InstanceDef, OntologyModel, PropertyDef,
                    dumps_canonical, topological_order)
from .similarity import (EstimatorConfig, SimilarityMatrix, estimate_matrix,
                         normalize)

TIE_BREAK = "score-desc,row-asc,col-asc"


@dataclass(frozen=True)
class AggregationPolicy:
    weights: dict[str, float]
    threshold: float = 0.7
    tie_break: str = TIE_BREAK

    def __post_init__(self):
        if any(w < 0 for w in self.weights.values()):
            raise ValidationError("weights must be non-negative", str(self.weights))
        total = sum(self.weights.values())
        if total <= 0:
            raise ValidationError("at least one weight must be positive", str(self.weights))
        if not 0 < self.threshold <= 1:
            raise ValidationError("threshold must lie in (0, 1]", str(self.threshold))
        if self.tie_break != TIE_BREAK:
            raise ValidationError("unsupported tie-break rule", self.tie_break)
        object.__setattr__(self, "weights",
                           {k: v / total for k, v in sorted(self.weights.items())})

    @classmethod
    def uniform(cls, estimators: Iterable[str], threshold: float = 0.7) -> "AggregationPolicy":
        return cls({e: 1.0 for e in estimators}, threshold)

    def to_json(self) -> dict:
        return {"weights": self.weights, "threshold": self.threshold, "tie_break": self.tie_break}


class Match(NamedTuple):
    class_a: str
    class_b: str
    score: float


@dataclass(frozen=True)
class Merge:
    class_a: str
    class_b: str
    score: float

    def to_json(self) -> dict:
        return {"kind": "merge", "class_a": self.class_a, "class_b": self.class_b,
                "score": round(self.score, 12)}


@dataclass(frozen=True)
class Copy:
    class_: str
    side: str = "B"

    def to_json(self) -> dict:
        return {"kind": "copy", "class": self.class_, "side": self.side}


IntegrationCommand = Union[Merge, Copy]


def aggregate_matrices(matrices: Sequence[SimilarityMatrix],
                       policy: AggregationPolicy) -> SimilarityMatrix:
    if not matrices:
        raise IntegrationError("empty matrix list")
    rows, cols = matrices[0].rows, matrices[0].cols
    for m in matrices[1:]:
        if m.rows != rows or m.cols != cols:
            raise IntegrationError(f"dimension mismatch: {m.estimator} vs {matrices[0].estimator}")
    weights = [policy.weights.get(m.estimator, 0.0) for m in matrices]
    total = sum(weights)
    if total <= 0:
        raise IntegrationError("no estimator in the matrix list has a positive weight")
    grid = sum(w / total * m.scores for w, m in zip(weights, matrices))
    return SimilarityMatrix(rows, cols, np.clip(grid, 0.0, 1.0), "aggregate",
                            {"weights": {m.estimator: w / total for w, m in zip(weights, matrices)}})


def select_matches(matrix: SimilarityMatrix, threshold: float) -> list[Match]:
    """Greedy one-to-one assignment on the globally best remaining cell."""
    cells = [
        (-float(matrix.scores[i, j]), a, b)
        for i, a in enumerate(matrix.rows)
        for j, b in enumerate(matrix.cols)
        if matrix.scores[i, j] >= threshold
    ]
    cells.sort()
    used_a, used_b, out = set(), set(), []
    for neg, a, b in cells:
        if a not in used_a and b not in used_b:
            used_a.add(a)
            used_b.add(b)
            out.append(Match(a, b, -neg))
    return out


def build_commands(matches: Iterable[Match], model_a: OntologyModel,
                   model_b: OntologyModel) -> list[IntegrationCommand]:
    partner: dict[str, Match] = {}
    seen_a = set()
    for m in matches:
        if m.class_b in partner or m.class_a in seen_a:
            raise IntegrationError(f"matches are not one-to-one at {m}")
        partner[m.class_b] = m
        seen_a.add(m.class_a)
    commands: list[IntegrationCommand] = []
    for cid in topological_order(model_b):
        m = partner.get(cid)
        commands.append(Merge(m.class_a, cid, m.score) if m else Copy(cid, "B"))
    return commands


def _fresh_id(base: str, taken) -> str:
    if base not in taken:
        return base
    n = 2
    while f"{base}_{n}" in taken:
        n += 1
    return f"{base}_{n}"


@dataclass
class MergeResult:
    model: OntologyModel
    class_map: dict[str, str]
    property_map: dict[str, str]
    instance_map: dict[str, str]
    deduplicated: list[tuple[str, str]]


def merge(model_a: OntologyModel, model_b: OntologyModel,
          commands: Sequence[IntegrationCommand]) -> MergeResult:
    """Execute a command list and return the merged model with id mappings."""
    classes: dict[str, ClassDef] = dict(model_a.classes)
    class_map: dict[str, str] = {}
    merged_a: set[str] = set()

    def mapped_parents(cid: str) -> tuple[str, ...]:
        try:
            return tuple(class_map[p] for p in model_b.classes[cid].parents)
        except KeyError as exc:
            raise IntegrationError(
                f"command for {cid!r} precedes the command for its parent {exc.args[0]!r}") from None

    for cmd in commands:
        if isinstance(cmd, Merge):
            if cmd.class_a not in model_a.classes or cmd.class_b not in model_b.classes:
                raise IntegrationError(f"invalid command: unknown class in {cmd}")
            if cmd.class_a in merged_a or cmd.class_b in class_map:
                raise IntegrationError(f"invalid command: class used twice in {cmd}")
            parents = mapped_parents(cmd.class_b)
            class_map[cmd.class_b] = cmd.class_a
            merged_a.add(cmd.class_a)
            target, source = classes[cmd.class_a], model_b.classes[cmd.class_b]
            if source.label != target.label or set(parents) != set(target.parents):
                classes[cmd.class_a] = ClassDef(
                    target.id, target.label, target.parents,
                    target.aliases + (Alias(source.label, parents),))
        elif isinstance(cmd, Copy):
            if cmd.side != "B" or cmd.class_ not in model_b.classes:
                raise IntegrationError(f"invalid command: {cmd}")
            if cmd.class_ in class_map:
                raise IntegrationError(f"invalid command: class used twice in {cmd}")
            parents = mapped_parents(cmd.class_)
            new_id = _fresh_id(cmd.class_, classes)
            class_map[cmd.class_] = new_id
            source = model_b.classes[cmd.class_]
            classes[new_id] = ClassDef(new_id, source.label, parents)
        else:
            raise IntegrationError(f"invalid command: {cmd!r}")
    missing = set(model_b.classes) - set(class_map)
    if missing:
        raise IntegrationError(f"invalid command list: no command for {sorted(missing)}")
    # aliases copied from B need their parents remapped too
    for b_id, new_id in class_map.items():
        src = model_b.classes[b_id]
        if new_id not in model_a.classes and src.aliases:
            c = classes[new_id]
            classes[new_id] = ClassDef(c.id, c.label, c.parents, tuple(
                Alias(a.label, tuple(class_map[p] for p in a.parents)) for a in src.aliases))

    properties: dict[str, PropertyDef] = dict(model_a.properties)
    by_shape = {(normalize(p.label), p.domain, p.range): p.id for p in properties.values()}
    property_map: dict[str, str] = {}
    for p in model_b.properties.values():
        rng = class_map.get(p.range, p.range) if p.range in model_b.classes else p.range
        shape = (normalize(p.label), class_map[p.domain], rng)
        if shape in by_shape:
            property_map[p.id] = by_shape[shape]
            continue
        new_id = _fresh_id(p.id, properties)
        properties[new_id] = PropertyDef(new_id, p.label, class_map[p.domain], rng)
        by_shape[shape] = new_id
        property_map[p.id] = new_id

    instances: dict[str, InstanceDef] = dict(model_a.instances)
    identity = {i.lower(): i for i in instances}
    instance_map: dict[str, str] = {}
    deduplicated: list[tuple[str, str]] = []
    fresh: list[InstanceDef] = []
    for inst in model_b.instances.values():
        same = identity.get(inst.id.lower())
        if same is not None:
            instance_map[inst.id] = same
            deduplicated.append((same, inst.id))
            continue
        new_id = _fresh_id(inst.id, instances.keys() | instance_map.values())
        instance_map[inst.id] = new_id
        identity[new_id.lower()] = new_id
        fresh.append(inst)
    for inst in fresh:
        values = {}
        for pid, vals in inst.values.items():
            linked = model_b.properties[pid].range in model_b.classes
            values[property_map[pid]] = tuple(instance_map[v] if linked else v for v in vals)
        new_id = instance_map[inst.id]
        instances[new_id] = InstanceDef(new_id, class_map[inst.class_], values)

    try:
        model = OntologyModel(model_a.name, classes.values(), properties.values(), instances.values())
    except ValidationError as exc:
        raise IntegrationError(f"integration produced an invalid model (defect): {exc}") from exc
    return MergeResult(model, class_map, property_map, instance_map, deduplicated)


def execute_integration(model_a: OntologyModel, model_b: OntologyModel,
                        commands: Sequence[IntegrationCommand]) -> OntologyModel:
    return merge(model_a, model_b, commands).model


# -- evaluation -------------------------------------------------------------

@dataclass
class QualityReport:
    unconditional: float
    conditional: float
    obtained: list[tuple[str, str]]
    expected: list[tuple[str, str]]
    correct: list[tuple[str, str]]
    flags: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "unconditional": self.unconditional,
            "conditional": self.conditional,
            "obtained": [list(p) for p in self.obtained],
            "expected": [list(p) for p in self.expected],
            "correct": [list(p) for p in self.correct],
            "flags": self.flags,
        }


def quality_report(obtained: Iterable[Sequence[str]], gold: Iterable[Sequence[str]]) -> QualityReport:
    """Unconditional quality = correct / expected; conditional = correct / obtained.

    Empty denominators resolve to 1.0 with a flag (``empty-gold`` or
    ``zero-obtained``).
    """
    got = sorted({(m[0], m[1]) for m in obtained})
    exp = sorted({(m[0], m[1]) for m in gold})
    correct = sorted(set(got) & set(exp))
    flags = []
    if exp:
        unconditional = len(correct) / len(exp)
    else:
        unconditional = 1.0
        flags.append("empty-gold")
    if got:
        conditional = len(correct) / len(got)
    else:
        conditional = 1.0
        flags.append("zero-obtained")
    return QualityReport(unconditional, conditional, got, exp, correct, flags)


def load_alignment(data: bytes | str) -> list[tuple[str, str]]:
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(str(exc)) from None
    if isinstance(doc, dict):
        doc = doc.get("pairs")
    if not isinstance(doc, list) or not all(
            isinstance(p, list) and len(p) == 2 and all(isinstance(x, str) for x in p) for p in doc):
        raise ParseError("alignment must be a list of [class_a, class_b] pairs")
    return [(a, b) for a, b in doc]


def save_alignment(pairs: Iterable[Sequence[str]]) -> bytes:
    return dumps_canonical(sorted([p[0], p[1]] for p in pairs))


# -- pipeline ---------------------------------------------------------------

@dataclass
class PipelineResult:
    merged: OntologyModel
    commands: list[IntegrationCommand]
    matrices: list[SimilarityMatrix]
    aggregate: SimilarityMatrix
    matches: list[Match]
    deduplicated: list[tuple[str, str]]
    report: Optional[QualityReport] = None

    @property
    def copies(self) -> list[Copy]:
        return [c for c in self.commands if isinstance(c, Copy)]

    def to_json(self, include_matrices: bool = False) -> dict:
        out = {
            "commands": [c.to_json() for c in self.commands],
            "matches": [[m.class_a, m.class_b, round(m.score, 12)] for m in self.matches],
            "deduplicated_instances": [list(p) for p in self.deduplicated],
            "quality": self.report.to_json() if self.report else None,
        }
        if include_matrices:
            out["matrices"] = [m.to_json() for m in self.matrices + [self.aggregate]]
        return out


def integrate_pipeline(model_a: OntologyModel, model_b: OntologyModel,
                       estimators: Sequence[str], policy: AggregationPolicy,
                       config: Optional[EstimatorConfig] = None,
                       gold: Optional[Iterable[Sequence[str]]] = None) -> PipelineResult:
    if not estimators:
        raise IntegrationError("estimator list is empty")
    config = config or EstimatorConfig()
    matrices = [estimate_matrix(name, model_a, model_b, config) for name in estimators]
    aggregate = aggregate_matrices(matrices, policy)
    matches = select_matches(aggregate, policy.threshold)
    commands = build_commands(matches, model_a, model_b)
    result = merge(model_a, model_b, commands)
    report = None
    if gold is not None:
        report = quality_report([(m.class_a, m.class_b) for m in matches], gold)
    return PipelineResult(result.model, commands, matrices, aggregate, matches,
                          result.deduplicated, report)


def command_from_json(doc: dict) -> IntegrationCommand:
    kind = doc.get("kind")
    if kind == "merge":
        return Merge(doc["class_a"], doc["class_b"], float(doc.get("score", 1.0)))
    if kind == "copy":
        return Copy(doc["class"], doc.get("side", "B"))
    raise OntomeshError(f"unknown command kind {kind!r}")

