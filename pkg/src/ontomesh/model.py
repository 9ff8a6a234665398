"""Ontology data model: classes and properties (TBox), instances (ABox).

Models are immutable values validated on construction, so every
``OntologyModel`` that exists satisfies the structural invariants. The
on-disk form is a JSON document (``.onto.json``) with the top-level keys
``name``, ``classes``, ``properties`` and ``instances``.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Iterable, Mapping, NamedTuple, Union

from .errors import (CycleError, ParseError, UnknownClassError,
                     UnknownInstanceError, ValidationError)

DATATYPES = frozenset({"string", "integer", "decimal"})

Literal = Union[str, int, float]


@dataclass(frozen=True)
class Alias:
    """Label of a class absorbed by a merge, with that class's parents
    re-expressed in the merged model."""

    label: str
    parents: tuple[str, ...] = ()


@dataclass(frozen=True)
class ClassDef:
    id: str
    label: str
    parents: tuple[str, ...] = ()
    aliases: tuple[Alias, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple(sorted(set(self.parents))))
        object.__setattr__(self, "aliases", tuple(sorted(
            (Alias(a.label, tuple(sorted(set(a.parents)))) for a in self.aliases),
            key=lambda a: (a.label, a.parents))))


@dataclass(frozen=True)
class PropertyDef:
    id: str
    label: str
    domain: str
    range: str


@dataclass(frozen=True)
class InstanceDef:
    id: str
    class_: str
    values: Mapping[str, tuple[Literal, ...]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(
            self, "values",
            {k: tuple(self.values[k]) for k in sorted(self.values)})


class Signature(NamedTuple):
    parents: frozenset[str]
    children: frozenset[str]
    properties: frozenset[str]

    def size(self) -> int:
        return len(self.parents) + len(self.children) + len(self.properties)


def _index(items: Iterable, kind: str) -> dict:
    out = {}
    for item in items:
        if not isinstance(item.id, str) or not item.id:
            raise ValidationError(f"{kind} id must be a non-empty string", str(item.id))
        if item.id in out:
            raise ValidationError(f"duplicate {kind} id", item.id)
        out[item.id] = item
    return dict(sorted(out.items()))


@dataclass(frozen=True, eq=False)
class OntologyModel:
    name: str
    classes: Mapping[str, ClassDef]
    properties: Mapping[str, PropertyDef]
    instances: Mapping[str, InstanceDef]

    def __init__(self, name: str, classes: Iterable[ClassDef] = (),
                 properties: Iterable[PropertyDef] = (),
                 instances: Iterable[InstanceDef] = ()):
        if isinstance(classes, Mapping):
            classes = classes.values()
        if isinstance(properties, Mapping):
            properties = properties.values()
        if isinstance(instances, Mapping):
            instances = instances.values()
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "classes", _index(classes, "class"))
        object.__setattr__(self, "properties", _index(properties, "property"))
        object.__setattr__(self, "instances", _index(instances, "instance"))
        self._validate()

    def __eq__(self, other):
        if not isinstance(other, OntologyModel):
            return NotImplemented
        return (self.name == other.name
                and self.classes == other.classes
                and self.properties == other.properties
                and self.instances == other.instances)

    def __hash__(self):
        return hash(save_ontology(self))

    def __repr__(self):
        return (f"OntologyModel({self.name!r}, {len(self.classes)} classes, "
                f"{len(self.properties)} properties, {len(self.instances)} instances)")

    # -- validation ---------------------------------------------------------

    def _validate(self) -> None:
        if not isinstance(self.name, str):
            raise ValidationError("name must be a string", repr(self.name))
        for c in self.classes.values():
            if not isinstance(c.label, str) or not c.label:
                raise ValidationError("class label must be non-empty", c.id)
            for p in c.parents:
                if p not in self.classes:
                    raise ValidationError("parent must name an existing class", p)
            for alias in c.aliases:
                if not isinstance(alias.label, str) or not alias.label:
                    raise ValidationError("alias label must be non-empty", c.id)
                for p in alias.parents:
                    if p not in self.classes:
                        raise ValidationError("alias parent must name an existing class", p)
        cycle = self._find_cycle()
        if cycle:
            raise CycleError(cycle)
        for p in self.properties.values():
            if not isinstance(p.label, str):
                raise ValidationError("property label must be a string", p.id)
            if p.domain not in self.classes:
                raise ValidationError("property domain must name an existing class", p.domain)
            if p.range not in self.classes and p.range not in DATATYPES:
                raise ValidationError("property range must be a class or datatype", p.range)
        for inst in self.instances.values():
            if inst.class_ not in self.classes:
                raise ValidationError("instance class must name an existing class", inst.class_)
            for pid, vals in inst.values.items():
                prop = self.properties.get(pid)
                if prop is None:
                    raise ValidationError("instance value key must name an existing property", pid)
                for v in vals:
                    self._check_value(inst.id, prop, v)

    def _check_value(self, inst_id: str, prop: PropertyDef, value: Any) -> None:
        rng = prop.range
        if rng in self.classes:
            if not isinstance(value, str) or value not in self.instances:
                raise ValidationError(
                    f"value of {prop.id} on {inst_id} must be an existing instance", str(value))
            return
        ok = {
            "string": isinstance(value, str),
            "integer": isinstance(value, int) and not isinstance(value, bool),
            "decimal": (isinstance(value, (int, float)) and not isinstance(value, bool)
                        and math.isfinite(value)),
        }[rng]
        if not ok:
            raise ValidationError(
                f"value of {prop.id} on {inst_id} must be a {rng}", repr(value))

    def _find_cycle(self) -> list[str] | None:
        WHITE, GREY, BLACK = 0, 1, 2
        colour = dict.fromkeys(self.classes, WHITE)
        for root in self.classes:
            if colour[root] != WHITE:
                continue
            path = [root]
            stack = [iter(self.classes[root].parents)]
            colour[root] = GREY
            while stack:
                nxt = next(stack[-1], None)
                if nxt is None:
                    colour[path.pop()] = BLACK
                    stack.pop()
                elif colour[nxt] == GREY:
                    cyc = path[path.index(nxt):]
                    k = cyc.index(min(cyc))
                    return cyc[k:] + cyc[:k]
                elif colour[nxt] == WHITE:
                    colour[nxt] = GREY
                    path.append(nxt)
                    stack.append(iter(self.classes[nxt].parents))
        return None

    # -- derived indexes ----------------------------------------------------

    @cached_property
    def children(self) -> dict[str, tuple[str, ...]]:
        kids: dict[str, list[str]] = {c: [] for c in self.classes}
        for c in self.classes.values():
            for p in c.parents:
                kids[p].append(c.id)
        return {k: tuple(sorted(v)) for k, v in kids.items()}

    @cached_property
    def _ancestors(self) -> dict[str, frozenset[str]]:
        memo: dict[str, frozenset[str]] = {}
        for cid in topological_order(self):
            acc = set()
            for p in self.classes[cid].parents:
                acc.add(p)
                acc |= memo[p]
            memo[cid] = frozenset(acc)
        return memo

    def class_(self, class_id: str) -> ClassDef:
        try:
            return self.classes[class_id]
        except KeyError:
            raise UnknownClassError(class_id) from None


def topological_order(model: OntologyModel) -> list[str]:
    """Class ids ordered parents-before-children, ties broken by id."""
    import heapq

    pending = {c: len(d.parents) for c, d in model.classes.items()}
    heap = [c for c, n in pending.items() if n == 0]
    heapq.heapify(heap)
    out = []
    while heap:
        cid = heapq.heappop(heap)
        out.append(cid)
        for child in model.children[cid]:
            pending[child] -= 1
            if pending[child] == 0:
                heapq.heappush(heap, child)
    return out


# -- serialization ---------------------------------------------------------

def _require(record: Any, key: str, where: str):
    if not isinstance(record, dict) or key not in record:
        raise ParseError(f"{where}: missing field {key!r}")
    return record[key]


def _as_list(value: Any, where: str) -> list:
    if not isinstance(value, list):
        raise ParseError(f"{where} must be a list")
    return value


def model_from_dict(doc: Any) -> OntologyModel:
    try:
        return _model_from_dict(doc)
    except TypeError as exc:
        # unhashable or unorderable ids and the like
        raise ValidationError("malformed field", str(exc)) from None


def _model_from_dict(doc: Any) -> OntologyModel:
    if not isinstance(doc, dict):
        raise ParseError("document must be an object")
    classes = []
    for rec in _as_list(_require(doc, "classes", "document"), "classes"):
        aliases = tuple(
            Alias(_require(a, "label", "alias"), tuple(_as_list(a.get("parents", []), "alias parents")))
            for a in _as_list(rec.get("aliases", []) if isinstance(rec, dict) else [], "aliases"))
        classes.append(ClassDef(
            _require(rec, "id", "class"), _require(rec, "label", "class"),
            tuple(_as_list(_require(rec, "parents", "class"), "parents")), aliases))
    properties = [
        PropertyDef(_require(rec, "id", "property"), _require(rec, "label", "property"),
                    _require(rec, "domain", "property"), _require(rec, "range", "property"))
        for rec in _as_list(_require(doc, "properties", "document"), "properties")
    ]
    instances = []
    for rec in _as_list(_require(doc, "instances", "document"), "instances"):
        values = _require(rec, "values", "instance")
        if not isinstance(values, dict):
            raise ParseError("instance values must be an object")
        instances.append(InstanceDef(
            _require(rec, "id", "instance"), _require(rec, "class", "instance"),
            {k: tuple(_as_list(v, "instance value")) for k, v in values.items()}))
    return OntologyModel(_require(doc, "name", "document"), classes, properties, instances)


def model_to_dict(model: OntologyModel) -> dict:
    classes = []
    for c in model.classes.values():
        rec: dict[str, Any] = {"id": c.id, "label": c.label, "parents": list(c.parents)}
        if c.aliases:
            rec["aliases"] = [{"label": a.label, "parents": list(a.parents)} for a in c.aliases]
        classes.append(rec)
    return {
        "name": model.name,
        "classes": classes,
        "properties": [
            {"id": p.id, "label": p.label, "domain": p.domain, "range": p.range}
            for p in model.properties.values()
        ],
        "instances": [
            {"id": i.id, "class": i.class_, "values": {k: list(v) for k, v in i.values.items()}}
            for i in model.instances.values()
        ],
    }


def load_ontology(data: bytes | str) -> OntologyModel:
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"not UTF-8: {exc}") from None
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(str(exc)) from None
    return model_from_dict(doc)


def dumps_canonical(obj: Any) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n").encode("utf-8")


def save_ontology(model: OntologyModel) -> bytes:
    return dumps_canonical(model_to_dict(model))


def read_ontology(path) -> OntologyModel:
    with open(path, "rb") as fh:
        return load_ontology(fh.read())


# -- reasoning -------------------------------------------------------------

def subclass_closure(model: OntologyModel, class_id: str) -> set[str]:
    model.class_(class_id)
    return set(model._ancestors[class_id])


def descendants(model: OntologyModel, class_id: str) -> set[str]:
    model.class_(class_id)
    seen: set[str] = set()
    todo = deque(model.children[class_id])
    while todo:
        c = todo.popleft()
        if c not in seen:
            seen.add(c)
            todo.extend(model.children[c])
    return seen


def is_instance_of(model: OntologyModel, instance_id: str, class_id: str) -> bool:
    inst = model.instances.get(instance_id)
    if inst is None:
        raise UnknownInstanceError(instance_id)
    model.class_(class_id)
    return inst.class_ == class_id or class_id in model._ancestors[inst.class_]


def instances_of(model: OntologyModel, class_id: str, transitive: bool = True) -> set[str]:
    model.class_(class_id)
    targets = {class_id}
    if transitive:
        targets |= descendants(model, class_id)
    return {i.id for i in model.instances.values() if i.class_ in targets}


def neighborhood(model: OntologyModel, class_id: str) -> Signature:
    cls = model.class_(class_id)
    scope = {class_id} | model._ancestors[class_id]
    return Signature(
        frozenset(model.classes[p].label for p in cls.parents),
        frozenset(model.classes[c].label for c in model.children[class_id]),
        frozenset(p.label for p in model.properties.values() if p.domain in scope),
    )
