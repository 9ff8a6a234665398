"""Class-to-class similarity estimators.

Every estimator fills a ``SimilarityMatrix`` over all class pairs of two
ontologies, rows and columns in sorted class-id order. Pairwise estimators
are exposed individually; ``estimate_matrix`` dispatches by name.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Callable, Iterable, Optional

import numpy as np

from .errors import EstimatorError, ParseError, ValidationError
from .model import OntologyModel, instances_of, neighborhood

ESTIMATORS = (
    "lexical", "dictionary", "structural", "flooding",
    "instance-jaccard", "instance-symmetric", "instance-inclusion", "upper",
)
SYMMETRIC_ESTIMATORS = frozenset(ESTIMATORS) - {"instance-inclusion"}

STRUCTURAL_PAIR_THRESHOLD = 0.8

_NON_ALNUM = re.compile(r"[^0-9a-z]+")
_TOKEN = re.compile(r"[A-Z]+(?=[A-Z][a-z])|[A-Z]?[a-z]+|[A-Z]+|[0-9]+")


def normalize(label: str) -> str:
    return _NON_ALNUM.sub("", label.lower())


def tokens(label: str) -> list[str]:
    """Split a label on case changes and punctuation: "SteelFactory" -> ["steel", "factory"]."""
    return [t.lower() for t in _TOKEN.findall(label)]


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def lexical_similarity(label_a: str, label_b: str) -> float:
    if not label_a or not label_b:
        raise ValidationError("label must be non-empty", label_a or label_b)
    a, b = normalize(label_a), normalize(label_b)
    if a == b:
        return 1.0
    return 1.0 - levenshtein(a, b) / max(len(a), len(b))


# -- synonym dictionary ----------------------------------------------------

class SynonymDictionary:
    """Word groups closed under overlap: groups sharing a word are unioned."""

    def __init__(self, groups: Iterable[Iterable[str]] = ()):
        parent: dict[str, str] = {}

        def find(w):
            while parent[w] != w:
                parent[w] = parent[parent[w]]
                w = parent[w]
            return w

        for group in groups:
            words = [normalize(w) for w in group if normalize(w)]
            for w in words:
                parent.setdefault(w, w)
            for w in words[1:]:
                ra, rb = find(words[0]), find(w)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
        merged: dict[str, set[str]] = {}
        for w in parent:
            merged.setdefault(find(w), set()).add(w)
        self.groups: list[frozenset[str]] = sorted(
            (frozenset(g) for g in merged.values()), key=lambda g: min(g))
        self._group_of = {w: i for i, g in enumerate(self.groups) for w in g}

    def synonyms(self, a: str, b: str) -> bool:
        ga = self._group_of.get(a)
        return ga is not None and ga == self._group_of.get(b)

    def to_json(self) -> list[list[str]]:
        return [sorted(g) for g in self.groups]

    @classmethod
    def loads(cls, data: bytes | str) -> "SynonymDictionary":
        try:
            doc = json.loads(data)
        except json.JSONDecodeError as exc:
            raise ParseError(str(exc)) from None
        if isinstance(doc, dict):
            doc = doc.get("groups")
        if not isinstance(doc, list) or not all(
                isinstance(g, list) and all(isinstance(w, str) for w in g) for g in doc):
            raise ParseError("dictionary must be a list of word lists")
        return cls(doc)


def dictionary_similarity(label_a: str, label_b: str, dictionary: SynonymDictionary) -> float:
    lex = lexical_similarity(label_a, label_b)
    if lex == 1.0 or dictionary.synonyms(normalize(label_a), normalize(label_b)):
        return 1.0
    return lex


# -- structural ------------------------------------------------------------

def _greedy_pairs(sa: frozenset[str], sb: frozenset[str]) -> int:
    cand = []
    for la in sa:
        for lb in sb:
            if not la or not lb:
                continue
            score = lexical_similarity(la, lb)
            if score >= STRUCTURAL_PAIR_THRESHOLD:
                # swap-invariant key keeps the pairing symmetric
                cand.append((-score, min(la, lb), max(la, lb), la, lb))
    cand.sort()
    used_a, used_b = set(), set()
    for _, _, _, la, lb in cand:
        if la not in used_a and lb not in used_b:
            used_a.add(la)
            used_b.add(lb)
    return len(used_a)


def structural_similarity(model_a: OntologyModel, class_a: str,
                          model_b: OntologyModel, class_b: str) -> float:
    """Dice overlap of the two neighborhood signatures.

    Labels are paired within each part of the signature (parents with
    parents, children with children, properties with properties).
    """
    sig_a, sig_b = neighborhood(model_a, class_a), neighborhood(model_b, class_b)
    total = sig_a.size() + sig_b.size()
    if total == 0:
        return 0.0
    matched = sum(_greedy_pairs(x, y) for x, y in zip(sig_a, sig_b))
    return 2.0 * matched / total


# -- instance extensions ---------------------------------------------------

def instance_similarity(ext_a: set, ext_b: set, mode: str) -> float:
    if not ext_a and not ext_b:
        return 0.0
    common = len(ext_a & ext_b)
    if mode == "jaccard":
        return common / len(ext_a | ext_b)
    if mode == "symmetric":
        return 2 * common / (len(ext_a) + len(ext_b))
    if mode == "inclusion":
        return common / len(ext_a) if ext_a else 0.0
    raise EstimatorError(f"unknown instance mode {mode!r}")


def extension(model: OntologyModel, class_id: str) -> frozenset[str]:
    """Transitive instance extension under the cross-ontology identity rule
    (instances are the same iff their lowercased ids are equal)."""
    return frozenset(i.lower() for i in instances_of(model, class_id, transitive=True))


# -- upper ontology anchoring ----------------------------------------------

@dataclass
class UpperMap:
    categories: dict[str, Optional[str]]
    anchors: dict[str, str]

    def __post_init__(self):
        for cat, parent in self.categories.items():
            if parent is not None and parent not in self.categories:
                raise ValidationError("category parent must exist", parent)
        for token, cat in self.anchors.items():
            if cat not in self.categories:
                raise ValidationError("anchor target must be a category", cat)
        self.anchors = {t.lower(): c for t, c in self.anchors.items()}

    def ancestors(self, cat: str) -> list[str]:
        out = []
        seen = {cat}
        while (cat := self.categories[cat]) is not None and cat not in seen:
            seen.add(cat)
            out.append(cat)
        return out

    @classmethod
    def loads(cls, data: bytes | str) -> "UpperMap":
        try:
            doc = json.loads(data)
            cats = {c["id"]: c.get("parent") for c in doc["categories"]}
            anchors = dict(doc["anchors"])
        except (json.JSONDecodeError, KeyError, TypeError, AttributeError) as exc:
            raise ParseError(f"bad upper map: {exc}") from None
        return cls(cats, anchors)

    def to_json(self) -> dict:
        return {
            "categories": [{"id": c, "parent": p} for c, p in sorted(self.categories.items())],
            "anchors": dict(sorted(self.anchors.items())),
        }


def default_upper_map() -> UpperMap:
    return UpperMap.loads(resources.files("ontomesh.data").joinpath("upper.upper.json").read_bytes())


def anchor(model: OntologyModel, class_id: str, upper: UpperMap) -> Optional[str]:
    """Category of the first anchored label token, searching the class and
    then its ancestors breadth-first."""
    frontier, seen = [class_id], {class_id}
    while frontier:
        nxt = []
        for cid in frontier:
            for tok in tokens(model.class_(cid).label):
                if tok in upper.anchors:
                    return upper.anchors[tok]
        for cid in frontier:
            for p in model.classes[cid].parents:
                if p not in seen:
                    seen.add(p)
                    nxt.append(p)
        frontier = nxt
    return None


def upper_anchor_similarity(model_a: OntologyModel, class_a: str,
                            model_b: OntologyModel, class_b: str,
                            upper: UpperMap) -> Optional[float]:
    """1.0 for the same category, 0.5 when one category subsumes the other,
    0.0 otherwise; ``None`` when either class has no anchor."""
    ca, cb = anchor(model_a, class_a, upper), anchor(model_b, class_b, upper)
    if ca is None or cb is None:
        return None
    if ca == cb:
        return 1.0
    if ca in upper.ancestors(cb) or cb in upper.ancestors(ca):
        return 0.5
    return 0.0


# -- matrices --------------------------------------------------------------

@dataclass
class SimilarityMatrix:
    rows: tuple[str, ...]
    cols: tuple[str, ...]
    scores: np.ndarray
    estimator: str
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.rows, self.cols = tuple(self.rows), tuple(self.cols)
        scores = np.asarray(self.scores, dtype=float)
        if scores.size != len(self.rows) * len(self.cols):
            raise ValidationError("matrix must cover every class pair",
                                  f"{scores.size} cells for {len(self.rows)}x{len(self.cols)}")
        self.scores = scores.reshape(len(self.rows), len(self.cols))
        if np.isnan(self.scores).any():
            raise ValidationError("scores must be numbers", self.estimator)
        if self.scores.size and (self.scores.min() < 0.0 or self.scores.max() > 1.0):
            raise ValidationError("scores must lie in [0, 1]", self.estimator)

    @property
    def shape(self) -> tuple[int, int]:
        return self.scores.shape

    def score(self, row: str, col: str) -> float:
        return float(self.scores[self.rows.index(row), self.cols.index(col)])

    def transpose(self) -> "SimilarityMatrix":
        return SimilarityMatrix(self.cols, self.rows, self.scores.T.copy(), self.estimator, dict(self.meta))

    def to_json(self) -> dict:
        return {
            "estimator": self.estimator,
            "rows": list(self.rows),
            "cols": list(self.cols),
            "scores": [[round(float(v), 12) for v in row] for row in self.scores],
            "meta": self.meta,
        }


# Fixpoint update rules, phi being one round of propagation:
#   basic: s + phi(s)    A: s0 + phi(s)    B: phi(s0 + s)    C: s0 + s + phi(s0 + s)
FLOODING_VARIANTS = ("basic", "A", "B", "C")


@dataclass(frozen=True)
class FloodingParams:
    epsilon: float = 1e-4
    max_iterations: int = 100
    seed_matrix: str = "lexical"
    variant: str = "A"

    def __post_init__(self):
        if self.variant not in FLOODING_VARIANTS:
            raise ValidationError("unknown flooding variant", str(self.variant))
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be positive", str(self.epsilon))
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise ValidationError("max_iterations must be a positive integer", str(self.max_iterations))


@dataclass
class EstimatorConfig:
    """Resources some estimators need; defaults are an empty synonym
    dictionary, the shipped upper map and default flooding parameters."""

    dictionary: SynonymDictionary = field(default_factory=SynonymDictionary)
    upper: Optional[UpperMap] = None
    flooding: FloodingParams = field(default_factory=FloodingParams)

    def upper_map(self) -> UpperMap:
        if self.upper is None:
            self.upper = default_upper_map()
        return self.upper


def _edge_kinds(model: OntologyModel, shared_props: set[str]) -> dict[tuple, np.ndarray]:
    ids = list(model.classes)
    pos = {c: i for i, c in enumerate(ids)}
    n = len(ids)
    kinds: dict[tuple, np.ndarray] = {("subclass-of",): np.zeros((n, n)), ("superclass-of",): np.zeros((n, n))}
    for c in model.classes.values():
        for p in c.parents:
            kinds[("subclass-of",)][pos[c.id], pos[p]] = 1.0
            kinds[("superclass-of",)][pos[p], pos[c.id]] = 1.0
    for label in shared_props:
        kinds[("property", label)] = np.zeros((n, n))
        kinds[("property-of", label)] = np.zeros((n, n))
    for prop in model.properties.values():
        label = normalize(prop.label)
        if label in shared_props and prop.range in model.classes:
            kinds[("property", label)][pos[prop.domain], pos[prop.range]] = 1.0
            kinds[("property-of", label)][pos[prop.range], pos[prop.domain]] = 1.0
    return kinds


def _class_linked_props(model: OntologyModel) -> set[str]:
    return {normalize(p.label) for p in model.properties.values() if p.range in model.classes}


def _row_normalized(adj: np.ndarray) -> np.ndarray:
    out = adj.sum(axis=1, keepdims=True)
    return np.divide(adj, out, out=np.zeros_like(adj), where=out > 0)


def similarity_flooding(model_a: OntologyModel, model_b: OntologyModel,
                        params: FloodingParams = FloodingParams(),
                        config: Optional[EstimatorConfig] = None) -> SimilarityMatrix:
    """Propagate seed similarities over the pairwise-connectivity graph.

    Pair (a, b) feeds (a2, b2) whenever a -> a2 and b -> b2 share an edge
    kind. Each kind appears with its inverse (subclass-of / superclass-of,
    property / property-of) so scores travel both up and down the
    hierarchies. A pair's outflow along one kind is split evenly over its
    out-edges of that kind. Each round applies the update rule of
    ``params.variant`` (default: seed + propagated) and divides by the grid
    maximum. Variant A can cycle without settling; C is the steadiest.
    """
    if params.seed_matrix == "flooding" or params.seed_matrix not in ESTIMATORS:
        raise EstimatorError(f"seed estimator unavailable: {params.seed_matrix!r}")
    seed = estimate_matrix(params.seed_matrix, model_a, model_b, config)
    s0 = seed.scores
    shared = _class_linked_props(model_a) & _class_linked_props(model_b)
    kinds_a, kinds_b = _edge_kinds(model_a, shared), _edge_kinds(model_b, shared)
    operators = [(_row_normalized(kinds_a[k]).T, _row_normalized(kinds_b[k])) for k in kinds_a]

    def propagate(x):
        out = np.zeros_like(x)
        for left, right in operators:
            out += left @ x @ right
        return out

    s = s0.copy()
    residual, iterations = 0.0, 0
    for iterations in range(1, params.max_iterations + 1):
        if params.variant == "basic":
            nxt = s + propagate(s)
        elif params.variant == "A":
            nxt = s0 + propagate(s)
        elif params.variant == "B":
            nxt = propagate(s0 + s)
        else:
            nxt = s0 + s + propagate(s0 + s)
        top = nxt.max() if nxt.size else 0.0
        if top > 0:
            nxt /= top
        residual = float(np.abs(nxt - s).max()) if s.size else 0.0
        s = nxt
        if residual < params.epsilon:
            break
    converged = residual < params.epsilon
    return SimilarityMatrix(seed.rows, seed.cols, np.clip(s, 0.0, 1.0), "flooding", {
        "seed": params.seed_matrix,
        "variant": params.variant,
        "epsilon": params.epsilon,
        "max_iterations": params.max_iterations,
        "iterations": iterations,
        "residual": residual,
        "converged": converged,
        "iteration_cap_reached": not converged,
    })


def _pairwise(fn: Callable[[str, str], float], model_a: OntologyModel,
              model_b: OntologyModel) -> np.ndarray:
    return np.array([[fn(a, b) for b in model_b.classes] for a in model_a.classes],
                    dtype=float).reshape(len(model_a.classes), len(model_b.classes))


def estimate_matrix(estimator: str, model_a: OntologyModel, model_b: OntologyModel,
                    config: Optional[EstimatorConfig] = None) -> SimilarityMatrix:
    if estimator not in ESTIMATORS:
        raise EstimatorError(f"unknown estimator {estimator!r}")
    config = config or EstimatorConfig()
    rows, cols = tuple(model_a.classes), tuple(model_b.classes)
    la = {c: d.label for c, d in model_a.classes.items()}
    lb = {c: d.label for c, d in model_b.classes.items()}
    meta: dict[str, Any] = {}

    if estimator == "flooding":
        return similarity_flooding(model_a, model_b, config.flooding, config)
    if estimator == "lexical":
        grid = _pairwise(lambda a, b: lexical_similarity(la[a], lb[b]), model_a, model_b)
    elif estimator == "dictionary":
        grid = _pairwise(lambda a, b: dictionary_similarity(la[a], lb[b], config.dictionary),
                         model_a, model_b)
    elif estimator == "structural":
        grid = _pairwise(lambda a, b: structural_similarity(model_a, a, model_b, b),
                         model_a, model_b)
    elif estimator.startswith("instance-"):
        mode = estimator.split("-", 1)[1]
        ext_a = {c: extension(model_a, c) for c in rows}
        ext_b = {c: extension(model_b, c) for c in cols}
        grid = _pairwise(lambda a, b: instance_similarity(ext_a[a], ext_b[b], mode),
                         model_a, model_b)
    else:
        upper = config.upper_map()
        covered = np.ones((len(rows), len(cols)), dtype=bool)
        grid = np.zeros_like(covered, dtype=float)
        for i, a in enumerate(rows):
            for j, b in enumerate(cols):
                v = upper_anchor_similarity(model_a, a, model_b, b, upper)
                if v is None:
                    covered[i, j] = False
                else:
                    grid[i, j] = v
        meta["coverage"] = float(covered.mean()) if covered.size else 1.0
        meta["uncovered"] = [[rows[i], cols[j]] for i, j in zip(*np.nonzero(~covered))]
    return SimilarityMatrix(rows, cols, grid, estimator, meta)
