import itertools
import json
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from ontomesh.errors import EstimatorError, ParseError, ValidationError
from ontomesh.model import ClassDef, InstanceDef, OntologyModel, PropertyDef, load_ontology, save_ontology
from ontomesh.similarity import (ESTIMATORS, FLOODING_VARIANTS, SYMMETRIC_ESTIMATORS, EstimatorConfig,
                                 FloodingParams, SimilarityMatrix, SynonymDictionary, UpperMap, anchor,
                                 default_upper_map, dictionary_similarity, estimate_matrix,
                                 instance_similarity, levenshtein, lexical_similarity,
                                 similarity_flooding, structural_similarity, tokens,
                                 upper_anchor_similarity)

# -- lexical ---------------------------------------------------------------

def test_lexical_examples():
    assert lexical_similarity("Product", "product") == 1.0
    assert lexical_similarity("Order", "Orders") == pytest.approx(5 / 6)
    assert lexical_similarity("Factory", "Zzz") < 0.2
    assert lexical_similarity("Factory", "Zzz") == oracles.lexical("Factory", "Zzz")


def test_lexical_ignores_punctuation_and_case():
    assert lexical_similarity("Semi-Product", "semi product") == 1.0


def test_empty_label_rejected():
    with pytest.raises(ValidationError):
        lexical_similarity("", "x")
    with pytest.raises(ValidationError):
        dictionary_similarity("x", "", SynonymDictionary())


labels = st.text(alphabet="abcAB-_ 1óz", min_size=1, max_size=9)


@given(labels, labels)
@settings(max_examples=400, deadline=None)
def test_lexical_matches_recursive_oracle(a, b):
    assert lexical_similarity(a, b) == pytest.approx(oracles.lexical(a, b), abs=1e-12)
    assert lexical_similarity(a, b) == lexical_similarity(b, a)
    assert 0.0 <= lexical_similarity(a, b) <= 1.0
    assert (lexical_similarity(a, b) == 1.0) == (oracles.norm(a) == oracles.norm(b))


@given(st.text(max_size=8), st.text(max_size=8))
@settings(max_examples=300, deadline=None)
def test_levenshtein_oracle(a, b):
    assert levenshtein(a, b) == oracles.edit_distance(a, b)


def test_tokens():
    assert tokens("SteelFactory") == ["steel", "factory"]
    assert tokens("HTTPServer v2") == ["http", "server", "v", "2"]
    assert tokens("semi_product") == ["semi", "product"]


# -- dictionary ------------------------------------------------------------

def test_dictionary_examples():
    d = SynonymDictionary([["factory", "plant"]])
    assert dictionary_similarity("Factory", "Plant", d) == 1.0
    empty = SynonymDictionary()
    assert dictionary_similarity("Factory", "Plant", empty) == pytest.approx(1 / 7)
    assert dictionary_similarity("Factory", "Plant", empty) == oracles.lexical("Factory", "Plant")
    assert dictionary_similarity("Order", "Order", empty) == 1.0


def test_dictionary_groups_are_unioned():
    d = SynonymDictionary([["a", "b"], ["c", "d"], ["b", "c"], ["x"]])
    assert d.synonyms("a", "d") and d.synonyms("d", "a")
    assert not d.synonyms("a", "x")
    assert d.to_json() == [["a", "b", "c", "d"], ["x"]]
    assert SynonymDictionary.loads(json.dumps(d.to_json())).to_json() == d.to_json()


def test_dictionary_file_errors():
    with pytest.raises(ParseError):
        SynonymDictionary.loads("{")
    with pytest.raises(ParseError):
        SynonymDictionary.loads('[["a", 1]]')
    assert SynonymDictionary.loads('{"groups": [["a", "b"]]}').synonyms("a", "b")


words = st.sampled_from(["factory", "plant", "mill", "order", "request", "bolt", "screw", "nut"])


@given(st.lists(st.lists(words, min_size=1, max_size=3), max_size=4), words, words)
@settings(max_examples=200, deadline=None)
def test_dictionary_dominates_lexical(groups, a, b):
    d = SynonymDictionary(groups)
    assert dictionary_similarity(a, b, d) >= lexical_similarity(a, b)
    assert dictionary_similarity(a, b, d) == dictionary_similarity(b, a, d)
    # closure: membership is transitive across overlapping groups
    linked = {w: {w} for g in groups for w in g}
    changed = True
    while changed:
        changed = False
        for g in groups:
            union = set().union(*(linked[w] for w in g))
            for w in union:
                if linked[w] != union and not union <= linked[w]:
                    linked[w] |= union
                    changed = True
    assert d.synonyms(a, b) == (a in linked and b in linked[a])


# -- structural ---------------------------------------------------------------

def _single(cid, *props):
    return OntologyModel("m", [ClassDef(cid, cid)], [PropertyDef(p, p, cid, "string") for p in props])


def test_structural_examples():
    a, b = _single("X", "produces", "locatedIn"), _single("Y", "produces")
    assert structural_similarity(a, "X", b, "Y") == pytest.approx(2 / 3)
    assert structural_similarity(_single("X"), "X", _single("Y"), "Y") == 0.0


def test_structural_identical_signatures():
    def model(prefix):
        return OntologyModel(prefix, [
            ClassDef("P1", "Alpha"), ClassDef("P2", "Beta"), ClassDef("C", "Child", ("P1", "P2")),
        ], [PropertyDef("p", "weight", "C", "decimal")])
    assert structural_similarity(model("a"), "C", model("b"), "C") == 1.0


def test_structural_pairs_within_parts():
    # the same label as a parent on one side and as a child on the other does not pair
    a = OntologyModel("a", [ClassDef("Tool", "Tool"), ClassDef("X", "X", ("Tool",))])
    b = OntologyModel("b", [ClassDef("X", "X"), ClassDef("Tool", "Tool", ("X",))])
    assert structural_similarity(a, "X", b, "X") == 0.0


# -- instances -----------------------------------------------------------------

def test_instance_examples():
    for mode in ("jaccard", "symmetric", "inclusion"):
        assert instance_similarity({"a", "b"}, {"a", "b"}, mode) == 1.0
        assert instance_similarity({"a"}, {"b"}, mode) == 0.0
        assert instance_similarity(set(), set(), mode) == 0.0
    assert instance_similarity({"a", "b"}, {"b", "c"}, "jaccard") == pytest.approx(1 / 3)
    assert instance_similarity({"a", "b"}, {"b", "c"}, "symmetric") == pytest.approx(1 / 2)
    assert instance_similarity({"a", "b"}, {"b", "c"}, "inclusion") == pytest.approx(1 / 2)
    with pytest.raises(EstimatorError):
        instance_similarity({"a"}, {"a"}, "cosine")


def test_instance_exhaustive_six_universe():
    universe = "abcdef"
    subsets = [{universe[i] for i in range(6) if mask >> i & 1} for mask in range(64)]
    checked = 0
    for ma, mb in itertools.product(range(64), repeat=2):
        expect = oracles.set_measures(ma, mb)
        for mode, value in expect.items():
            assert instance_similarity(subsets[ma], subsets[mb], mode) == pytest.approx(value, abs=1e-15)
        checked += 1
    assert checked == 4096


def test_instance_inclusion_is_asymmetric():
    a = OntologyModel("a", [ClassDef("Bolt", "Bolt")], [], [InstanceDef("b1", "Bolt"), InstanceDef("b2", "Bolt")])
    b = OntologyModel("b", [ClassDef("Bolt", "Bolt")], [], [InstanceDef("B1", "Bolt")])
    ab = estimate_matrix("instance-inclusion", a, b).scores
    ba = estimate_matrix("instance-inclusion", b, a).scores
    assert ab[0, 0] == 0.5 and ba[0, 0] == 1.0
    # cross-ontology identity is the lowercased id
    assert estimate_matrix("instance-jaccard", a, b).scores[0, 0] == 0.5


# -- upper anchoring -----------------------------------------------------------

def test_upper_examples():
    upper = default_upper_map()
    a = OntologyModel("a", [ClassDef("Factory", "Factory")])
    b = OntologyModel("b", [ClassDef("Plant", "Plant"), ClassDef("Xyzzy", "Xyzzy")])
    assert upper_anchor_similarity(a, "Factory", b, "Plant", upper) == 1.0
    assert upper_anchor_similarity(a, "Factory", b, "Xyzzy", upper) is None
    m = estimate_matrix("upper", a, b)
    assert m.score("Factory", "Xyzzy") == 0.0
    assert m.meta["coverage"] == 0.5
    assert m.meta["uncovered"] == [["Factory", "Xyzzy"]]


def test_upper_ancestor_rule():
    upper = UpperMap({"Object": None, "Artifact": "Object", "Region": "Object", "Idea": None},
                     {"thing": "Object", "gadget": "Artifact", "city": "Region", "plan": "Idea"})
    m = OntologyModel("m", [ClassDef(c, c) for c in ("Gadget", "Thing", "City", "Plan")])
    assert upper_anchor_similarity(m, "Gadget", m, "Thing", upper) == 0.5
    assert upper_anchor_similarity(m, "Thing", m, "Gadget", upper) == 0.5
    assert upper_anchor_similarity(m, "Gadget", m, "City", upper) == 0.0
    assert upper_anchor_similarity(m, "Plan", m, "Thing", upper) == 0.0


def test_anchor_falls_back_to_ancestors():
    upper = default_upper_map()
    m = OntologyModel("m", [ClassDef("F", "Factory"), ClassDef("K", "Kxq", ("F",)),
                            ClassDef("G", "Gzz", ("K",))])
    assert anchor(m, "G", upper) == "Organization"


def test_upper_map_validation():
    with pytest.raises(ValidationError):
        UpperMap({"A": "Missing"}, {})
    with pytest.raises(ValidationError):
        UpperMap({"A": None}, {"x": "B"})
    with pytest.raises(ParseError):
        UpperMap.loads('{"categories": 3}')
    upper = default_upper_map()
    assert UpperMap.loads(json.dumps(upper.to_json())) == upper


# -- flooding ----------------------------------------------------------------

def test_flooding_single_class():
    a = OntologyModel("a", [ClassDef("P", "Product")])
    m = similarity_flooding(a, a)
    assert m.scores.tolist() == [[1.0]]


def test_flooding_four_pair_instance(load_corpus):
    a, b = load_corpus("flooding-a.onto.json"), load_corpus("flooding-b.onto.json")
    m = similarity_flooding(a, b)
    assert m.score("P", "P2") == 1.0 == m.scores.max()
    assert m.score("P", "P2") > m.score("P", "SubB")
    seed = {("P", "P2"): 1.0}
    labels = {"P": "Product", "SubA": "Bolt", "P2": "Product", "SubB": "Screw"}
    ref, iters, residual = oracles.flooding(
        {"P": [], "SubA": ["P"]}, {"P2": [], "SubB": ["P2"]},
        lambda x, y: oracles.lexical(labels[x], labels[y]))
    for (x, y), v in ref.items():
        assert m.score(x, y) == pytest.approx(v, abs=1e-12)
    assert m.meta["iterations"] == iters and m.meta["converged"]
    assert seed  # the hand-derived maximum


def test_flooding_disconnected_keeps_seed_order():
    a = OntologyModel("a", [ClassDef("x1", "Order"), ClassDef("x2", "Bolt")])
    b = OntologyModel("b", [ClassDef("y1", "Orders"), ClassDef("y2", "Bolts")])
    m = similarity_flooding(a, b)
    seed = estimate_matrix("lexical", a, b).scores
    flat_seed, flat = seed.ravel(), m.scores.ravel()
    for i, j in itertools.combinations(range(4), 2):
        assert np.sign(flat_seed[i] - flat_seed[j]) == np.sign(flat[i] - flat[j])
    np.testing.assert_allclose(m.scores, seed / seed.max())


def test_flooding_matches_oracle_on_demo():
    from ontomesh.supplychain import shipped_fixture
    a, b = shipped_fixture().models()
    # the oracle walks only the subclass edge kinds, so drop class-ranged properties
    def strip(m):
        return OntologyModel(m.name, m.classes.values())
    a, b = strip(a), strip(b)
    m = similarity_flooding(a, b)
    ref, iters, _ = oracles.flooding(
        {c.id: list(c.parents) for c in a.classes.values()},
        {c.id: list(c.parents) for c in b.classes.values()},
        lambda x, y: oracles.lexical(a.classes[x].label, b.classes[y].label))
    for (x, y), v in ref.items():
        assert m.score(x, y) == pytest.approx(v, abs=1e-9)
    assert m.meta["iterations"] == iters


def test_flooding_terminates_on_corpus(corpus_models):
    for a in corpus_models.values():
        for b in corpus_models.values():
            m = similarity_flooding(a, b)
            assert m.meta["iterations"] <= 100
            assert m.meta["converged"] != m.meta["iteration_cap_reached"]
            if m.meta["converged"]:
                assert m.meta["residual"] < 1e-4


@pytest.mark.parametrize("variant", FLOODING_VARIANTS)
def test_flooding_variants_match_oracle(load_corpus, variant):
    a, b = load_corpus("chain.onto.json"), load_corpus("diamond.onto.json")
    a, b = OntologyModel(a.name, a.classes.values()), OntologyModel(b.name, b.classes.values())
    m = similarity_flooding(a, b, FloodingParams(variant=variant))
    ref, iters, residual = oracles.flooding(
        {c.id: list(c.parents) for c in a.classes.values()},
        {c.id: list(c.parents) for c in b.classes.values()},
        lambda x, y: oracles.lexical(a.classes[x].label, b.classes[y].label), variant=variant)
    for (x, y), v in ref.items():
        assert m.score(x, y) == pytest.approx(v, abs=1e-9)
    assert m.meta["iterations"] == iters and m.meta["variant"] == variant


def test_variant_a_can_oscillate_where_c_settles(load_corpus):
    a, b = load_corpus("chain.onto.json"), load_corpus("flooding-b.onto.json")
    plain = similarity_flooding(a, b)
    assert plain.meta["iteration_cap_reached"] and plain.meta["residual"] > 0.01
    assert similarity_flooding(a, b, FloodingParams(variant="C")).meta["converged"]


def test_variant_c_converges_on_corpus(corpus_models):
    params = FloodingParams(variant="C")
    for a in corpus_models.values():
        for b in corpus_models.values():
            meta = similarity_flooding(a, b, params).meta
            assert meta["converged"] and meta["residual"] < 1e-4


def test_flooding_cap_is_flagged():
    from ontomesh.supplychain import shipped_fixture
    a, b = shipped_fixture().models()
    m = similarity_flooding(a, b, FloodingParams(epsilon=1e-12, max_iterations=2))
    assert m.meta["iterations"] == 2
    assert m.meta["iteration_cap_reached"] and not m.meta["converged"]


def test_flooding_params_validated():
    with pytest.raises(ValidationError):
        FloodingParams(epsilon=0)
    with pytest.raises(ValidationError):
        FloodingParams(max_iterations=0)
    with pytest.raises(ValidationError):
        FloodingParams(variant="D")
    a = OntologyModel("a", [ClassDef("P", "P")])
    for seed in ("flooding", "magic"):
        with pytest.raises(EstimatorError):
            similarity_flooding(a, a, FloodingParams(seed_matrix=seed))


def _shuffled(model, rng):
    d = json.loads(save_ontology(model))
    for key in ("classes", "properties", "instances"):
        rng.shuffle(d[key])
    return load_ontology(json.dumps(d))


def test_flooding_order_invariant(corpus_models):
    from ontomesh.supplychain import shipped_fixture
    a, b = shipped_fixture().models()
    rng = random.Random(3)
    ref = similarity_flooding(a, b)
    again = similarity_flooding(_shuffled(a, rng), _shuffled(b, rng))
    assert again.rows == ref.rows and again.cols == ref.cols
    assert np.array_equal(again.scores, ref.scores)


# -- matrices ------------------------------------------------------------------

def test_matrix_shape(load_corpus):
    a = OntologyModel("a", [ClassDef("A", "A"), ClassDef("B", "B")])
    b = load_corpus("products.onto.json")
    m = estimate_matrix("lexical", a, b)
    assert m.shape == (2, 3)
    assert m.rows == ("A", "B") and m.cols == ("Bolt", "Nut", "Product")
    assert ((m.scores >= 0) & (m.scores <= 1)).all()


def test_matrix_rejects_out_of_range():
    with pytest.raises(ValidationError):
        SimilarityMatrix(("a",), ("b",), np.array([[1.5]]), "x")
    with pytest.raises(ValidationError):
        SimilarityMatrix(("a",), ("b", "c"), np.array([[0.5]]), "x")


def test_unknown_estimator():
    a = OntologyModel("a", [ClassDef("A", "A")])
    with pytest.raises(EstimatorError):
        estimate_matrix("telepathy", a, a)


@pytest.mark.parametrize("name", ["lexical", "dictionary"])
def test_self_diagonal_is_max(corpus_model, name):
    m = estimate_matrix(name, corpus_model, corpus_model)
    assert (np.diag(m.scores) == 1.0).all()


@pytest.mark.parametrize("name", ESTIMATORS)
def test_estimators_order_invariant(name, corpus_models):
    config = EstimatorConfig(SynonymDictionary([["factory", "plant"]]))
    rng = random.Random(name)
    models = list(corpus_models.values())
    for a, b in zip(models, models[1:] + models[:1]):
        ref = estimate_matrix(name, a, b, config)
        got = estimate_matrix(name, _shuffled(a, rng), _shuffled(b, rng), config)
        assert got.rows == ref.rows and got.cols == ref.cols
        assert np.array_equal(got.scores, ref.scores)


# -- randomized estimator contracts ------------------------------------------------

VOCAB = ["Product", "Products", "Factory", "Plant", "Bolt", "Bolts", "Steel Bar", "Order",
         "Customer", "Client", "Xyzzy", "Qwop", "Tool", "Tools", "Nut", "City"]


@st.composite
def random_models(draw, name="m"):
    n = draw(st.integers(1, 7))
    classes = []
    for i in range(n):
        parents = draw(st.sets(st.integers(0, i - 1), max_size=2)) if i else set()
        classes.append(ClassDef(f"c{i}", draw(st.sampled_from(VOCAB)), tuple(f"c{p}" for p in parents)))
    props = []
    for j in range(draw(st.integers(0, 3))):
        rng = draw(st.sampled_from(["string", "decimal"] + [c.id for c in classes]))
        props.append(PropertyDef(f"p{j}", draw(st.sampled_from(["produces", "makes", "price", "near"])),
                                 draw(st.sampled_from(classes)).id, rng))
    insts = [InstanceDef(iid, draw(st.sampled_from(classes)).id)
             for iid in draw(st.sets(st.sampled_from(["i1", "i2", "I3", "i4", "i5"]), max_size=5))]
    return OntologyModel(name, classes, props, insts)


CONTRACT_CONFIG = EstimatorConfig(SynonymDictionary([["factory", "plant"], ["customer", "client"]]))


@given(random_models(), random_models())
@settings(max_examples=60, deadline=None)
def test_estimator_contracts_random(a, b):
    for name in ESTIMATORS:
        ab = estimate_matrix(name, a, b, CONTRACT_CONFIG)
        assert ab.shape == (len(a.classes), len(b.classes))
        assert ((ab.scores >= 0.0) & (ab.scores <= 1.0)).all(), name
        if name in SYMMETRIC_ESTIMATORS:
            ba = estimate_matrix(name, b, a, CONTRACT_CONFIG)
            np.testing.assert_allclose(ab.scores, ba.scores.T, rtol=0, atol=1e-12, err_msg=name)
