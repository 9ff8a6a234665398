from pathlib import Path

import pytest

from ontomesh.model import read_ontology

HERE = Path(__file__).parent
DATA = HERE.parent / "src" / "ontomesh" / "data"
CORPUS_FILES = sorted(HERE.glob("corpus/*.onto.json")) + sorted(DATA.glob("demo*/*.onto.json"))


def corpus_ids():
    return [f"{p.parent.name}/{p.name}" for p in CORPUS_FILES]


@pytest.fixture(params=CORPUS_FILES, ids=corpus_ids())
def corpus_path(request):
    return request.param


@pytest.fixture
def corpus_model(corpus_path):
    return read_ontology(corpus_path)


@pytest.fixture(scope="session")
def corpus_models():
    return {p.name if p.parent.name == "corpus" else f"{p.parent.name}/{p.name}": read_ontology(p)
            for p in CORPUS_FILES}


@pytest.fixture
def load_corpus():
    return lambda name: read_ontology(HERE / "corpus" / name)
