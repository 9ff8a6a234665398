"""Supply-chain demo: factories/products and orders ontologies.

The two generated ontologies share a product taxonomy that is named
slightly differently on each side ("Fastener" vs "Fastenings"). With
``convergent_naming`` the fastener leaves become near-identical
variants (``...BoltM12`` vs ``...BoltM16``) that are different products,
which lures lexical matching into spurious adjustments.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional

from .errors import OntomeshError, UnknownClassError
from .integrator import AggregationPolicy, load_alignment, save_alignment
from .model import (ClassDef, InstanceDef, OntologyModel, PropertyDef,
                    descendants, dumps_canonical, is_instance_of, load_ontology,
                    save_ontology)
from .similarity import (SynonymDictionary, UpperMap, default_upper_map,
                         lexical_similarity, normalize)

SEED = 4242

# policy under which the demo fixtures are evaluated
DEMO_POLICY = AggregationPolicy({"lexical": 2.0, "flooding": 1.0}, threshold=0.7)
DEMO_ESTIMATORS = ("lexical", "flooding")

FILES = {
    "factories": "factories.onto.json",
    "orders": "orders.onto.json",
    "gold": "gold.align.json",
    "dictionary": "synonyms.dict.json",
    "upper": "upper.upper.json",
}

_SYNONYMS = [
    ["factory", "plant", "works", "mill"],
    ["fastener", "fastening", "fastenings", "fixing"],
    ["tool", "implement"],
    ["order", "purchase", "request"],
    ["customer", "client", "buyer"],
    ["location", "place", "site"],
]

_PLAIN_FASTENERS = ["Bolt", "Nut", "Washer", "Rivet", "Screw"]
_CONVERGENT_FACTORY = ["HexagonHeadSteelBoltM8", "HexagonHeadSteelBoltM10",
                       "HexagonHeadSteelBoltM12", "Nut", "Washer"]
_CONVERGENT_ORDERS = ["HexagonHeadSteelBoltM8", "HexagonHeadSteelBoltM10",
                      "HexagonHeadSteelBoltM16", "Nut", "Washer"]
_TOOLS = {"small": ["Hammer", "Wrench"], "medium": ["Hammer", "Wrench", "Saw", "Drill"]}


@dataclass
class DemoFixture:
    factories: bytes
    orders: bytes
    gold: bytes
    dictionary: bytes
    upper: bytes

    def files(self) -> dict[str, bytes]:
        return {FILES[k]: getattr(self, k) for k in FILES}

    def write(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name, data in self.files().items():
            (directory / name).write_bytes(data)
        return directory

    @classmethod
    def read(cls, directory) -> "DemoFixture":
        directory = Path(directory)
        return cls(**{k: (directory / name).read_bytes() for k, name in FILES.items()})

    def models(self) -> tuple[OntologyModel, OntologyModel]:
        return load_ontology(self.factories), load_ontology(self.orders)

    def gold_pairs(self) -> list[tuple[str, str]]:
        return load_alignment(self.gold)

    def synonyms(self) -> SynonymDictionary:
        return SynonymDictionary.loads(self.dictionary)

    def upper_map(self) -> UpperMap:
        return UpperMap.loads(self.upper)


def _snake(label: str) -> str:
    out = []
    for i, ch in enumerate(label):
        if ch.isupper() and i and not label[i - 1].isupper():
            out.append("_")
        out.append(ch.lower())
    return "".join(out)


def _taxonomy(fastener_cat: str, fasteners: list[str], tools: list[str]) -> list[ClassDef]:
    classes = [ClassDef("Product", "Product"),
               ClassDef(fastener_cat, fastener_cat, ("Product",)),
               ClassDef("Tool", "Tool", ("Product",))]
    classes += [ClassDef(f, f, (fastener_cat,)) for f in fasteners]
    classes += [ClassDef(t, t, ("Tool",)) for t in tools]
    return classes


def _catalog(leaves: list[str], rng: random.Random) -> list[InstanceDef]:
    """One or two catalog items per product leaf; shared across both sides
    so the same item ids show up in factories and orders."""
    items = []
    for leaf in leaves:
        for k in range(1 + rng.randrange(2)):
            items.append(InstanceDef(f"{_snake(leaf)}_{k + 1}", leaf))
    return items


def _factories(scale: str, convergent: bool, rng: random.Random) -> OntologyModel:
    fasteners = _CONVERGENT_FACTORY if convergent else _PLAIN_FASTENERS
    tools = _TOOLS[scale]
    classes = _taxonomy("Fastener", fasteners, tools) + [
        ClassDef("Factory", "Factory"),
        ClassDef("MetalFactory", "MetalFactory", ("Factory",)),
        ClassDef("ToolFactory", "ToolFactory", ("Factory",)),
        ClassDef("Location", "Location"),
        ClassDef("City", "City", ("Location",)),
        ClassDef("SemiProduct", "SemiProduct"),
        ClassDef("SteelBar", "SteelBar", ("SemiProduct",)),
        ClassDef("SteelSheet", "SteelSheet", ("SemiProduct",)),
        ClassDef("AluminiumProfile", "AluminiumProfile", ("SemiProduct",)),
    ]
    properties = [
        PropertyDef("produces", "produces", "Factory", "Product"),
        PropertyDef("locatedIn", "locatedIn", "Factory", "Location"),
        PropertyDef("unitPrice", "unitPrice", "Factory", "decimal"),
        PropertyDef("leadTime", "leadTime", "Factory", "integer"),
        PropertyDef("requires", "requires", "Product", "SemiProduct"),
        PropertyDef("requiredAmount", "requiredAmount", "Product", "decimal"),
        PropertyDef("quality", "quality", "Product", "string"),
        PropertyDef("grade", "grade", "SemiProduct", "string"),
    ]
    cities = ["krakow", "warsaw", "gdansk"] + (["poznan", "wroclaw"] if scale == "medium" else [])
    instances = [InstanceDef(c, "City") for c in cities]
    semis = {"steel_bar_s235": "SteelBar", "steel_sheet_dc01": "SteelSheet",
             "alu_profile_6060": "AluminiumProfile"}
    instances += [InstanceDef(i, cls, {"grade": (i.rsplit("_", 1)[1].upper(),)})
                  for i, cls in semis.items()]

    catalog = _catalog(fasteners + tools, rng)
    for item in catalog:
        semi = "alu_profile_6060" if item.class_ in tools else rng.choice(["steel_bar_s235", "steel_sheet_dc01"])
        instances.append(InstanceDef(item.id, item.class_, {
            "requires": (semi,),
            "requiredAmount": (round(rng.uniform(0.05, 2.0), 2),),
            "quality": (rng.choice(["standard", "premium"]),),
        }))
    fastener_items = [i.id for i in catalog if i.class_ in fasteners]
    tool_items = [i.id for i in catalog if i.class_ in tools]
    n_factories = 3 if scale == "small" else 6
    for k in range(n_factories):
        metal = k % 3 != 2
        pool = fastener_items if metal else tool_items
        made = sorted(rng.sample(pool, max(1, len(pool) // 2)))
        instances.append(InstanceDef(
            f"{'metalworks' if metal else 'toolworks'}_{cities[k % len(cities)]}_{k + 1}",
            "MetalFactory" if metal else "ToolFactory", {
                "produces": tuple(made),
                "locatedIn": (cities[k % len(cities)],),
                "unitPrice": (round(rng.uniform(5.0, 40.0), 2),),
                "leadTime": (rng.randint(3, 30),),
            }))
    return OntologyModel("factories", classes, properties, instances)


def _orders(scale: str, convergent: bool, rng: random.Random) -> OntologyModel:
    fasteners = _CONVERGENT_ORDERS if convergent else _PLAIN_FASTENERS
    tools = _TOOLS[scale]
    classes = _taxonomy("Fastenings", fasteners, tools) + [
        ClassDef("Order", "Order"),
        ClassDef("Customer", "Customer"),
    ]
    properties = [
        PropertyDef("orderedProduct", "orderedProduct", "Order", "Product"),
        PropertyDef("placedBy", "placedBy", "Order", "Customer"),
        PropertyDef("quantity", "quantity", "Order", "integer"),
        PropertyDef("deadline", "deadline", "Order", "integer"),
        PropertyDef("maxPrice", "maxPrice", "Order", "decimal"),
    ]
    customers = ["acme_construction", "baltic_shipyard"] + (["carpathia_rail"] if scale == "medium" else [])
    instances = [InstanceDef(c, "Customer") for c in customers]
    units = _catalog(fasteners + tools, rng)
    instances += units
    n_orders = 4 if scale == "small" else 10
    for k in range(n_orders):
        unit = units[rng.randrange(len(units))]
        instances.append(InstanceDef(f"order_{k + 1:03d}", "Order", {
            "orderedProduct": (unit.id,),
            "placedBy": (customers[k % len(customers)],),
            "quantity": (rng.randint(10, 5000),),
            "deadline": (rng.randint(7, 60),),
            "maxPrice": (round(rng.uniform(5.0, 40.0), 2),),
        }))
    return OntologyModel("orders", classes, properties, instances)


def _gold(factories: OntologyModel, orders: OntologyModel) -> list[tuple[str, str]]:
    pairs = [("Product", "Product"), ("Fastener", "Fastenings")]
    shared = set(factories.classes) & set(orders.classes)
    pairs += [(c, c) for c in sorted(shared) if c != "Product"]
    return pairs


def generate_fixture(scale: str = "small", convergent_naming: bool = False,
                     seed: int = SEED) -> DemoFixture:
    if scale not in _TOOLS:
        raise OntomeshError(f"unknown scale {scale!r}")
    rng = random.Random(f"{seed}:{scale}")
    factories = _factories(scale, convergent_naming, rng)
    orders = _orders(scale, convergent_naming, rng)
    return DemoFixture(
        factories=save_ontology(factories),
        orders=save_ontology(orders),
        gold=save_alignment(_gold(factories, orders)),
        dictionary=dumps_canonical(SynonymDictionary(_SYNONYMS).to_json()),
        upper=dumps_canonical(default_upper_map().to_json()),
    )


def shipped_fixture(convergent_naming: bool = False) -> DemoFixture:
    """The small fixture pair shipped in the package data directory."""
    name = "demo-convergent" if convergent_naming else "demo"
    root = resources.files("ontomesh.data").joinpath(name)
    return DemoFixture(**{k: root.joinpath(f).read_bytes() for k, f in FILES.items()})


# -- queries -----------------------------------------------------------------

def _produces_property(model: OntologyModel) -> str:
    for p in model.properties.values():
        if "produce" in normalize(p.label) and p.range in model.classes:
            return p.id
    raise OntomeshError("model has no produces-like property")


def _property_by_name(model: OntologyModel, name: str) -> Optional[str]:
    if name in model.properties:
        return name
    for p in model.properties.values():
        if normalize(p.label) == normalize(name):
            return p.id
    return None


def find_producers(model: OntologyModel, product_class: str,
                   constraints: Optional[Mapping[str, float]] = None) -> list[str]:
    """Factory instances producing some instance of ``product_class``.

    ``constraints`` maps a property (id or label) to an upper bound; a
    factory passes when one of its values for that property is within the
    bound, e.g. ``{"unitPrice": 15, "leadTime": 10}``.
    """
    model.class_(product_class)
    produces = _produces_property(model)
    bounds = []
    for name, bound in (constraints or {}).items():
        pid = _property_by_name(model, name)
        if pid is None:
            raise OntomeshError(f"unknown constraint property {name!r}")
        bounds.append((pid, bound))
    out = []
    for inst in model.instances.values():
        made = inst.values.get(produces, ())
        if not any(is_instance_of(model, v, product_class) for v in made):
            continue
        if all(any(isinstance(v, (int, float)) and v <= bound for v in inst.values.get(pid, ()))
               for pid, bound in bounds):
            out.append(inst.id)
    return out


def _all_parents(cls) -> set[str]:
    """Direct parents, including those a class has on the side it was merged from."""
    out = set(cls.parents)
    for alias in cls.aliases:
        out |= set(alias.parents)
    return out


def find_substitutes(model: OntologyModel, product_class: str) -> list[str]:
    """Classes sharing a direct parent with ``product_class``, counting the
    parents recorded on merge aliases, most lexically similar first."""
    cls = model.class_(product_class)
    parents = _all_parents(cls)
    found = [c.id for c in model.classes.values()
             if c.id != product_class and parents & _all_parents(c)]
    return sorted(found, key=lambda c: (-lexical_similarity(cls.label, model.classes[c].label), c))


def product_subclasses(model: OntologyModel) -> set[str]:
    try:
        return descendants(model, "Product")
    except UnknownClassError:
        return set()


def main(argv=None) -> None:
    """Regenerate the shipped fixtures into the package data directory."""
    root = Path(__file__).parent / "data"
    generate_fixture("small", False).write(root / "demo")
    generate_fixture("small", True).write(root / "demo-convergent")


if __name__ == "__main__":
    main()
