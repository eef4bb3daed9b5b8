"""Synthetic-population oracle.

Samples a population of individuals from a known generator network over
categorical attributes, counts ground truth exactly, and exposes a chat
backend whose completions answer the pipeline's queries with exact empirical
frequencies. Because answers come from the realized population rather than
the generator tables, the chain rule over empirical conditionals with
all-priors parent sets reproduces the enumerated count as an identity — which
is what makes this an end-to-end oracle for the estimator's arithmetic.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .core import (
    Answer,
    Disclosure,
    DisclosureCategory,
    DocumentContext,
    PERCENTAGE,
    POPULATION,
    QueryNode,
)
from .llm.backend import CallMeta, ChatMessage, CompletionParams

__all__ = [
    "PopsimError",
    "AttributeSchema",
    "GeneratorNetwork",
    "Population",
    "sample_population",
    "count_matching",
    "oracle_answer",
    "OracleBackend",
    "make_oracle_backend",
    "random_generator",
    "scenario_context",
    "save_scenario",
    "load_scenario",
]


class PopsimError(Exception):
    pass


@dataclass(frozen=True)
class AttributeSchema:
    """Ordered categorical attributes with finite value domains."""

    attributes: Tuple[Tuple[str, Tuple[str, ...]], ...]

    def __post_init__(self):
        attrs = tuple((name, tuple(values)) for name, values in self.attributes)
        object.__setattr__(self, "attributes", attrs)
        if not attrs:
            raise PopsimError("schema needs at least one attribute")
        names = [name for name, _ in attrs]
        if len(set(names)) != len(names):
            raise PopsimError("attribute names must be unique")
        for name, values in attrs:
            if not values:
                raise PopsimError(f"attribute {name!r} has an empty domain")

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(name for name, _ in self.attributes)

    def domain(self, name: str) -> Tuple[str, ...]:
        for n, values in self.attributes:
            if n == name:
                return values
        raise PopsimError(f"unknown attribute {name!r}")


@dataclass(frozen=True)
class GeneratorNetwork:
    """DAG over schema attributes with a CPT per attribute.

    Schema order must be topological: every parent precedes its child. CPT
    rows are keyed by the tuple of parent values (in parent order) and must
    each sum to 1 within 1e-9.
    """

    schema: AttributeSchema
    parents: Mapping[str, Tuple[str, ...]]
    cpt: Mapping[str, Mapping[Tuple[str, ...], Tuple[float, ...]]]

    def __post_init__(self):
        object.__setattr__(
            self, "parents", {k: tuple(v) for k, v in dict(self.parents).items()}
        )
        object.__setattr__(
            self,
            "cpt",
            {
                k: {tuple(row): tuple(p) for row, p in dict(tbl).items()}
                for k, tbl in dict(self.cpt).items()
            },
        )
        seen = set()
        for name, _values in self.schema.attributes:
            for p in self.parents.get(name, ()):
                if p not in seen:
                    raise PopsimError(
                        f"parent {p!r} of {name!r} does not precede it in schema order"
                    )
            seen.add(name)
        for name, values in self.schema.attributes:
            table = self.cpt.get(name)
            if table is None:
                raise PopsimError(f"missing CPT for {name!r}")
            pnames = self.parents.get(name, ())
            expected_rows = list(
                itertools.product(*(self.schema.domain(p) for p in pnames))
            )
            if set(table.keys()) != set(expected_rows):
                raise PopsimError(f"CPT of {name!r} missing parent-value rows")
            for row, probs in table.items():
                if len(probs) != len(values):
                    raise PopsimError(f"CPT row {row} of {name!r} has wrong arity")
                if abs(sum(probs) - 1.0) > 1e-9 or min(probs) < 0:
                    raise PopsimError(f"CPT row {row} of {name!r} is not a distribution")

    def parents_of(self, name: str) -> Tuple[str, ...]:
        return self.parents.get(name, ())


@dataclass(frozen=True)
class Population:
    """Realized individuals: one integer code column per attribute."""

    schema: AttributeSchema
    columns: Mapping[str, np.ndarray]
    seed: Optional[int] = None

    def __post_init__(self):
        cols = {k: np.asarray(v, dtype=np.int64) for k, v in dict(self.columns).items()}
        object.__setattr__(self, "columns", cols)
        sizes = {len(v) for v in cols.values()}
        if set(cols) != set(self.schema.names) or len(sizes) != 1:
            raise PopsimError("population columns must cover the schema with equal length")
        for name, values in self.schema.attributes:
            col = cols[name]
            if col.size and (col.min() < 0 or col.max() >= len(values)):
                raise PopsimError(f"column {name!r} holds out-of-domain codes")

    @property
    def size(self) -> int:
        return len(next(iter(self.columns.values())))

    def value_of(self, name: str, row: int) -> str:
        return self.schema.domain(name)[int(self.columns[name][row])]

    def assignment(self, row: int) -> Dict[str, str]:
        return {name: self.value_of(name, row) for name in self.schema.names}


def sample_population(gen: GeneratorNetwork, n: int, seed: int) -> Population:
    """Ancestral sampling in schema (topological) order, deterministic per seed."""
    if n < 1:
        raise PopsimError("population size must be >= 1")
    rng = np.random.default_rng(seed)
    columns: Dict[str, np.ndarray] = {}
    for name, values in gen.schema.attributes:
        pnames = gen.parents_of(name)
        rows = list(itertools.product(*(gen.schema.domain(p) for p in pnames)))
        probs = np.array([gen.cpt[name][row] for row in rows], dtype=float)
        cumulative = np.cumsum(probs, axis=1)
        if pnames:
            # Mixed-radix parent code; matches itertools.product row order
            # (last parent varies fastest).
            which = np.zeros(n, dtype=np.int64)
            for p in pnames:
                which = which * len(gen.schema.domain(p)) + columns[p]
        else:
            which = np.zeros(n, dtype=np.int64)
        u = rng.random(n)
        columns[name] = (u[:, None] > cumulative[which]).sum(axis=1).astype(np.int64)
    return Population(schema=gen.schema, columns=columns, seed=seed)


def _mask(pop: Population, conjunction: Mapping[str, str]) -> np.ndarray:
    mask = np.ones(pop.size, dtype=bool)
    for name, value in conjunction.items():
        domain = pop.schema.domain(name)
        if value not in domain:
            raise PopsimError(f"unknown value {value!r} for attribute {name!r}")
        mask &= pop.columns[name] == domain.index(value)
    return mask


def count_matching(pop: Population, conjunction: Mapping[str, str]) -> int:
    """Exact count of individuals matching every attribute=value pair."""
    return int(_mask(pop, conjunction).sum())


def oracle_answer(pop: Population, query: QueryNode) -> Answer:
    """Answer a structured query with exact empirical frequencies."""
    if query.semantics is None:
        raise PopsimError("oracle needs structured query semantics")
    target = dict([query.semantics.target])
    conditions = dict(query.semantics.conditions)
    if query.kind == POPULATION:
        count = count_matching(pop, {**conditions, **target})
        if count < 1:
            raise PopsimError(f"no individuals match {target}")
        return Answer(float(count), POPULATION, confidence=1.0, provenance="popsim")
    denom = count_matching(pop, conditions)
    if denom == 0:
        raise PopsimError(f"conditioning set {conditions} has zero support")
    numer = count_matching(pop, {**conditions, **target})
    if numer == 0:
        raise PopsimError(f"target {target} has zero support under {conditions}")
    return Answer(numer / denom, PERCENTAGE, confidence=1.0, provenance="popsim")


def _tag_list(items: Sequence[Mapping[str, str]]) -> str:
    parts = ["<list>"]
    for item in items:
        parts.append(f"<answer>{item['span']}</answer><type>{item['category']}</type>")
    parts.append("</list>")
    return "".join(parts)


class OracleBackend:
    """Backend that replays the generator's true structure and exact answers.

    Speaks the same tag conventions as a live model, so the pipeline cannot
    tell it is under test. Elicitation stages are answered from the generator
    DAG; estimation is answered from the realized population. Disclosures are
    resolved by span (attribute values are unique within a scenario), so the
    caller's disclosure ids can be anything.
    """

    max_concurrency = 4

    def __init__(self, pop: Population, gen: GeneratorNetwork):
        self.pop = pop
        self.gen = gen
        self.call_count = 0
        self._attr_of: Dict[str, str] = {}
        for name, values in gen.schema.attributes:
            for value in values:
                if value in self._attr_of:
                    raise PopsimError(
                        f"value {value!r} appears in two domains; spans would be ambiguous"
                    )
                self._attr_of[value] = name

    def _attr(self, span: str) -> str:
        attr = self._attr_of.get(span)
        if attr is None:
            raise PopsimError(f"span {span!r} is not a value of any scenario attribute")
        return attr

    def complete(
        self,
        messages: Sequence[ChatMessage],
        params: CompletionParams,
        meta: Optional[CallMeta] = None,
    ) -> str:
        if meta is None:
            raise PopsimError("oracle backend requires CallMeta")
        self.call_count += 1
        t = meta.template_id
        payload = meta.payload
        if t == "disclosure_selection":
            return _tag_list(payload["candidates"])
        if t == "probability_ordering":
            order = {name: i for i, name in enumerate(self.gen.schema.names)}
            ranked = sorted(payload["candidates"], key=lambda c: order[self._attr(c["span"])])
            return _tag_list(ranked)
        if t == "conditional_dependencies":
            true_parents = set(self.gen.parents_of(self._attr(payload["target"]["span"])))
            kept = [p for p in payload["priors"] if self._attr(p["span"]) in true_parents]
            return _tag_list(kept)
        if t == "population_query":
            return f"<query>population of people with {payload['target']['span']}</query>"
        if t == "probability_query":
            group = ", ".join(p["span"] for p in payload["parents"]) or "anyone"
            return (
                f"<query>percentage of people with {group} "
                f"THAT have {payload['target']['span']}</query>"
            )
        if t == "generalization_subquery":
            return f"<query>{payload['query']}</query>"
        if t == "discrete_subquery":
            return f"<list><answer>{payload['query']}</answer></list>"
        if t == "query_estimation":
            node = self._structured_query(payload)
            answer = oracle_answer(self.pop, node)
            value = int(answer.value) if payload["kind"] == POPULATION else repr(answer.value)
            return f"<answer>{value}</answer><score>1.0</score>"
        if t == "evaluate_answer":
            return "<answer>Yes</answer>"
        if t == "simplify_query":
            return f"<query>{payload['query']}</query>"
        raise PopsimError(f"oracle backend cannot serve template {t!r}")

    def _structured_query(self, payload) -> QueryNode:
        """Rebuild a structured query with spans resolved to attributes."""
        from .core import QuerySemantics

        semantics = payload.get("semantics")
        if semantics is None:
            raise PopsimError("oracle estimation needs structured semantics")
        target_span = semantics["target"][1]
        conditions = tuple(
            (self._attr(span), span) for _id, span in semantics.get("conditions", ())
        )
        return QueryNode(
            target=self._attr(target_span),
            kind=payload["kind"],
            text=payload.get("text", ""),
            semantics=QuerySemantics(
                target=(self._attr(target_span), target_span), conditions=conditions
            ),
        )


def make_oracle_backend(pop: Population, gen: GeneratorNetwork) -> OracleBackend:
    return OracleBackend(pop, gen)


_ATTR_POOL = ("city", "age_band", "occupation", "gender", "hobby", "diet", "pet", "commute")
_CATEGORY_POOL = (
    DisclosureCategory.LOCATION,
    DisclosureCategory.AGE,
    DisclosureCategory.OCCUPATION,
    DisclosureCategory.GENDER,
    DisclosureCategory.EVENTS,
    DisclosureCategory.HEALTH,
    DisclosureCategory.PET,
    DisclosureCategory.FAMILY,
)


def random_generator(
    n_attrs: int,
    seed: int,
    max_values: int = 4,
    edge_prob: float = 0.5,
    max_parents: int = 3,
) -> GeneratorNetwork:
    """Random DAG + Dirichlet CPTs over a pool of named attributes."""
    if not (1 <= n_attrs <= len(_ATTR_POOL)):
        raise PopsimError(f"n_attrs must be in 1..{len(_ATTR_POOL)}")
    rng = np.random.default_rng(seed)
    names = _ATTR_POOL[:n_attrs]
    attributes = []
    for name in names:
        width = int(rng.integers(2, max_values + 1))
        attributes.append((name, tuple(f"{name}{j}" for j in range(width))))
    schema = AttributeSchema(tuple(attributes))
    parents: Dict[str, Tuple[str, ...]] = {}
    cpt: Dict[str, Dict[Tuple[str, ...], Tuple[float, ...]]] = {}
    for i, (name, values) in enumerate(schema.attributes):
        priors = list(schema.names[:i])
        chosen = [p for p in priors if rng.random() < edge_prob][:max_parents]
        parents[name] = tuple(chosen)
        rows = list(itertools.product(*(schema.domain(p) for p in chosen)))
        table = {}
        for row in rows:
            table[row] = tuple(rng.dirichlet(np.full(len(values), 2.0)))
        cpt[name] = table
    return GeneratorNetwork(schema=schema, parents=parents, cpt=cpt)


def scenario_context(
    pop: Population, row: int = 0, document_id: str = "scenario"
) -> DocumentContext:
    """Build a document whose disclosures are one individual's attribute values."""
    assignment = pop.assignment(row)
    lines = [f"{name}: {value}" for name, value in assignment.items()]
    disclosures = tuple(
        Disclosure(id=name, span=value, category=_CATEGORY_POOL[i % len(_CATEGORY_POOL)])
        for i, (name, value) in enumerate(assignment.items())
    )
    return DocumentContext(
        document_id=document_id,
        text="\n".join(lines),
        disclosures=disclosures,
        community=None,
    )


def save_scenario(gen: GeneratorNetwork, path, population_size: int, seed: int, row: int = 0):
    pop = sample_population(gen, population_size, seed)
    ctx = scenario_context(pop, row=row)
    doc = {
        "schema": [{"name": n, "values": list(v)} for n, v in gen.schema.attributes],
        "parents": {n: list(gen.parents_of(n)) for n in gen.schema.names},
        "cpt": {
            n: [{"given": list(row_key), "p": list(p)} for row_key, p in sorted(gen.cpt[n].items())]
            for n in gen.schema.names
        },
        "population_size": population_size,
        "seed": seed,
        "row": row,
        # Ready-made example document for clients: the row's individual.
        "document": {
            "text": ctx.text,
            "disclosures": [
                {"id": d.id, "span": d.span, "category": d.category.value}
                for d in ctx.disclosures
            ],
            "ground_truth": count_matching(pop, pop.assignment(row)),
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_scenario(path):
    """Load a generator scenario; returns (generator, population_size, seed, row)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    schema = AttributeSchema(tuple((a["name"], tuple(a["values"])) for a in doc["schema"]))
    cpt = {
        name: {tuple(entry["given"]): tuple(entry["p"]) for entry in rows}
        for name, rows in doc["cpt"].items()
    }
    gen = GeneratorNetwork(schema=schema, parents={k: tuple(v) for k, v in doc["parents"].items()}, cpt=cpt)
    return gen, int(doc["population_size"]), int(doc["seed"]), int(doc.get("row", 0))
