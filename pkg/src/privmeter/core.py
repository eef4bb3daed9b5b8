"""Domain types shared by every stage of the privacy-risk estimator.

A document is paired with labeled disclosure spans. A run selects a subset of
disclosures, orders them, assigns each one a parent set (forming a DAG), turns
each factor into a query, estimates the queries, and recombines into a single
integer k: the estimated number of people worldwide matching all of the
disclosed details. Everything here is immutable and safe to share across
threads.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence, Tuple

from . import exprlang

__all__ = [
    "DisclosureCategory",
    "Disclosure",
    "DocumentContext",
    "BayesNetwork",
    "QuerySemantics",
    "QueryNode",
    "Answer",
    "StageTranscript",
    "EstimateResult",
    "RunConfig",
    "validate_network",
    "normalize_k",
    "PERCENTAGE",
    "POPULATION",
]

PERCENTAGE = "percentage"
POPULATION = "population"


class DisclosureCategory(enum.Enum):
    """Closed set of personal-disclosure categories.

    Unknown labels are rejected at parse time; see :meth:`from_label`.
    """

    LOCATION = "location"
    AGE = "age"
    RELATIONSHIP_STATUS = "relationship_status"
    GENDER = "gender"
    PET = "pet"
    APPEARANCE = "appearance"
    RACE_NATIONALITY = "race_nationality"
    SEXUAL_ORIENTATION = "sexual_orientation"
    HEALTH = "health"
    FAMILY = "family"
    OCCUPATION = "occupation"
    MENTAL_HEALTH = "mental_health"
    EMOTIONS = "emotions"
    REPRODUCTIVE_HEALTH = "reproductive_health"
    FINANCE = "finance"
    EDUCATION = "education"
    CRIME = "crime"
    EVENTS = "events"
    OTHER_PEOPLE = "other_people"
    PII = "pii"

    @classmethod
    def from_label(cls, label: str) -> "DisclosureCategory":
        """Parse a category label, accepting a few common spellings."""
        norm = label.strip().lower().replace("-", " ").replace("/", " ")
        norm = "_".join(norm.split())
        aliases = {
            "race_nationality": cls.RACE_NATIONALITY,
            "disclosure_of_other_people": cls.OTHER_PEOPLE,
            "information_about_other_people": cls.OTHER_PEOPLE,
            "personally_identifiable_information": cls.PII,
        }
        if norm in aliases:
            return aliases[norm]
        for member in cls:
            if member.value == norm:
                return member
        raise ValueError(f"unknown disclosure category {label!r}")


@dataclass(frozen=True)
class Disclosure:
    """One labeled span of personal information within a document."""

    id: str
    span: str
    category: DisclosureCategory

    def __post_init__(self):
        if not self.id:
            raise ValueError("disclosure id must be non-empty")
        if not self.span:
            raise ValueError(f"disclosure {self.id!r}: span must be non-empty")


@dataclass(frozen=True)
class DocumentContext:
    """A document plus its labeled disclosures.

    Invariants: non-empty text, unique disclosure ids, and every span occurs
    verbatim in the text (or equals the community name, which annotators may
    include as an implicit disclosure).
    """

    document_id: str
    text: str
    disclosures: Tuple[Disclosure, ...]
    community: Optional[str] = None

    def __post_init__(self):
        if not self.text:
            raise ValueError("document text must be non-empty")
        object.__setattr__(self, "disclosures", tuple(self.disclosures))
        seen = set()
        for d in self.disclosures:
            if d.id in seen:
                raise ValueError(f"duplicate disclosure id {d.id!r}")
            seen.add(d.id)
            if d.span not in self.text and d.span != (self.community or ""):
                raise ValueError(
                    f"disclosure {d.id!r}: span {d.span!r} not found verbatim in document"
                )

    def by_id(self, disclosure_id: str) -> Disclosure:
        for d in self.disclosures:
            if d.id == disclosure_id:
                return d
        raise KeyError(disclosure_id)

    @property
    def ids(self) -> Tuple[str, ...]:
        return tuple(d.id for d in self.disclosures)

    def subset(self, keep_ids: Sequence[str]) -> "DocumentContext":
        """Context restricted to the given disclosure ids (document order)."""
        keep = set(keep_ids)
        return replace(self, disclosures=tuple(d for d in self.disclosures if d.id in keep))


@dataclass(frozen=True)
class BayesNetwork:
    """An ordering of disclosure ids plus a parent set per id.

    Parents must be strictly earlier in the ordering, so the graph is acyclic
    by construction. Validity against a document is checked separately by
    :func:`validate_network` (reports, never throws).
    """

    ordering: Tuple[str, ...]
    parents: Mapping[str, frozenset]

    def __post_init__(self):
        object.__setattr__(self, "ordering", tuple(self.ordering))
        object.__setattr__(
            self, "parents", {k: frozenset(v) for k, v in dict(self.parents).items()}
        )

    def parents_of(self, disclosure_id: str) -> frozenset:
        return self.parents.get(disclosure_id, frozenset())

    def edges(self) -> set:
        """Directed (parent, child) pairs."""
        return {(p, child) for child in self.ordering for p in self.parents_of(child)}


@dataclass(frozen=True)
class QuerySemantics:
    """Structured meaning of a query: target attribute=value plus conditions.

    Lets the synthetic-population oracle answer exactly, without natural
    language parsing. Live backends never see this; they see only the text.
    """

    target: Tuple[str, str]
    conditions: Tuple[Tuple[str, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "target", tuple(self.target))
        object.__setattr__(self, "conditions", tuple(tuple(c) for c in self.conditions))


@dataclass(frozen=True)
class QueryNode:
    """One population or conditional-percentage query.

    A decomposed query carries subqueries plus a combine expression over slots
    ``s1..sn``; the combine must reference each subquery slot exactly once.
    """

    target: str
    kind: str
    text: str
    semantics: Optional[QuerySemantics] = None
    subqueries: Tuple["QueryNode", ...] = ()
    combine: Optional[str] = None

    def __post_init__(self):
        if self.kind not in (PERCENTAGE, POPULATION):
            raise ValueError(f"query kind must be percentage or population, got {self.kind!r}")
        object.__setattr__(self, "subqueries", tuple(self.subqueries))
        if self.subqueries:
            if not self.combine:
                raise ValueError("decomposed query requires a combine expression")
            slots = exprlang.slots_of(exprlang.parse(self.combine))
            expected = [f"s{i + 1}" for i in range(len(self.subqueries))]
            if sorted(slots) != sorted(expected):
                raise ValueError(
                    f"combine {self.combine!r} must reference slots {expected} exactly once each"
                )
        elif self.combine:
            raise ValueError("combine expression without subqueries")

    @property
    def is_leaf(self) -> bool:
        return not self.subqueries


@dataclass(frozen=True)
class Answer:
    """Numeric answer to one leaf query.

    Percentages are decimals in (0, 1]; populations are at least 1.
    """

    value: float
    kind: str
    confidence: float = 1.0
    provenance: str = ""
    simplified: bool = False

    def __post_init__(self):
        if self.kind == PERCENTAGE:
            if not (0 < self.value <= 1):
                raise ValueError(f"percentage answer out of (0, 1]: {self.value}")
        elif self.kind == POPULATION:
            if not self.value >= 1:
                raise ValueError(f"population answer below 1: {self.value}")
        else:
            raise ValueError(f"unknown answer kind {self.kind!r}")
        if not (0 <= self.confidence <= 1):
            raise ValueError(f"confidence out of [0, 1]: {self.confidence}")


@dataclass(frozen=True)
class StageTranscript:
    """Audit record of one backend exchange."""

    stage: str
    prompt_digest: str
    completion: str
    parsed: object
    retries: int = 0


@dataclass(frozen=True)
class EstimateResult:
    """Final estimate: integer k, its equation, and the full reasoning chain."""

    k_hat: int
    raw_k: float
    equation: str
    queries: Tuple[QueryNode, ...]
    answers: Tuple[Tuple[str, Answer], ...]
    network: BayesNetwork
    transcript: Tuple[StageTranscript, ...] = ()

    def __post_init__(self):
        if self.k_hat != normalize_k(self.raw_k):
            raise ValueError("k_hat is not the normalization of raw_k")
        value = exprlang.evaluate(exprlang.parse(self.equation))
        if not math.isclose(value, self.raw_k, rel_tol=1e-9, abs_tol=1e-9):
            raise ValueError(
                f"equation {self.equation!r} evaluates to {value}, expected {self.raw_k}"
            )


# Strategy and mode literals used by RunConfig.
STRATEGIES = ("branch", "few_shot", "cot", "pot")
SIMPLIFICATION_MODES = ("none", "evaluator", "confidence_threshold")
NETWORK_MODES = ("elicited", "fully_disjoint", "fully_connected")


@dataclass(frozen=True)
class RunConfig:
    """Knobs for one estimation run."""

    strategy: str = "branch"
    temperature: float = 0.7
    demonstrations: int = 3
    simplification: str = "confidence_threshold"
    confidence_threshold: float = 0.55
    max_simplify_iterations: int = 1
    query_history: bool = False
    discrete_subqueries: bool = True
    network_mode: str = "elicited"
    default_population: float = 5e8
    retry_limit: int = 3

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.simplification not in SIMPLIFICATION_MODES:
            raise ValueError(f"unknown simplification mode {self.simplification!r}")
        if self.network_mode not in NETWORK_MODES:
            raise ValueError(f"unknown network mode {self.network_mode!r}")
        if not (0 <= self.confidence_threshold <= 1):
            raise ValueError("confidence threshold must lie in [0, 1]")
        if self.demonstrations < 0:
            raise ValueError("demonstrations must be >= 0")
        if self.retry_limit < 1:
            raise ValueError("retry limit must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


def normalize_k(raw: float) -> int:
    """Round half away from zero and clamp to at least 1.

    The estimate is a head count, so it is reported as an integer and can
    never drop below one (the author exists).
    """
    raw = float(raw)
    if not math.isfinite(raw):
        raise ValueError(f"raw k must be finite, got {raw!r}")
    if raw < 0:
        raise ValueError(f"raw k must be >= 0, got {raw!r}")
    whole = int(math.floor(raw))
    # raw - whole is exact below 2**53, so the half comparison never suffers
    # the double-rounding of floor(raw + 0.5).
    rounded = whole + 1 if raw - whole >= 0.5 else whole
    return max(1, rounded)


def validate_network(network: BayesNetwork, ctx: DocumentContext) -> list:
    """Check a network against a document; returns a list of issue strings.

    An empty report means every structural invariant holds: the ordering is a
    duplicate-free subset of the document's disclosure ids, and every parent
    set contains only strictly-earlier ids.
    """
    issues = []
    known = set(ctx.ids)
    seen = []
    for node in network.ordering:
        if node not in known:
            issues.append(f"unknown disclosure {node!r} in ordering")
        if node in seen:
            issues.append(f"duplicate disclosure {node!r} in ordering")
        seen.append(node)
    position = {node: i for i, node in enumerate(network.ordering)}
    for child, parents in network.parents.items():
        if child not in position:
            issues.append(f"parents declared for {child!r} which is not in the ordering")
            continue
        for p in parents:
            if p not in position:
                issues.append(f"parent {p!r} of {child!r} is not in the ordering")
            elif position[p] >= position[child]:
                issues.append(f"parent {p!r} of {child!r} is not prior in the ordering")
    return issues
