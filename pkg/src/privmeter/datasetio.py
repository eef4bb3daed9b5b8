"""Loader, validator, and splitter for annotated k-estimation datasets.

The interchange format is a single JSON document:

    {"posts": [{
        "id": str, "text": str, "domain": str,
        "disclosures": [{"id": str, "span": str, "category": str}],
        "orderings": [{
            "order": [disclosure ids],
            "parents": {disclosure id: [disclosure ids]},
            "queries": [{"target": str, "kind": str, "text": str,
                          "subqueries": [...], "combine": str|null,
                          "answer": number, "confidence": number,
                          "reliability": "reliable"|"unreliable"|null,
                          "feasibility": str|null}],
            "equation": str,
            "k": int}]}]}

Results emitted by the service and CLI reuse the ordering shape with
``k_hat`` in place of ``k``. No dataset ships with the package; a small
synthetic sample lives under fixtures/ for tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import exprlang
from .core import (
    BayesNetwork,
    Disclosure,
    DisclosureCategory,
    DocumentContext,
    EstimateResult,
    PERCENTAGE,
    POPULATION,
    QueryNode,
    normalize_k,
    validate_network,
)
from .uncertainty import KInterval

__all__ = [
    "DatasetError",
    "GoldQuery",
    "AnnotatedOrdering",
    "AnnotatedPost",
    "load",
    "loads",
    "save",
    "validate",
    "gold_interval",
    "split",
    "result_to_json",
]

RELIABILITY_VALUES = ("reliable", "unreliable")


class DatasetError(Exception):
    """Malformed dataset document; message carries a JSON-path-style location."""


@dataclass(frozen=True)
class GoldQuery:
    """A gold query with its annotated answer.

    The answer is kept as raw numbers rather than a checked Answer so that an
    out-of-bounds annotation loads fine and surfaces as a validation issue.
    Decomposed queries nest their gold subqueries here in full.
    """

    query: QueryNode
    value: float
    confidence: float = 1.0
    reliability: Optional[str] = None
    feasibility: Optional[str] = None
    subs: Tuple["GoldQuery", ...] = ()


@dataclass(frozen=True)
class AnnotatedOrdering:
    network: BayesNetwork
    queries: Tuple[GoldQuery, ...]
    equation: str
    k_star: int


@dataclass(frozen=True)
class AnnotatedPost:
    post_id: str
    text: str
    domain: str
    disclosures: Tuple[Disclosure, ...]
    orderings: Tuple[AnnotatedOrdering, ...]
    notes: str = ""

    def to_context(self) -> DocumentContext:
        return DocumentContext(
            document_id=self.post_id,
            text=self.text,
            disclosures=self.disclosures,
            community=self.domain or None,
        )


def _need(obj: Mapping, key: str, where: str):
    if key not in obj:
        raise DatasetError(f"{where}: missing field {key!r}")
    return obj[key]


def _parse_query(doc: Mapping, where: str) -> GoldQuery:
    kind = _need(doc, "kind", where)
    if kind not in (PERCENTAGE, POPULATION):
        raise DatasetError(f"{where}.kind: unknown kind {kind!r}")
    subdocs = doc.get("subqueries") or []
    subs: List[GoldQuery] = []
    for j, sub in enumerate(subdocs):
        subs.append(_parse_query(sub, f"{where}.subqueries[{j}]"))
    try:
        node = QueryNode(
            target=_need(doc, "target", where),
            kind=kind,
            text=_need(doc, "text", where),
            subqueries=tuple(s.query for s in subs),
            combine=doc.get("combine"),
        )
    except (ValueError, exprlang.ExprError) as exc:
        raise DatasetError(f"{where}: {exc}")
    reliability = doc.get("reliability")
    if reliability is not None and reliability not in RELIABILITY_VALUES:
        raise DatasetError(f"{where}.reliability: unknown value {reliability!r}")
    raw_answer = _need(doc, "answer", where)
    if not isinstance(raw_answer, (int, float)) or isinstance(raw_answer, bool):
        raise DatasetError(f"{where}.answer: must be a number, got {raw_answer!r}")
    raw_confidence = doc.get("confidence", 1.0)
    if not isinstance(raw_confidence, (int, float)) or isinstance(raw_confidence, bool):
        raise DatasetError(f"{where}.confidence: must be a number, got {raw_confidence!r}")
    return GoldQuery(
        query=node,
        value=float(raw_answer),
        confidence=float(raw_confidence),
        reliability=reliability,
        feasibility=doc.get("feasibility"),
        subs=tuple(subs),
    )


def loads(text: str) -> List[AnnotatedPost]:
    if not text.strip():
        raise DatasetError("empty dataset document")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"not valid JSON: {exc}")
    posts: List[AnnotatedPost] = []
    for p, post_doc in enumerate(_need(doc, "posts", "$")):
        where = f"posts[{p}]"
        disclosures = []
        for d, disc in enumerate(_need(post_doc, "disclosures", where)):
            dwhere = f"{where}.disclosures[{d}]"
            try:
                disclosures.append(
                    Disclosure(
                        id=_need(disc, "id", dwhere),
                        span=_need(disc, "span", dwhere),
                        category=DisclosureCategory.from_label(_need(disc, "category", dwhere)),
                    )
                )
            except ValueError as exc:
                raise DatasetError(f"{dwhere}: {exc}")
        orderings = []
        for o, odoc in enumerate(post_doc.get("orderings") or []):
            owhere = f"{where}.orderings[{o}]"
            network = BayesNetwork(
                ordering=tuple(_need(odoc, "order", owhere)),
                parents={k: frozenset(v) for k, v in _need(odoc, "parents", owhere).items()},
            )
            queries = tuple(
                _parse_query(q, f"{owhere}.queries[{i}]")
                for i, q in enumerate(odoc.get("queries") or [])
            )
            k_star = _need(odoc, "k", owhere)
            if not isinstance(k_star, int) or k_star < 1:
                raise DatasetError(f"{owhere}.k: must be an integer >= 1")
            orderings.append(
                AnnotatedOrdering(
                    network=network,
                    queries=queries,
                    equation=_need(odoc, "equation", owhere),
                    k_star=k_star,
                )
            )
        if not orderings:
            raise DatasetError(f"{where}: needs at least one ordering")
        try:
            post = AnnotatedPost(
                post_id=_need(post_doc, "id", where),
                text=_need(post_doc, "text", where),
                domain=_need(post_doc, "domain", where),
                disclosures=tuple(disclosures),
                orderings=tuple(orderings),
                notes=post_doc.get("notes", ""),
            )
            post.to_context()  # exercises span/id invariants
        except ValueError as exc:
            raise DatasetError(f"{where}: {exc}")
        posts.append(post)
    return posts


def load(path) -> List[AnnotatedPost]:
    with open(path, "r", encoding="utf-8") as fh:
        return loads(fh.read())


def _query_to_json(gold: GoldQuery) -> dict:
    q = gold.query
    doc = {
        "target": q.target,
        "kind": q.kind,
        "text": q.text,
        "subqueries": [_query_to_json(sub) for sub in gold.subs],
        "combine": q.combine,
        "answer": gold.value,
        "confidence": gold.confidence,
        "reliability": gold.reliability,
    }
    if gold.feasibility is not None:
        doc["feasibility"] = gold.feasibility
    return doc


def save(posts: Sequence[AnnotatedPost], path) -> None:
    doc = {
        "posts": [
            {
                "id": post.post_id,
                "text": post.text,
                "domain": post.domain,
                "disclosures": [
                    {"id": d.id, "span": d.span, "category": d.category.value}
                    for d in post.disclosures
                ],
                "orderings": [
                    {
                        "order": list(o.network.ordering),
                        "parents": {k: sorted(v) for k, v in o.network.parents.items()},
                        "queries": [_query_to_json(g) for g in o.queries],
                        "equation": o.equation,
                        "k": o.k_star,
                    }
                    for o in post.orderings
                ],
                **({"notes": post.notes} if post.notes else {}),
            }
            for post in posts
        ]
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, ensure_ascii=False)
        fh.write("\n")


def _answer_issues(gold: GoldQuery) -> List[str]:
    issues = []
    if gold.query.kind == PERCENTAGE and not (0 < gold.value <= 1):
        issues.append(f"percentage answer {gold.value} outside (0, 1]")
    if gold.query.kind == POPULATION and gold.value < 1:
        issues.append(f"population answer {gold.value} below 1")
    if not (0 <= gold.confidence <= 1):
        issues.append(f"confidence {gold.confidence} outside [0, 1]")
    for j, sub in enumerate(gold.subs):
        if sub.query.target != gold.query.target:
            issues.append(f"subquery {j}: target {sub.query.target!r} differs from parent")
        issues.extend(f"subquery {j}: {msg}" for msg in _answer_issues(sub))
    return issues


def validate(post: AnnotatedPost) -> List[str]:
    """Consistency checks mirroring the annotation procedure; returns issues."""
    issues: List[str] = []
    ctx = post.to_context()
    for o, ordering in enumerate(post.orderings):
        where = f"orderings[{o}]"
        issues.extend(f"{where}: {msg}" for msg in validate_network(ordering.network, ctx))
        ordered = list(ordering.network.ordering)
        targets = [g.query.target for g in ordering.queries]
        if targets != ordered:
            issues.append(f"{where}: queries do not cover the ordering ({targets} vs {ordered})")
        for i, gold in enumerate(ordering.queries):
            qwhere = f"{where}.queries[{i}]"
            expected_kind = POPULATION if i == 0 else PERCENTAGE
            if gold.query.kind != expected_kind:
                issues.append(f"{qwhere}: kind should be {expected_kind}")
            issues.extend(f"{qwhere}: {msg}" for msg in _answer_issues(gold))
            if gold.query.subqueries:
                slots = {f"s{j + 1}": sub.value for j, sub in enumerate(gold.subs)}
                try:
                    combined = exprlang.evaluate(exprlang.parse(gold.query.combine), slots)
                    if not _close(combined, gold.value):
                        issues.append(
                            f"{qwhere}: combine over subquery answers gives {combined}, "
                            f"stored answer is {gold.value}"
                        )
                except exprlang.ExprError as exc:
                    issues.append(f"{qwhere}: combine problem: {exc}")
        try:
            value = exprlang.evaluate(exprlang.parse(ordering.equation))
            if abs(normalize_k(value) - ordering.k_star) > 0.5:
                issues.append(
                    f"{where}: equation evaluates to {value}, inconsistent with k={ordering.k_star}"
                )
            if ordering.queries:
                product = ordering.queries[0].value
                for gold in ordering.queries[1:]:
                    product *= gold.value
                if not _close(product, value, rel=1e-6):
                    issues.append(
                        f"{where}: equation value {value} does not combine the "
                        f"annotated answers (product {product})"
                    )
        except (exprlang.ExprError, ValueError) as exc:
            issues.append(f"{where}: equation problem: {exc}")
    return issues


def _close(a: float, b: float, rel: float = 1e-9) -> bool:
    return abs(a - b) <= rel * max(1.0, abs(a), abs(b))


def gold_interval(post: AnnotatedPost) -> KInterval:
    """[min, max] over the k values of a post's annotation orderings."""
    ks = [o.k_star for o in post.orderings]
    return KInterval(lo=float(min(ks)), hi=float(max(ks)))


def split(
    posts: Sequence[AnnotatedPost],
    fractions: Optional[Mapping[str, float]] = None,
    explicit: Optional[Mapping[str, Sequence[str]]] = None,
    seed: int = 0,
) -> Dict[str, List[AnnotatedPost]]:
    """Deterministic named splits, by explicit id lists or by fractions.

    Explicit lists must be disjoint and cover every post. Fraction splits
    shuffle with the seed and cut at cumulative boundaries, giving any
    rounding slack to the last split.
    """
    by_id = {p.post_id: p for p in posts}
    if explicit is not None:
        seen: Dict[str, str] = {}
        out: Dict[str, List[AnnotatedPost]] = {}
        for name, ids in explicit.items():
            out[name] = []
            for pid in ids:
                if pid in seen:
                    raise DatasetError(f"post {pid!r} assigned to both {seen[pid]!r} and {name!r}")
                if pid not in by_id:
                    raise DatasetError(f"unknown post id {pid!r} in split {name!r}")
                seen[pid] = name
                out[name].append(by_id[pid])
        missing = set(by_id) - set(seen)
        if missing:
            raise DatasetError(f"posts not assigned to any split: {sorted(missing)}")
        return out
    if not fractions:
        raise DatasetError("need either fractions or explicit id lists")
    total = sum(fractions.values())
    if abs(total - 1.0) > 1e-9:
        raise DatasetError(f"split fractions must sum to 1, got {total}")
    order = np.random.default_rng(seed).permutation(len(posts))
    shuffled = [posts[i] for i in order]
    out = {}
    start = 0
    names = list(fractions)
    for i, name in enumerate(names):
        if i == len(names) - 1:
            end = len(shuffled)
        else:
            end = start + int(round(fractions[name] * len(shuffled)))
        out[name] = shuffled[start:end]
        start = end
    return out


def result_to_json(result: EstimateResult, include_transcript: bool = True) -> dict:
    """Serialize a pipeline result in the ordering shape, with ``k_hat``."""
    answers = dict(result.answers)

    def query_doc(q: QueryNode, path: str) -> dict:
        answer = answers.get(path)
        return {
            "target": q.target,
            "kind": q.kind,
            "text": q.text,
            "subqueries": [
                query_doc(sub, f"{path}/s{j + 1}") for j, sub in enumerate(q.subqueries)
            ],
            "combine": q.combine,
            "answer": answer.value if answer else None,
            "confidence": answer.confidence if answer else None,
            "simplified": answer.simplified if answer else False,
        }

    doc = {
        "k_hat": result.k_hat,
        "raw_k": result.raw_k,
        "equation": result.equation,
        "order": list(result.network.ordering),
        "parents": {k: sorted(v) for k, v in result.network.parents.items()},
        "queries": [query_doc(q, f"q{i}") for i, q in enumerate(result.queries)],
    }
    if include_transcript:
        doc["transcript"] = [
            {
                "stage": t.stage,
                "digest": t.prompt_digest,
                "completion": t.completion,
                "parsed": t.parsed,
                "retries": t.retries,
            }
            for t in result.transcript
        ]
    return doc
