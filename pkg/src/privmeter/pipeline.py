"""Estimation pipeline: from a document to an integer k with a reasoning chain.

Stages run in order: select which disclosures are estimable, order them,
assign each a parent set (a DAG over the disclosures), turn each factor into
a text query, optionally decompose queries into easier subqueries, estimate
every leaf with the backend, review low-confidence answers and simplify, then
recombine everything into one arithmetic equation whose value is k.

Every backend exchange is guarded: completions violating their stage's
structural contract (hallucinated spans, non-permutation orderings, parents
outside the priors, out-of-bounds numbers, missing tags) are re-prompted up
to the configured retry limit, then fail the stage. All exchanges, including
failed attempts, are kept in the transcript.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from . import exprlang
from .core import (
    Answer,
    BayesNetwork,
    Disclosure,
    DocumentContext,
    EstimateResult,
    PERCENTAGE,
    POPULATION,
    QueryNode,
    QuerySemantics,
    RunConfig,
    StageTranscript,
    normalize_k,
)
from .llm.backend import Backend, BackendError, CallMeta, CompletionParams, user_content_digest
from .llm.extract import (
    ExtractionError,
    NumericBoundsError,
    NumericParseError,
    extract_list,
    extract_tagged,
    parse_numeric,
)
from .llm.templates import load_template, render_prompt

__all__ = [
    "PipelineError",
    "select_disclosures",
    "order_disclosures",
    "assign_parents",
    "generate_queries",
    "decompose_subqueries",
    "estimate_answer",
    "review_and_simplify",
    "recombine",
    "run",
    "run_baseline",
]

log = logging.getLogger(__name__)


class PipelineError(Exception):
    """A stage failed; carries the partial transcript up to the failure."""

    def __init__(self, stage: str, message: str, transcript: Sequence[StageTranscript] = ()):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.transcript = tuple(transcript)


class _GuardViolation(Exception):
    """A completion failed its stage guard; eligible for re-prompting."""


class _Recorder:
    def __init__(self):
        self.entries: List[StageTranscript] = []

    def add(self, entry: StageTranscript):
        self.entries.append(entry)

    def extend(self, entries):
        self.entries.extend(entries)


_template_cache: Dict[str, object] = {}


def _template(template_id: str):
    if template_id not in _template_cache:
        _template_cache[template_id] = load_template(template_id)
    return _template_cache[template_id]


def _exchange(
    stage: str,
    template_id: str,
    bindings: Mapping[str, str],
    cfg: RunConfig,
    backend: Backend,
    payload: Mapping,
    parse: Callable[[str], object],
    recorder: _Recorder,
):
    """One guarded prompt: render, complete, parse, re-prompt on violations."""
    messages = render_prompt(_template(template_id), bindings, cfg.demonstrations)
    digest = user_content_digest(messages)
    params = CompletionParams(temperature=cfg.temperature)
    meta = CallMeta(template_id=template_id, payload=dict(payload))
    last_error = "no attempts made"
    for attempt in range(cfg.retry_limit + 1):
        try:
            raw = backend.complete(messages, params, meta)
        except BackendError as exc:
            raise PipelineError(stage, f"backend failure: {exc}", recorder.entries)
        try:
            parsed = parse(raw)
        except (_GuardViolation, ExtractionError, NumericParseError, NumericBoundsError) as exc:
            last_error = str(exc)
            recorder.add(StageTranscript(stage, digest, raw, {"error": last_error}, attempt))
            continue
        recorder.add(StageTranscript(stage, digest, raw, _jsonable(parsed), attempt))
        return parsed
    raise PipelineError(stage, f"retries exhausted: {last_error}", recorder.entries)


def _jsonable(value):
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    return repr(value)


def _candidate_payload(disclosures: Sequence[Disclosure]) -> List[dict]:
    return [
        {"id": d.id, "span": d.span, "category": d.category.value} for d in disclosures
    ]


def _span_lines(disclosures: Sequence[Disclosure]) -> str:
    if not disclosures:
        return "(none)"
    return "\n".join(f'- "{d.span}" ({d.category.value})' for d in disclosures)


def _match_spans(items, disclosures: Sequence[Disclosure]) -> List[str]:
    """Map returned spans back to disclosure ids; verbatim matches only."""
    by_span: Dict[str, List[str]] = {}
    for d in disclosures:
        by_span.setdefault(d.span, []).append(d.id)
    ids: List[str] = []
    for span, _kind in items:
        pool = by_span.get(span)
        if not pool:
            raise _GuardViolation(f"span {span!r} does not match any provided disclosure")
        chosen = next((i for i in pool if i not in ids), pool[0])
        if chosen not in ids:
            ids.append(chosen)
    return ids


def select_disclosures(
    ctx: DocumentContext, cfg: RunConfig, backend: Backend, recorder: Optional[_Recorder] = None
) -> List[str]:
    """Pick the subset of disclosure ids the backend deems estimable."""
    recorder = recorder if recorder is not None else _Recorder()
    if not ctx.disclosures:
        raise PipelineError("selection", "document has no disclosures", recorder.entries)
    bindings = {
        "document": ctx.text,
        "disclosure_list": _span_lines(ctx.disclosures),
        "community": ctx.community or "(none)",
    }

    def parse(raw: str):
        ids = _match_spans(extract_list(raw), ctx.disclosures)
        if not ids:
            raise _GuardViolation("selection must keep at least one disclosure")
        return ids

    return _exchange(
        "selection",
        "disclosure_selection",
        bindings,
        cfg,
        backend,
        {"candidates": _candidate_payload(ctx.disclosures)},
        parse,
        recorder,
    )


def order_disclosures(
    ctx: DocumentContext,
    subset: Sequence[str],
    cfg: RunConfig,
    backend: Backend,
    recorder: Optional[_Recorder] = None,
) -> List[str]:
    """Order the selected ids for factorization; singletons skip the backend."""
    recorder = recorder if recorder is not None else _Recorder()
    if not subset:
        raise PipelineError("ordering", "empty selection", recorder.entries)
    if len(subset) == 1:
        return list(subset)
    chosen = [ctx.by_id(i) for i in subset]
    bindings = {
        "document": ctx.text,
        "disclosure_list": _span_lines(chosen),
        "community": ctx.community or "(none)",
    }

    def parse(raw: str):
        ids = _match_spans(extract_list(raw), chosen)
        if sorted(ids) != sorted(subset):
            raise _GuardViolation(f"completion is not a permutation of the selection: {ids}")
        return ids

    return _exchange(
        "ordering",
        "probability_ordering",
        bindings,
        cfg,
        backend,
        {"candidates": _candidate_payload(chosen)},
        parse,
        recorder,
    )


def assign_parents(
    ctx: DocumentContext,
    ordering: Sequence[str],
    cfg: RunConfig,
    backend: Backend,
    recorder: Optional[_Recorder] = None,
) -> BayesNetwork:
    """Assign each disclosure a parent set among the strictly-earlier ones."""
    recorder = recorder if recorder is not None else _Recorder()
    ordering = list(ordering)
    parents: Dict[str, frozenset] = {ordering[0]: frozenset()} if ordering else {}
    if cfg.network_mode == "fully_disjoint":
        return BayesNetwork(tuple(ordering), {i: frozenset() for i in ordering})
    if cfg.network_mode == "fully_connected":
        return BayesNetwork(
            tuple(ordering), {i: frozenset(ordering[:pos]) for pos, i in enumerate(ordering)}
        )
    for pos in range(1, len(ordering)):
        target = ctx.by_id(ordering[pos])
        priors = [ctx.by_id(i) for i in ordering[:pos]]
        bindings = {
            "document": ctx.text,
            "prior_list": _span_lines(priors),
            "disclosure_span": target.span,
        }

        def parse(raw: str, priors=priors):
            return frozenset(_match_spans(extract_list(raw), priors))

        parents[target.id] = _exchange(
            f"parents:{target.id}",
            "conditional_dependencies",
            bindings,
            cfg,
            backend,
            {
                "target": {"id": target.id, "span": target.span, "category": target.category.value},
                "priors": _candidate_payload(priors),
            },
            parse,
            recorder,
        )
    return BayesNetwork(tuple(ordering), parents)


def _history_block(history: Sequence[str], enabled: bool) -> str:
    if not enabled or not history:
        return ""
    lines = "\n".join(f"- {q}" for q in history)
    return (
        "Queries already generated for this post (do NOT repeat their information):\n"
        + lines
    )


def generate_queries(
    ctx: DocumentContext,
    network: BayesNetwork,
    cfg: RunConfig,
    backend: Backend,
    recorder: Optional[_Recorder] = None,
) -> List[QueryNode]:
    """One population query for the first disclosure, percentage queries after."""
    recorder = recorder if recorder is not None else _Recorder()
    if not network.ordering:
        raise PipelineError("query", "empty network", recorder.entries)
    queries: List[QueryNode] = []
    history: List[str] = []
    for pos, disclosure_id in enumerate(network.ordering):
        d = ctx.by_id(disclosure_id)
        if pos == 0:
            bindings = {
                "disclosure_span": d.span,
                "community": ctx.community or "(none)",
                "default_population": f"{int(cfg.default_population):,}",
                "query_history": _history_block(history, cfg.query_history),
            }

            def parse(raw: str):
                text = extract_tagged(raw, "query")
                lowered = text.lower()
                if "population" not in lowered and "number" not in lowered:
                    raise _GuardViolation(f"population query lacks a count keyword: {text!r}")
                return text

            text = _exchange(
                f"query:{d.id}",
                "population_query",
                bindings,
                cfg,
                backend,
                {"target": {"id": d.id, "span": d.span, "category": d.category.value}},
                parse,
                recorder,
            )
            queries.append(
                QueryNode(
                    target=d.id,
                    kind=POPULATION,
                    text=text,
                    semantics=QuerySemantics(target=(d.id, d.span)),
                )
            )
        else:
            parent_ids = [i for i in network.ordering[:pos] if i in network.parents_of(d.id)]
            parent_disclosures = [ctx.by_id(i) for i in parent_ids]
            bindings = {
                "prior_list": _span_lines(parent_disclosures),
                "disclosure_span": d.span,
                "span_category": d.category.value,
                "community": ctx.community or "(none)",
                "query_history": _history_block(history, cfg.query_history),
            }

            def parse(raw: str):
                text = extract_tagged(raw, "query")
                if "percent" not in text.lower():
                    raise _GuardViolation(f"percentage query lacks the percent keyword: {text!r}")
                return text

            text = _exchange(
                f"query:{d.id}",
                "probability_query",
                bindings,
                cfg,
                backend,
                {
                    "target": {"id": d.id, "span": d.span, "category": d.category.value},
                    "parents": _candidate_payload(parent_disclosures),
                },
                parse,
                recorder,
            )
            queries.append(
                QueryNode(
                    target=d.id,
                    kind=PERCENTAGE,
                    text=text,
                    semantics=QuerySemantics(
                        target=(d.id, d.span),
                        conditions=tuple((p.id, p.span) for p in parent_disclosures),
                    ),
                )
            )
        history.append(queries[-1].text)
    return queries


def _parse_decomposition(raw: str, query: QueryNode, min_parts: int):
    """Shared guard for both decomposition prompts.

    Returns None when the backend declined, else (subqueries, combine).
    """
    if "<list>" not in raw:
        # Declining via a plain <query> echo.
        extract_tagged(raw, "query")
        return None
    items = extract_list(raw)
    if len(items) < min_parts:
        return None
    combine = extract_tagged(raw, "math")
    try:
        tree = exprlang.parse(combine)
    except exprlang.ParseError as exc:
        raise _GuardViolation(f"combine does not parse: {exc}")
    subqueries = []
    for text, kind in items:
        sub_kind = POPULATION if kind and "pop" in kind.lower() else PERCENTAGE
        subqueries.append(
            QueryNode(target=query.target, kind=sub_kind, text=text, semantics=None)
        )
    canonical = exprlang.render(tree)
    try:
        return replace(query, subqueries=tuple(subqueries), combine=canonical)
    except ValueError as exc:
        raise _GuardViolation(str(exc))


def decompose_subqueries(
    query: QueryNode,
    cfg: RunConfig,
    backend: Backend,
    recorder: Optional[_Recorder] = None,
) -> QueryNode:
    """Try the range/generalization split, then (optionally) the discrete-OR split."""
    recorder = recorder if recorder is not None else _Recorder()
    if query.kind != PERCENTAGE:
        raise PipelineError("decompose", "only percentage queries decompose", recorder.entries)

    def parse_general(raw: str):
        return _parse_decomposition(raw, query, min_parts=1)

    decomposed = _exchange(
        f"decompose:{query.target}",
        "generalization_subquery",
        {"query": query.text},
        cfg,
        backend,
        {"query": query.text},
        parse_general,
        recorder,
    )
    if decomposed is not None:
        return decomposed
    if not cfg.discrete_subqueries:
        return query

    def parse_discrete(raw: str):
        # A single-item list echoes the original query: a decline.
        return _parse_decomposition(raw, query, min_parts=2)

    decomposed = _exchange(
        f"decompose:{query.target}",
        "discrete_subquery",
        {"query": query.text},
        cfg,
        backend,
        {"query": query.text},
        parse_discrete,
        recorder,
    )
    return decomposed if decomposed is not None else query


def _semantics_payload(query: QueryNode):
    if query.semantics is None:
        return None
    return {
        "target": list(query.semantics.target),
        "conditions": [list(c) for c in query.semantics.conditions],
    }


def estimate_answer(
    query: QueryNode,
    cfg: RunConfig,
    backend: Backend,
    recorder: Optional[_Recorder] = None,
    stage: Optional[str] = None,
) -> Answer:
    """Estimate one leaf query; numeric and confidence guards apply."""
    recorder = recorder if recorder is not None else _Recorder()
    if not query.is_leaf:
        raise PipelineError("estimate", "only leaf queries are estimated", recorder.entries)
    stage = stage or f"estimate:{query.target}"
    score_retried = False

    def parse(raw: str):
        nonlocal score_retried
        value = parse_numeric(extract_tagged(raw, "answer"), query.kind)
        confidence: Optional[float] = None
        try:
            confidence = float(extract_tagged(raw, "score"))
            if not (0 <= confidence <= 1):
                confidence = None
        except (ExtractionError, ValueError):
            confidence = None
        if confidence is None:
            if not score_retried:
                score_retried = True
                raise _GuardViolation("missing or invalid confidence score")
            log.warning("no confidence score for %r after re-prompt; defaulting to 1.0", query.text)
            confidence = 1.0
        return value, confidence

    value, confidence = _exchange(
        stage,
        "query_estimation",
        {"search_query": query.text},
        cfg,
        backend,
        {"semantics": _semantics_payload(query), "kind": query.kind, "text": query.text},
        parse,
        recorder,
    )
    return Answer(value=value, kind=query.kind, confidence=confidence, provenance=stage)


def review_and_simplify(
    query: QueryNode,
    answer: Answer,
    cfg: RunConfig,
    backend: Backend,
    recorder: Optional[_Recorder] = None,
    stage: Optional[str] = None,
) -> Tuple[QueryNode, Answer]:
    """Simplify and re-estimate when the review strategy distrusts the answer."""
    recorder = recorder if recorder is not None else _Recorder()
    stage = stage or f"review:{query.target}"
    if cfg.simplification == "none":
        return query, answer
    for _ in range(cfg.max_simplify_iterations):
        if cfg.simplification == "evaluator":
            def parse_verdict(raw: str):
                verdict = extract_tagged(raw, "answer").strip().lower()
                if verdict not in ("yes", "no"):
                    raise _GuardViolation(f"verdict must be Yes or No, got {verdict!r}")
                return verdict

            verdict = _exchange(
                stage,
                "evaluate_answer",
                {"query": query.text, "answer": _format_value(answer)},
                cfg,
                backend,
                {"query": query.text, "answer": answer.value},
                parse_verdict,
                recorder,
            )
            if verdict == "yes":
                break
        else:  # confidence_threshold
            if answer.confidence >= cfg.confidence_threshold:
                break

        def parse_query(raw: str):
            return extract_tagged(raw, "query")

        new_text = _exchange(
            f"simplify:{query.target}",
            "simplify_query",
            {"query": query.text},
            cfg,
            backend,
            {"query": query.text},
            parse_query,
            recorder,
        )
        query = replace(query, text=new_text)
        answer = replace(
            estimate_answer(query, cfg, backend, recorder, stage=f"estimate:{query.target}"),
            simplified=True,
        )
    return query, answer


def _format_value(answer: Answer) -> str:
    if answer.kind == POPULATION and float(answer.value).is_integer():
        return str(int(answer.value))
    return repr(answer.value)


def _substitute(expr: exprlang.Expr, slots: Mapping[str, exprlang.Expr]) -> exprlang.Expr:
    if isinstance(expr, exprlang.Lit):
        return expr
    if isinstance(expr, exprlang.Slot):
        return slots[expr.name]
    return exprlang.BinOp(
        expr.op, _substitute(expr.left, slots), _substitute(expr.right, slots)
    )


def recombine(
    network: BayesNetwork,
    queries: Sequence[QueryNode],
    answers: Mapping[str, Answer],
) -> Tuple[exprlang.Expr, float]:
    """Fold leaf answers through combine expressions into the k equation.

    ``answers`` is keyed by leaf path: ``q{i}`` for a leaf top-level query,
    ``q{i}/s{j}`` for subquery leaves. raw k is the population answer times
    the product of all percentage node values; each decomposed node's value is
    its combine expression over its subquery answers.
    """
    node_exprs: List[exprlang.Expr] = []
    for i, query in enumerate(queries):
        if query.is_leaf:
            node_exprs.append(exprlang.Lit(answers[f"q{i}"].value))
        else:
            slots = {
                f"s{j + 1}": exprlang.Lit(answers[f"q{i}/s{j + 1}"].value)
                for j in range(len(query.subqueries))
            }
            node_exprs.append(_substitute(exprlang.parse(query.combine), slots))
    if not node_exprs:
        raise PipelineError("recombine", "no queries to recombine")
    equation = node_exprs[0]
    if len(node_exprs) > 1:
        product = node_exprs[1]
        for node in node_exprs[2:]:
            product = exprlang.BinOp("*", product, node)
        equation = exprlang.BinOp("*", equation, product)
    try:
        raw_k = exprlang.evaluate(equation)
    except exprlang.EvalError as exc:
        raise PipelineError("recombine", str(exc))
    return equation, raw_k


def _estimate_tree(query, index, cfg, backend):
    """Estimate one top-level query tree; returns (final node, answers, transcript)."""
    recorder = _Recorder()
    answers: List[Tuple[str, Answer]] = []
    if query.is_leaf:
        answer = estimate_answer(query, cfg, backend, recorder, stage=f"estimate:q{index}")
        query, answer = review_and_simplify(
            query, answer, cfg, backend, recorder, stage=f"review:q{index}"
        )
        answers.append((f"q{index}", answer))
        return query, answers, recorder.entries
    final_subs = []
    for j, sub in enumerate(query.subqueries):
        path = f"q{index}/s{j + 1}"
        answer = estimate_answer(sub, cfg, backend, recorder, stage=f"estimate:{path}")
        sub, answer = review_and_simplify(
            sub, answer, cfg, backend, recorder, stage=f"review:{path}"
        )
        final_subs.append(sub)
        answers.append((path, answer))
    return replace(query, subqueries=tuple(final_subs)), answers, recorder.entries


def run(ctx: DocumentContext, cfg: RunConfig, backend: Backend) -> EstimateResult:
    """Full pipeline for the factorizing strategy."""
    if cfg.strategy != "branch":
        raise PipelineError("run", f"run() requires the branch strategy, got {cfg.strategy!r}")
    recorder = _Recorder()
    selected = select_disclosures(ctx, cfg, backend, recorder)
    ordering = order_disclosures(ctx, selected, cfg, backend, recorder)
    network = assign_parents(ctx, ordering, cfg, backend, recorder)
    queries = generate_queries(ctx, network, cfg, backend, recorder)
    queries = [
        decompose_subqueries(q, cfg, backend, recorder) if q.kind == PERCENTAGE else q
        for q in queries
    ]

    # Estimation fans out across top-level queries; results are merged in
    # query order so concurrency cannot change the transcript.
    workers = max(1, min(len(queries), getattr(backend, "max_concurrency", 1)))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(
                pool.map(lambda iq: _estimate_tree(iq[1], iq[0], cfg, backend), enumerate(queries))
            )
    else:
        outcomes = [_estimate_tree(q, i, cfg, backend) for i, q in enumerate(queries)]

    final_queries: List[QueryNode] = []
    answers: List[Tuple[str, Answer]] = []
    for node, node_answers, entries in outcomes:
        final_queries.append(node)
        answers.extend(node_answers)
        recorder.extend(entries)

    equation, raw_k = recombine(network, final_queries, dict(answers))
    return EstimateResult(
        k_hat=normalize_k(raw_k),
        raw_k=raw_k,
        equation=exprlang.render(equation),
        queries=tuple(final_queries),
        answers=tuple(answers),
        network=network,
        transcript=tuple(recorder.entries),
    )


def run_baseline(ctx: DocumentContext, cfg: RunConfig, backend: Backend) -> EstimateResult:
    """Single-prompt strategies: direct, stepwise-reasoned, or program-style."""
    if cfg.strategy not in ("few_shot", "cot", "pot"):
        raise PipelineError("baseline", f"not a baseline strategy: {cfg.strategy!r}")
    recorder = _Recorder()
    template_id = f"baseline_{cfg.strategy}"
    bindings = {
        "document": ctx.text,
        "disclosure_list": _span_lines(ctx.disclosures),
        "community": ctx.community or "(none)",
        "default_population": f"{int(cfg.default_population):,}",
    }

    if cfg.strategy == "pot":
        def parse(raw: str):
            text = extract_tagged(raw, "math")
            try:
                tree = exprlang.parse(text)
            except exprlang.ParseError as exc:
                raise _GuardViolation(f"equation does not parse: {exc}")
            if exprlang.slots_of(tree):
                raise _GuardViolation("equation must be closed (no free slots)")
            try:
                value = exprlang.evaluate(tree)
            except exprlang.EvalError as exc:
                raise _GuardViolation(str(exc))
            if value < 0:
                raise _GuardViolation(f"equation value {value} is negative")
            return exprlang.render(tree), value
    else:
        def parse(raw: str):
            value = parse_numeric(extract_tagged(raw, "answer"), POPULATION)
            return exprlang.render(exprlang.Lit(value)), value

    equation, raw_k = _exchange(
        cfg.strategy, template_id, bindings, cfg, backend, {}, parse, recorder
    )
    return EstimateResult(
        k_hat=normalize_k(raw_k),
        raw_k=raw_k,
        equation=equation,
        queries=(),
        answers=(),
        network=BayesNetwork((), {}),
        transcript=tuple(recorder.entries),
    )
