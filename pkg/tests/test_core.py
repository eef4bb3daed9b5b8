import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from privmeter.core import (
    Answer,
    BayesNetwork,
    Disclosure,
    DisclosureCategory,
    DocumentContext,
    QueryNode,
    QuerySemantics,
    RunConfig,
    normalize_k,
    validate_network,
)


def make_ctx(*spans, community=None):
    text = " | ".join(spans)
    disclosures = tuple(
        Disclosure(id=f"d{i}", span=s, category=DisclosureCategory.LOCATION)
        for i, s in enumerate(spans)
    )
    return DocumentContext(document_id="doc", text=text, disclosures=disclosures, community=community)


class TestNormalizeK:
    def test_clamps_to_one(self):
        assert normalize_k(0.2) == 1

    def test_identity_on_integers(self):
        assert normalize_k(2500000.0) == 2500000

    def test_half_rounds_up(self):
        assert normalize_k(10.5) == 11

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            normalize_k(float("inf"))
        with pytest.raises(ValueError):
            normalize_k(float("nan"))

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            normalize_k(-3.0)

    @given(st.floats(min_value=0, max_value=1e12))
    def test_monotone(self, x):
        assert normalize_k(x) <= normalize_k(x + 1.0)

    @given(st.integers(min_value=1, max_value=10**12))
    def test_idempotent_on_integers(self, n):
        assert normalize_k(float(n)) == n
        assert normalize_k(float(normalize_k(float(n)))) == normalize_k(float(n))


class TestValidateNetwork:
    def test_chain_is_valid(self):
        ctx = make_ctx("a-span", "b-span")
        net = BayesNetwork(("d0", "d1"), {"d0": frozenset(), "d1": frozenset({"d0"})})
        assert validate_network(net, ctx) == []

    def test_parent_not_prior(self):
        ctx = make_ctx("a-span", "b-span")
        net = BayesNetwork(("d0", "d1"), {"d0": frozenset({"d1"})})
        issues = validate_network(net, ctx)
        assert any("not prior" in i for i in issues)

    def test_unknown_disclosure(self):
        ctx = make_ctx("a-span")
        net = BayesNetwork(("d0", "ghost"), {})
        issues = validate_network(net, ctx)
        assert any("unknown" in i for i in issues)

    def test_duplicate_in_ordering(self):
        ctx = make_ctx("a-span")
        net = BayesNetwork(("d0", "d0"), {})
        assert any("duplicate" in i for i in validate_network(net, ctx))


class TestDocumentContext:
    def test_span_must_occur_verbatim(self):
        with pytest.raises(ValueError, match="verbatim"):
            DocumentContext(
                document_id="x",
                text="hello world",
                disclosures=(Disclosure("d0", "goodbye", DisclosureCategory.EVENTS),),
            )

    def test_community_name_counts_as_span(self):
        ctx = DocumentContext(
            document_id="x",
            text="hello world",
            disclosures=(Disclosure("d0", "oakville", DisclosureCategory.LOCATION),),
            community="oakville",
        )
        assert ctx.by_id("d0").span == "oakville"

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            DocumentContext(
                document_id="x",
                text="a b",
                disclosures=(
                    Disclosure("d0", "a", DisclosureCategory.AGE),
                    Disclosure("d0", "b", DisclosureCategory.AGE),
                ),
            )

    def test_subset_preserves_document_order(self):
        ctx = make_ctx("s0", "s1", "s2")
        sub = ctx.subset(["d2", "d0"])
        assert [d.id for d in sub.disclosures] == ["d0", "d2"]


class TestCategories:
    def test_closed_enumeration_size(self):
        assert len(DisclosureCategory) == 20

    def test_alias_parsing(self):
        assert DisclosureCategory.from_label("race/nationality") is DisclosureCategory.RACE_NATIONALITY
        assert DisclosureCategory.from_label("Mental Health") is DisclosureCategory.MENTAL_HEALTH
        assert DisclosureCategory.from_label("disclosure of other people") is DisclosureCategory.OTHER_PEOPLE
        assert DisclosureCategory.from_label("PII") is DisclosureCategory.PII

    def test_unknown_label_rejected(self):
        with pytest.raises(ValueError, match="unknown"):
            DisclosureCategory.from_label("favorite color")


class TestAnswerBounds:
    def test_percentage_bounds(self):
        Answer(0.5, "percentage")
        Answer(1.0, "percentage")
        with pytest.raises(ValueError):
            Answer(0.0, "percentage")
        with pytest.raises(ValueError):
            Answer(1.5, "percentage")

    def test_population_bounds(self):
        Answer(1.0, "population")
        with pytest.raises(ValueError):
            Answer(0.9, "population")

    def test_confidence_bounds(self):
        with pytest.raises(ValueError):
            Answer(0.5, "percentage", confidence=1.2)


class TestQueryNode:
    def test_combine_must_cover_slots(self):
        sub = QueryNode("d0", "percentage", "part one")
        QueryNode("d0", "percentage", "whole", subqueries=(sub,), combine="(s1 / 5)")
        with pytest.raises(ValueError):
            QueryNode("d0", "percentage", "whole", subqueries=(sub,), combine="(s1 + s1)")
        with pytest.raises(ValueError):
            QueryNode("d0", "percentage", "whole", subqueries=(sub,), combine="(s1 + s2)")

    def test_combine_without_subqueries_rejected(self):
        with pytest.raises(ValueError):
            QueryNode("d0", "percentage", "q", combine="s1")

    def test_semantics_coerced_to_tuples(self):
        sem = QuerySemantics(target=("a", "v"), conditions=[["b", "w"]])
        assert sem.conditions == (("b", "w"),)


class TestRunConfig:
    def test_defaults_match_contract(self):
        cfg = RunConfig()
        assert cfg.temperature == 0.7
        assert cfg.demonstrations == 3
        assert cfg.confidence_threshold == 0.55
        assert cfg.max_simplify_iterations == 1
        assert cfg.default_population == 5e8
        assert cfg.retry_limit == 3
        assert cfg.network_mode == "elicited"

    def test_bad_values_rejected(self):
        with pytest.raises(ValueError):
            RunConfig(strategy="zero_shot")
        with pytest.raises(ValueError):
            RunConfig(confidence_threshold=1.5)
        with pytest.raises(ValueError):
            RunConfig(retry_limit=0)
        with pytest.raises(ValueError):
            RunConfig(demonstrations=-1)
