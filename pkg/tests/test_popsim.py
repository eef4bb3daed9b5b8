import itertools
import math

import numpy as np
import pytest

from privmeter.core import PERCENTAGE, POPULATION, QueryNode, QuerySemantics
from privmeter.popsim import (
    AttributeSchema,
    GeneratorNetwork,
    PopsimError,
    count_matching,
    load_scenario,
    make_oracle_backend,
    oracle_answer,
    random_generator,
    sample_population,
    save_scenario,
    scenario_context,
)

from helpers import quota_population


def chain_generator(p_b_given_a=(0.9, 0.1)):
    """Two binary attributes with b strongly dependent on a."""
    schema = AttributeSchema((("a", ("a0", "a1")), ("b", ("b0", "b1"))))
    return GeneratorNetwork(
        schema=schema,
        parents={"a": (), "b": ("a",)},
        cpt={
            "a": {(): (0.5, 0.5)},
            "b": {("a0",): (1 - p_b_given_a[0], p_b_given_a[0]),
                  ("a1",): (1 - p_b_given_a[1], p_b_given_a[1])},
        },
    )


class TestGeneratorValidation:
    def test_row_sums_checked(self):
        schema = AttributeSchema((("a", ("x", "y")),))
        with pytest.raises(PopsimError, match="distribution"):
            GeneratorNetwork(schema, {"a": ()}, {"a": {(): (0.6, 0.6)}})

    def test_parent_must_precede(self):
        schema = AttributeSchema((("a", ("x",)), ("b", ("y",))))
        with pytest.raises(PopsimError, match="precede"):
            GeneratorNetwork(
                schema,
                {"a": ("b",), "b": ()},
                {"a": {("y",): (1.0,)}, "b": {(): (1.0,)}},
            )

    def test_missing_rows_detected(self):
        schema = AttributeSchema((("a", ("x", "y")), ("b", ("u", "v"))))
        with pytest.raises(PopsimError, match="rows"):
            GeneratorNetwork(
                schema,
                {"a": (), "b": ("a",)},
                {"a": {(): (0.5, 0.5)}, "b": {("x",): (0.5, 0.5)}},
            )


class TestSampling:
    def test_deterministic_cpts_give_identical_individuals(self):
        schema = AttributeSchema((("a", ("x", "y")), ("b", ("u", "v"))))
        gen = GeneratorNetwork(
            schema,
            {"a": (), "b": ("a",)},
            {"a": {(): (1.0, 0.0)}, "b": {("x",): (0.0, 1.0), ("y",): (1.0, 0.0)}},
        )
        pop = sample_population(gen, 500, seed=3)
        assert count_matching(pop, {"a": "x", "b": "v"}) == 500

    def test_same_seed_same_population(self):
        gen = random_generator(4, seed=11)
        p1 = sample_population(gen, 10_000, seed=42)
        p2 = sample_population(gen, 10_000, seed=42)
        for name in gen.schema.names:
            assert np.array_equal(p1.columns[name], p2.columns[name])

    def test_different_seed_differs(self):
        gen = random_generator(4, seed=11)
        p1 = sample_population(gen, 10_000, seed=1)
        p2 = sample_population(gen, 10_000, seed=2)
        assert any(
            not np.array_equal(p1.columns[n], p2.columns[n]) for n in gen.schema.names
        )

    def test_marginals_within_binomial_bounds(self):
        # Root attributes have exact CPT marginals; 3-sigma binomial check.
        n = 100_000
        gen = chain_generator()
        pop = sample_population(gen, n, seed=9)
        p = 0.5
        observed = count_matching(pop, {"a": "a1"})
        sigma = math.sqrt(n * p * (1 - p))
        assert abs(observed - n * p) <= 3 * sigma
        # Conditional: P(b1 | a0) = 0.9 among the a0 subpopulation.
        n_a0 = count_matching(pop, {"a": "a0"})
        obs_b1 = count_matching(pop, {"a": "a0", "b": "b1"})
        sigma = math.sqrt(n_a0 * 0.9 * 0.1)
        assert abs(obs_b1 - n_a0 * 0.9) <= 3 * sigma


class TestCounting:
    def test_empty_conjunction_counts_everyone(self):
        gen = random_generator(3, seed=5)
        pop = sample_population(gen, 1234, seed=5)
        assert count_matching(pop, {}) == 1234

    def test_zero_mass_value_counts_zero(self):
        schema = AttributeSchema((("a", ("x", "y")),))
        gen = GeneratorNetwork(schema, {"a": ()}, {"a": {(): (1.0, 0.0)}})
        pop = sample_population(gen, 100, seed=1)
        assert count_matching(pop, {"a": "y"}) == 0

    def test_unknown_attribute_rejected(self):
        gen = random_generator(3, seed=5)
        pop = sample_population(gen, 100, seed=5)
        with pytest.raises(PopsimError):
            count_matching(pop, {"nope": "x"})
        with pytest.raises(PopsimError):
            count_matching(pop, {"city": "never-a-value"})

    def test_matches_second_naive_counter(self):
        gen = random_generator(4, seed=13)
        pop = sample_population(gen, 5_000, seed=13)
        rng = np.random.default_rng(0)
        names = gen.schema.names
        rows = [pop.assignment(i) for i in range(pop.size)]  # naive route
        for _ in range(25):
            chosen = [n for n in names if rng.random() < 0.6]
            conj = {n: gen.schema.domain(n)[rng.integers(len(gen.schema.domain(n)))] for n in chosen}
            naive = sum(1 for r in rows if all(r[k] == v for k, v in conj.items()))
            assert count_matching(pop, conj) == naive


class TestOracleAnswer:
    def test_percentage_is_exact_ratio(self):
        gen = chain_generator()
        pop = sample_population(gen, 20_000, seed=21)
        q = QueryNode(
            target="b",
            kind=PERCENTAGE,
            text="percentage of a0 THAT b1",
            semantics=QuerySemantics(target=("b", "b1"), conditions=(("a", "a0"),)),
        )
        answer = oracle_answer(pop, q)
        expected = count_matching(pop, {"a": "a0", "b": "b1"}) / count_matching(pop, {"a": "a0"})
        assert answer.value == expected
        assert answer.confidence == 1.0

    def test_population_query_counts(self):
        gen = chain_generator()
        pop = sample_population(gen, 20_000, seed=21)
        q = QueryNode(
            target="a",
            kind=POPULATION,
            text="population of a0",
            semantics=QuerySemantics(target=("a", "a0")),
        )
        assert oracle_answer(pop, q).value == count_matching(pop, {"a": "a0"})

    def test_zero_support_condition_errors(self):
        schema = AttributeSchema((("a", ("x", "y")), ("b", ("u", "v"))))
        gen = GeneratorNetwork(
            schema,
            {"a": (), "b": ()},
            {"a": {(): (1.0, 0.0)}, "b": {(): (0.5, 0.5)}},
        )
        pop = sample_population(gen, 100, seed=2)
        q = QueryNode(
            target="b",
            kind=PERCENTAGE,
            text="q",
            semantics=QuerySemantics(target=("b", "u"), conditions=(("a", "y"),)),
        )
        with pytest.raises(PopsimError, match="zero support"):
            oracle_answer(pop, q)


class TestChainRuleExactness:
    def test_product_of_conditionals_times_n_is_the_count(self):
        """Fully-connected empirical chain rule is an identity, not an estimate."""
        for seed in range(12):
            gen = random_generator(4, seed=seed)
            pop = sample_population(gen, 30_000, seed=seed)
            assignment = pop.assignment(0)
            names = list(gen.schema.names)
            product = float(count_matching(pop, {names[0]: assignment[names[0]]}))
            for i in range(1, len(names)):
                conds = {n: assignment[n] for n in names[:i]}
                both = dict(conds, **{names[i]: assignment[names[i]]})
                product *= count_matching(pop, both) / count_matching(pop, conds)
            truth = count_matching(pop, assignment)
            assert abs(product - truth) < 0.5

    def test_dropping_exactly_independent_parent_changes_nothing(self):
        schema = AttributeSchema((("a", ("a0", "a1")), ("b", ("b0", "b1"))))
        counts = {  # exact product form: a ⟂ b in the realized population
            ("a0", "b0"): 30, ("a0", "b1"): 70,
            ("a1", "b0"): 60, ("a1", "b1"): 140,
        }
        pop = quota_population(schema, counts)
        with_parent = count_matching(pop, {"a": "a0", "b": "b1"}) / count_matching(pop, {"a": "a0"})
        without = count_matching(pop, {"b": "b1"}) / pop.size
        assert with_parent == without

    def test_dropping_dependent_parent_changes_the_product(self):
        schema = AttributeSchema((("a", ("a0", "a1")), ("b", ("b0", "b1"))))
        counts = {
            ("a0", "b0"): 10, ("a0", "b1"): 90,
            ("a1", "b0"): 90, ("a1", "b1"): 10,
        }
        pop = quota_population(schema, counts)
        with_parent = count_matching(pop, {"a": "a0", "b": "b1"}) / count_matching(pop, {"a": "a0"})
        without = count_matching(pop, {"b": "b1"}) / pop.size
        assert with_parent != without


class TestScenario:
    def test_context_spans_are_verbatim(self):
        gen = random_generator(5, seed=3)
        pop = sample_population(gen, 1000, seed=3)
        ctx = scenario_context(pop, row=7)
        for d in ctx.disclosures:
            assert d.span in ctx.text

    def test_scenario_roundtrip(self, tmp_path):
        gen = random_generator(4, seed=19)
        path = tmp_path / "scenario.json"
        save_scenario(gen, path, population_size=5000, seed=19)
        loaded, size, seed, row = load_scenario(path)
        assert size == 5000 and seed == 19 and row == 0
        assert loaded.schema == gen.schema
        assert loaded.parents == gen.parents
        p1 = sample_population(gen, 2000, seed=4)
        p2 = sample_population(loaded, 2000, seed=4)
        for name in gen.schema.names:
            assert np.array_equal(p1.columns[name], p2.columns[name])
