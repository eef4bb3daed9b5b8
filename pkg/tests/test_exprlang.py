import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from privmeter import exprlang
from privmeter.exprlang import BinOp, EvalError, Lit, ParseError, Slot, evaluate, parse, render

from helpers import eval_or_none, random_expr, reference_evaluate, same_value


class TestParse:
    def test_direct_arithmetic(self):
        assert evaluate(parse("3000 * 0.5 * 0.2")) == pytest.approx(300.0)

    def test_grouping(self):
        assert evaluate(parse("(0.25 + 0.05) / 2")) == pytest.approx(0.15)

    def test_precedence(self):
        assert evaluate(parse("2+3*4")) == 14.0
        assert evaluate(parse("(2+3)*4")) == 20.0

    def test_left_associativity(self):
        assert evaluate(parse("8 / 2 / 2")) == 2.0
        assert evaluate(parse("8 - 2 - 2")) == 4.0

    def test_scientific_literals(self):
        assert evaluate(parse("1.5e3 + 2E-2")) == pytest.approx(1500.02)

    def test_unbalanced_parens_offset(self):
        with pytest.raises(ParseError) as err:
            parse("((1 + 2")
        assert err.value.offset == 7

    def test_trailing_tokens(self):
        with pytest.raises(ParseError):
            parse("1 + 2 )")

    def test_empty_operand(self):
        with pytest.raises(ParseError):
            parse("1 + ")
        with pytest.raises(ParseError):
            parse("* 2")

    def test_empty_input(self):
        with pytest.raises(ParseError):
            parse("   ")

    def test_slots(self):
        tree = parse("n * p_1")
        assert exprlang.slots_of(tree) == ["n", "p_1"]


class TestEvaluate:
    def test_bindings(self):
        assert evaluate(parse("a + b"), {"a": 0.3, "b": 0.1}) == pytest.approx(0.4)

    def test_population_scale(self):
        assert evaluate(parse("n * p"), {"n": 5e8, "p": 1e-6}) == pytest.approx(500.0)

    def test_unbound_slot(self):
        with pytest.raises(EvalError, match="unbound"):
            evaluate(parse("a + 1"))

    def test_division_by_zero(self):
        with pytest.raises(EvalError, match="division"):
            evaluate(parse("1 / 0"))
        with pytest.raises(EvalError, match="division"):
            evaluate(parse("1 / x"), {"x": 0.0})

    def test_matches_reference_on_random_trees(self):
        rng = random.Random(20240817)
        bindings = {"s1": 0.25, "s2": 3.0, "x": 7.5}
        checked = 0
        while checked < 10_000:
            tree = random_expr(rng, depth=6, slot_names=tuple(bindings))
            expected = eval_or_none(tree, bindings)
            if expected is None:
                with pytest.raises(EvalError):
                    evaluate(tree, bindings)
                continue
            assert same_value(evaluate(tree, bindings), expected)  # bit-for-bit
            checked += 1


class TestRender:
    def test_canonical_form(self):
        tree = BinOp("+", Lit(1), BinOp("*", Lit(2), Lit(3)))
        assert render(tree) == "(1 + (2 * 3))"

    def test_single_literal(self):
        assert render(Lit(7)) == "7"

    def test_fractional_literal_roundtrip(self):
        assert evaluate(parse(render(Lit(0.1)))) == 0.1

    def test_negative_literal_rejected(self):
        with pytest.raises(ValueError):
            Lit(-1.0)


@st.composite
def expr_trees(draw, max_depth=5):
    if max_depth == 0 or draw(st.booleans()):
        if draw(st.booleans()):
            return Lit(draw(st.floats(min_value=0, max_value=1e9, allow_nan=False)))
        return Slot(draw(st.sampled_from(["s1", "s2", "n"])))
    op = draw(st.sampled_from("+-*/"))
    return BinOp(op, draw(expr_trees(max_depth=max_depth - 1)), draw(expr_trees(max_depth=max_depth - 1)))


BINDINGS = {"s1": 0.5, "s2": 2.0, "n": 1e6}


@settings(max_examples=300, deadline=None)
@given(expr_trees())
def test_render_parse_roundtrip_is_value_identical(tree):
    rendered = render(tree)
    reparsed = parse(rendered)
    expected = eval_or_none(tree, BINDINGS)
    if expected is None:
        with pytest.raises(EvalError):
            evaluate(reparsed, BINDINGS)
    else:
        assert same_value(evaluate(reparsed, BINDINGS), expected)
        assert same_value(evaluate(tree, BINDINGS), expected)


@settings(max_examples=200, deadline=None)
@given(expr_trees())
def test_evaluate_is_referentially_transparent(tree):
    first = eval_or_none(tree, BINDINGS)
    if first is not None:
        assert same_value(evaluate(tree, BINDINGS), evaluate(tree, BINDINGS))


def test_reference_evaluator_agrees_on_known_values():
    # Anchor the oracle itself before trusting it elsewhere.
    assert reference_evaluate(parse("2 + 3 * 4")) == 14.0
    assert reference_evaluate(parse("(10000 * (0.5 * 0.2))")) == 1000.0
