"""Independent reference implementations used as test oracles.

Everything here deliberately takes a different route from the library code it
checks: the expression evaluator walks an explicit stack instead of direct
recursion, the rank statistics come straight from their pairwise definitions
with no sorting, and the interval scorer materializes actual integer sets.
Keep it that way — these exist to disagree when the implementation is wrong.
"""

from __future__ import annotations

import math
import random

from privmeter import exprlang
from privmeter.exprlang import BinOp, Lit, Slot


def reference_evaluate(expr, bindings=None):
    """Stack-machine evaluator: explicit postorder, no recursion."""
    bindings = bindings or {}
    out = []
    stack = [("visit", expr)]
    while stack:
        action, node = stack.pop()
        if action == "visit":
            if isinstance(node, Lit):
                out.append(node.value)
            elif isinstance(node, Slot):
                out.append(float(bindings[node.name]))
            else:
                stack.append(("apply", node))
                stack.append(("visit", node.right))
                stack.append(("visit", node.left))
        else:
            right = out.pop()
            left = out.pop()
            if node.op == "+":
                out.append(left + right)
            elif node.op == "-":
                out.append(left - right)
            elif node.op == "*":
                out.append(left * right)
            else:
                if right == 0.0:
                    raise ZeroDivisionError
                out.append(left / right)
    return out[0]


def random_expr(rng: random.Random, depth: int, slot_names=()):
    """Random tree up to the given depth; literals kept non-negative."""
    if depth <= 0 or rng.random() < 0.3:
        if slot_names and rng.random() < 0.3:
            return Slot(rng.choice(list(slot_names)))
        choice = rng.random()
        if choice < 0.4:
            return Lit(float(rng.randint(0, 10_000)))
        if choice < 0.8:
            return Lit(round(rng.random(), 6))
        return Lit(rng.random() * 10.0**rng.randint(-6, 9))
    op = rng.choice("++**-/")  # skew toward the operators the pipeline emits
    left = random_expr(rng, depth - 1, slot_names)
    right = random_expr(rng, depth - 1, slot_names)
    return BinOp(op, left, right)


def eval_or_none(expr, bindings=None):
    """Evaluate, treating division-by-zero as None; IEEE overflow is a value."""
    try:
        return reference_evaluate(expr, bindings)
    except ZeroDivisionError:
        return None


def same_value(a, b):
    """Bit-level agreement, counting nan == nan (inf - inf cases)."""
    if math.isnan(a) and math.isnan(b):
        return True
    return a == b


# ---------------------------------------------------------------------------
# Rank statistics from their pairwise definitions (O(n^2), no sorting).


def brute_average_ranks(xs):
    ranks = []
    for i, x in enumerate(xs):
        below = sum(1 for y in xs if y < x)
        ties = sum(1 for y in xs if y == x)
        ranks.append(below + (ties + 1) / 2)
    return ranks


def brute_spearman(xs, ys):
    rx = brute_average_ranks(xs)
    ry = brute_average_ranks(ys)
    n = len(rx)
    mean_x = sum(rx) / n
    mean_y = sum(ry) / n
    cov = sum((a - mean_x) * (b - mean_y) for a, b in zip(rx, ry))
    var_x = sum((a - mean_x) ** 2 for a in rx)
    var_y = sum((b - mean_y) ** 2 for b in ry)
    return cov / math.sqrt(var_x * var_y)


def brute_kendall_tau_b(xs, ys):
    n = len(xs)
    concordant = discordant = tied_x = tied_y = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = xs[i] - xs[j]
            dy = ys[i] - ys[j]
            if dx == 0 and dy == 0:
                continue
            if dx == 0:
                tied_x += 1
            elif dy == 0:
                tied_y += 1
            elif (dx > 0) == (dy > 0):
                concordant += 1
            else:
                discordant += 1
    n0 = n * (n - 1) / 2
    tx = sum(1 for i in range(n) for j in range(i + 1, n) if xs[i] == xs[j])
    ty = sum(1 for i in range(n) for j in range(i + 1, n) if ys[i] == ys[j])
    denom = math.sqrt((n0 - tx) * (n0 - ty))
    return (concordant - discordant) / denom


def brute_interval_prf(pred, gold):
    """PRF by literally materializing the integer sets. Small intervals only."""
    pset = set(range(math.ceil(pred.lo), math.floor(pred.hi) + 1))
    gset = set(range(math.ceil(gold.lo), math.floor(gold.hi) + 1))
    tp = len(pset & gset)
    precision = tp / len(pset) if pset else 0.0
    recall = tp / len(gset) if gset else 0.0
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1


# ---------------------------------------------------------------------------
# Exact populations for independence tests.


def quota_population(schema, counts):
    """Build a Population with exact per-assignment counts (no sampling)."""
    import numpy as np

    from privmeter.popsim import Population

    names = schema.names
    columns = {name: [] for name in names}
    for assignment, count in counts.items():
        for name, value in zip(names, assignment):
            columns[name].extend([schema.domain(name).index(value)] * count)
    return Population(
        schema=schema,
        columns={k: np.array(v, dtype=np.int64) for k, v in columns.items()},
    )
