"""Evaluation metrics for k estimates and elicited networks.

The two headline metrics treat privacy on a log scale: log error is the
bit-distance between estimated and gold counts (identifying someone in a
crowd of k carries log2(k) bits of uncertainty), and the range metric scores
a prediction as correct when the gold value lies within a factor ``a`` of it.
Rank agreement uses tie-adjusted Spearman and Kendall; system comparisons use
a seeded paired bootstrap over posts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .core import BayesNetwork

__all__ = [
    "MetricError",
    "EvalPair",
    "log_error",
    "range_hit",
    "range_metric",
    "spearman_rho",
    "kendall_tau",
    "percentage_error",
    "shd",
    "independence_rate",
    "paired_bootstrap",
    "evaluate_system",
    "results_table",
]


class MetricError(Exception):
    pass


@dataclass(frozen=True)
class EvalPair:
    """One scored post: estimate vs gold, both integers >= 1."""

    k_hat: int
    k_star: int
    post_id: str = ""
    domain: str = ""

    def __post_init__(self):
        if self.k_hat < 1 or self.k_star < 1:
            raise MetricError("k values must be >= 1")


def log_error(k_hat: float, k_star: float) -> float:
    """|log2(k_hat) - log2(k_star)|; symmetric, zero iff equal."""
    if k_hat < 1 or k_star < 1:
        raise MetricError(f"k values must be >= 1, got {k_hat}, {k_star}")
    return abs(math.log2(k_hat) - math.log2(k_star))


def range_hit(k_hat: float, k_star: float, a: float) -> bool:
    """True when k_hat/a <= k_star <= a*k_hat, boundaries inclusive."""
    if a <= 1:
        raise MetricError(f"range factor must exceed 1, got {a}")
    return k_hat / a <= k_star <= a * k_hat


def range_metric(pairs: Sequence[EvalPair], a: float = 5.0) -> float:
    if not pairs:
        raise MetricError("no pairs to score")
    return sum(range_hit(p.k_hat, p.k_star, a) for p in pairs) / len(pairs)


def _check_vectors(xs, ys) -> Tuple[np.ndarray, np.ndarray]:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise MetricError("inputs must be equal-length vectors")
    if len(xs) < 2:
        raise MetricError("need at least two observations")
    return xs, ys


def spearman_rho(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Rank correlation with average ranks for ties."""
    xs, ys = _check_vectors(xs, ys)
    rx = stats.rankdata(xs)
    ry = stats.rankdata(ys)
    if np.ptp(rx) == 0 or np.ptp(ry) == 0:
        raise MetricError("rank correlation undefined: zero variance after ranking")
    rho = stats.spearmanr(xs, ys).statistic
    return float(rho)


def kendall_tau(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Tie-adjusted tau-b."""
    xs, ys = _check_vectors(xs, ys)
    if np.ptp(xs) == 0 or np.ptp(ys) == 0:
        raise MetricError("rank correlation undefined: zero variance after ranking")
    tau = stats.kendalltau(xs, ys, variant="b").statistic
    return float(tau)


def percentage_error(est: float, truth: float) -> float:
    """|est - truth| / truth."""
    if truth <= 0:
        raise MetricError(f"truth must be positive, got {truth}")
    return abs(est - truth) / truth


def shd(n1: BayesNetwork, n2: BayesNetwork) -> int:
    """Structural Hamming distance on the shared node set.

    Counts edge additions, deletions, and reversals (a reversal costs 1)
    needed to turn one network into the other, after restricting both to the
    nodes they share.
    """
    shared = set(n1.ordering) & set(n2.ordering)
    e1 = {(p, c) for p, c in n1.edges() if p in shared and c in shared}
    e2 = {(p, c) for p, c in n2.edges() if p in shared and c in shared}
    distance = 0
    seen = set()
    for edge in e1 | e2:
        pair = frozenset(edge)
        if pair in seen:
            continue
        seen.add(pair)
        u, v = edge
        state1 = ((u, v) in e1, (v, u) in e1)
        state2 = ((u, v) in e2, (v, u) in e2)
        if state1 != state2:
            distance += 1
    return distance


def independence_rate(network: BayesNetwork) -> float:
    """Mean share of prior variables dropped from each parent set."""
    m = len(network.ordering)
    if m < 2:
        raise MetricError("independence rate undefined for fewer than two nodes")
    shares = []
    for i in range(1, m):
        node = network.ordering[i]
        shares.append(1.0 - len(network.parents_of(node)) / i)
    return float(np.mean(shares))


def paired_bootstrap(
    pairs_a: Sequence[EvalPair],
    pairs_b: Sequence[EvalPair],
    metric: Callable[[Sequence[EvalPair]], float],
    iterations: int = 100_000,
    seed: int = 0,
    higher_is_better: bool = True,
    chunk: int = 2048,
) -> float:
    """One-sided p-value that system A does not outperform system B.

    Posts are resampled with replacement; p is the fraction of resamples
    where A fails to beat B on the chosen metric. Seeded and reproducible;
    resampling is chunked so a million iterations stay in modest memory.
    """
    if iterations < 1:
        raise MetricError("iterations must be >= 1")
    ids_a = [p.post_id for p in pairs_a]
    ids_b = [p.post_id for p in pairs_b]
    if ids_a != ids_b:
        raise MetricError("paired bootstrap needs identical post ids in both systems")
    n = len(pairs_a)
    if n == 0:
        raise MetricError("no pairs to resample")
    rng = np.random.default_rng(seed)
    not_better = 0
    done = 0
    while done < iterations:
        block = min(chunk, iterations - done)
        idx = rng.integers(0, n, size=(block, n))
        for row in idx:
            sample_a = [pairs_a[i] for i in row]
            sample_b = [pairs_b[i] for i in row]
            score_a = metric(sample_a)
            score_b = metric(sample_b)
            better = score_a > score_b if higher_is_better else score_a < score_b
            if not better:
                not_better += 1
        done += block
    return not_better / iterations


def evaluate_system(
    pairs: Sequence[EvalPair], range_factors: Sequence[float] = (2, 5, 10)
) -> Dict[str, object]:
    """Summary row: rank correlation, mean log error, range accuracy per factor."""
    if len(pairs) < 2:
        raise MetricError("need at least two pairs to evaluate a system")
    k_hats = [p.k_hat for p in pairs]
    k_stars = [p.k_star for p in pairs]
    return {
        "spearman_rho": spearman_rho(k_hats, k_stars),
        "log_error": float(np.mean([log_error(p.k_hat, p.k_star) for p in pairs])),
        "range": {str(int(a)): range_metric(pairs, a) for a in range_factors},
        "count": len(pairs),
    }


def results_table(
    systems: Mapping[str, Sequence[EvalPair]], range_factors: Sequence[float] = (2, 5, 10)
) -> Dict[str, object]:
    """Machine-readable results table, one row per system."""
    return {
        "systems": [
            {"system": name, **evaluate_system(pairs, range_factors)}
            for name, pairs in systems.items()
        ]
    }
