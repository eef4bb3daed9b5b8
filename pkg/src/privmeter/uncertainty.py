"""Repeated-run statistics: ensembles, self-consistency, prediction intervals.

Two resampling modes quantify how stable an estimate is. Re-evaluation reruns
the whole pipeline R times and summarizes the k samples (mean, sample standard
deviation, coefficient of variation). Self-consistency fixes one elicited
network and its queries, re-samples only the estimation stage m times per
query, and recombines the per-query means. High variance empirically flags
inaccurate estimates, so the coefficient of variation doubles as a confidence
signal, and two-sigma prediction intervals give users a range instead of a
point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import pipeline
from .core import (
    Answer,
    DocumentContext,
    PERCENTAGE,
    QueryNode,
    RunConfig,
    normalize_k,
)
from .metrics import EvalPair, MetricError, range_metric

__all__ = [
    "UncertaintyError",
    "RunEnsemble",
    "KInterval",
    "SelfConsistencyResult",
    "reevaluate",
    "self_consistency",
    "k_interval",
    "query_interval_bounds",
    "combined_interval",
    "interval_prf",
    "macro_f1",
    "stratify_by_variance",
]


class UncertaintyError(Exception):
    pass


@dataclass(frozen=True)
class RunEnsemble:
    """k samples from repeated runs plus their summary statistics."""

    post_id: str
    samples: Tuple[int, ...]
    mean: float
    sd: float
    cv: float

    @classmethod
    def from_samples(cls, post_id: str, samples: Sequence[int]) -> "RunEnsemble":
        if len(samples) < 2:
            raise UncertaintyError("an ensemble needs at least two samples")
        if any(s < 1 for s in samples):
            raise UncertaintyError("k samples must be >= 1")
        arr = np.asarray(samples, dtype=float)
        mean = float(arr.mean())
        sd = float(arr.std(ddof=1))
        return cls(post_id, tuple(int(s) for s in samples), mean, sd, sd / mean)


@dataclass(frozen=True)
class KInterval:
    """Closed interval of plausible k values; the floor is 1 by definition."""

    lo: float
    hi: float

    def __post_init__(self):
        if self.lo < 1 or self.hi < self.lo:
            raise UncertaintyError(f"invalid interval [{self.lo}, {self.hi}]")


def reevaluate(
    ctx: DocumentContext, cfg: RunConfig, backend, runs: int
) -> RunEnsemble:
    """Run the full pipeline ``runs`` times and summarize the k samples."""
    if runs < 2:
        raise UncertaintyError("re-evaluation needs at least two runs")
    samples: List[int] = []
    failures: List[str] = []
    for i in range(runs):
        try:
            if cfg.strategy == "branch":
                result = pipeline.run(ctx, cfg, backend)
            else:
                result = pipeline.run_baseline(ctx, cfg, backend)
            samples.append(result.k_hat)
        except pipeline.PipelineError as exc:
            failures.append(f"run {i}: {exc}")
    if failures:
        raise UncertaintyError("ensemble runs failed: " + "; ".join(failures))
    return RunEnsemble.from_samples(ctx.document_id, samples)


@dataclass(frozen=True)
class SelfConsistencyResult:
    post_id: str
    k_bar: float
    k_hat: int
    query_samples: Tuple[Tuple[str, Tuple[float, ...]], ...]
    query_means: Tuple[Tuple[str, float], ...]
    total_variance: float


def self_consistency(
    ctx: DocumentContext, cfg: RunConfig, backend, m: int
) -> SelfConsistencyResult:
    """One elicitation pass, m estimation samples per query, means recombined.

    Only the estimation stage is re-sampled; the network and query texts stay
    fixed, and the simplification loop is left out of the re-samples so every
    sample answers the same query. Total variance is the sum of the per-query
    sample variances.
    """
    if m < 2:
        raise UncertaintyError("self-consistency needs at least two samples")
    recorder = pipeline._Recorder()
    selected = pipeline.select_disclosures(ctx, cfg, backend, recorder)
    ordering = pipeline.order_disclosures(ctx, selected, cfg, backend, recorder)
    network = pipeline.assign_parents(ctx, ordering, cfg, backend, recorder)
    queries = pipeline.generate_queries(ctx, network, cfg, backend, recorder)
    queries = [
        pipeline.decompose_subqueries(q, cfg, backend, recorder)
        if q.kind == PERCENTAGE
        else q
        for q in queries
    ]
    leaves: List[Tuple[str, QueryNode]] = []
    for i, q in enumerate(queries):
        if q.is_leaf:
            leaves.append((f"q{i}", q))
        else:
            for j, sub in enumerate(q.subqueries):
                leaves.append((f"q{i}/s{j + 1}", sub))

    samples: Dict[str, List[float]] = {path: [] for path, _ in leaves}
    for _ in range(m):
        for path, leaf in leaves:
            answer = pipeline.estimate_answer(
                leaf, cfg, backend, recorder, stage=f"estimate:{path}"
            )
            samples[path].append(answer.value)

    means = {path: float(np.mean(vals)) for path, vals in samples.items()}
    variances = {path: float(np.var(vals, ddof=1)) for path, vals in samples.items()}
    # Means of in-bounds samples stay in bounds, so these construct cleanly.
    mean_answers = {
        path: Answer(
            value=means[path], kind=leaf.kind, confidence=1.0, provenance="self_consistency"
        )
        for path, leaf in leaves
    }
    _, k_bar = pipeline.recombine(network, queries, mean_answers)
    return SelfConsistencyResult(
        post_id=ctx.document_id,
        k_bar=k_bar,
        k_hat=normalize_k(k_bar),
        query_samples=tuple((path, tuple(vals)) for path, vals in samples.items()),
        query_means=tuple(sorted(means.items())),
        total_variance=float(sum(variances.values())),
    )


def k_interval(ensemble: RunEnsemble) -> KInterval:
    """Two-sigma interval around the ensemble mean, clamped below at 1."""
    return KInterval(lo=max(1.0, ensemble.mean - 2 * ensemble.sd), hi=ensemble.mean + 2 * ensemble.sd)


def query_interval_bounds(samples: Sequence[float], kind: str = PERCENTAGE) -> Tuple[float, float]:
    """Two-sigma bounds for one query from its estimation samples.

    The lower bound falls back to the smallest sample when mean - 2*sd is not
    positive (a zero probability would zero out k); the upper bound is capped
    at 1 for percentage queries only.
    """
    if len(samples) < 2:
        raise UncertaintyError("need at least two samples per query")
    arr = np.asarray(samples, dtype=float)
    mean = float(arr.mean())
    spread = 2.0 * math.sqrt(float(arr.var(ddof=1)))
    lo = mean - spread
    if not lo > 0:
        lo = float(arr.min())
    hi = mean + spread
    if kind == PERCENTAGE:
        hi = min(hi, 1.0)
    return lo, hi


def combined_interval(
    per_query_samples: Mapping[str, Sequence[float]],
    kinds: Mapping[str, str],
) -> KInterval:
    """Product of per-query bounds: population bounds times percentage bounds."""
    lo = 1.0
    hi = 1.0
    for path, samples in per_query_samples.items():
        q_lo, q_hi = query_interval_bounds(samples, kinds.get(path, PERCENTAGE))
        lo *= q_lo
        hi *= q_hi
    return KInterval(lo=max(1.0, lo), hi=max(1.0, hi))


def _integer_count(lo: float, hi: float) -> int:
    if hi < lo:
        return 0
    return max(0, int(math.floor(hi)) - int(math.ceil(lo)) + 1)


def interval_prf(pred: KInterval, gold: KInterval) -> Tuple[float, float, float]:
    """Precision, recall, F1 over the integers contained in each interval.

    Counting is closed-form on the interval bounds, never by materializing
    integer sets (gold counts reach tens of millions).
    """
    pred_n = _integer_count(pred.lo, pred.hi)
    gold_n = _integer_count(gold.lo, gold.hi)
    tp = _integer_count(max(pred.lo, gold.lo), min(pred.hi, gold.hi))
    precision = tp / pred_n if pred_n else 0.0
    recall = tp / gold_n if gold_n else 0.0
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1


def macro_f1(pairs: Sequence[Tuple[KInterval, KInterval]]) -> float:
    """Mean per-post F1 over (predicted, gold) interval pairs."""
    if not pairs:
        raise UncertaintyError("no interval pairs")
    return float(np.mean([interval_prf(p, g)[2] for p, g in pairs]))


def stratify_by_variance(
    ensembles: Sequence[RunEnsemble],
    pairs: Sequence[EvalPair],
    a: float = 5.0,
) -> Tuple[Optional[float], Optional[float]]:
    """Range accuracy split at the mean coefficient of variation.

    Posts with cv <= mean go to the low-variance stratum (ties low, so an
    all-equal batch populates a single stratum); returns (low, high) range
    accuracies, None for an empty stratum.
    """
    by_id = {e.post_id: e for e in ensembles}
    if set(by_id) != {p.post_id for p in pairs}:
        raise MetricError("ensembles and pairs must cover the same post ids")
    mean_cv = float(np.mean([e.cv for e in ensembles]))
    low = [p for p in pairs if by_id[p.post_id].cv <= mean_cv]
    high = [p for p in pairs if by_id[p.post_id].cv > mean_cv]
    low_acc = range_metric(low, a) if low else None
    high_acc = range_metric(high, a) if high else None
    return low_acc, high_acc
