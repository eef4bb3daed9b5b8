"""Command-line interface.

Subcommands: estimate, evaluate, uncertainty, simulate, validate, serve,
bootstrap. Everything prints JSON to stdout and exits nonzero with a
diagnostic on stderr when something fails.
"""

from __future__ import annotations

import json
import sys

import click

from . import datasetio, metrics, pipeline, popsim, uncertainty
from .core import RunConfig
from .llm.backend import HttpChatBackend, ScriptedBackend
from .metrics import EvalPair


def _fail(message: str, code: int = 1):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _build_backend(kind: str, fixture: str | None, scenario: str | None):
    if kind == "live":
        return HttpChatBackend()
    if kind == "scripted":
        if not fixture:
            _fail("--fixture is required for the scripted backend")
        return ScriptedBackend.from_file(fixture)
    if kind == "oracle":
        if not scenario:
            _fail("--scenario is required for the oracle backend")
        gen, size, seed, _row = popsim.load_scenario(scenario)
        pop = popsim.sample_population(gen, size, seed)
        return popsim.make_oracle_backend(pop, gen)
    _fail(f"unknown backend {kind!r}")


def _load_dataset(path):
    try:
        return datasetio.load(path)
    except (OSError, datasetio.DatasetError) as exc:
        _fail(str(exc))


def _load_predictions(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        system = doc.get("system", path)
        preds = {str(p["id"]): p for p in doc["predictions"]}
        return system, preds
    except (OSError, ValueError, KeyError) as exc:
        _fail(f"{path}: bad predictions file: {exc}")


def _pairs_from_predictions(preds, posts_by_id):
    pairs = []
    for pid, p in preds.items():
        if "k_star" in p:
            k_star = int(p["k_star"])
        elif posts_by_id is not None:
            post = posts_by_id.get(pid)
            if post is None:
                _fail(f"prediction for unknown post id {pid!r}")
            k_star = post.orderings[0].k_star
        else:
            _fail(f"prediction {pid!r} has no k_star and no dataset was given")
        pairs.append(EvalPair(k_hat=int(p["k_hat"]), k_star=k_star, post_id=pid))
    return sorted(pairs, key=lambda p: p.post_id)


backend_options = [
    click.option("--backend", "backend_kind", default="live", show_default=True,
                 type=click.Choice(["live", "oracle", "scripted"])),
    click.option("--fixture", default=None, help="Scripted-backend fixture file."),
    click.option("--scenario", default=None, help="Oracle-backend scenario file."),
]


def _with_backend_options(fn):
    for opt in reversed(backend_options):
        fn = opt(fn)
    return fn


@click.group()
def main():
    """Estimate how many people match the personal details in a text."""


@main.command()
@click.argument("dataset", type=click.Path(exists=True))
@click.option("--post", "post_id", required=True)
@click.option("--strategy", default="branch", show_default=True,
              type=click.Choice(["branch", "cot", "pot", "few-shot"]))
@_with_backend_options
def estimate(dataset, post_id, strategy, backend_kind, fixture, scenario):
    """Run one post from DATASET through the estimator."""
    posts = _load_dataset(dataset)
    post = next((p for p in posts if p.post_id == post_id), None)
    if post is None:
        _fail(f"no post {post_id!r} in {dataset}")
    backend = _build_backend(backend_kind, fixture, scenario)
    cfg = RunConfig(strategy=strategy.replace("-", "_"))
    try:
        if cfg.strategy == "branch":
            result = pipeline.run(post.to_context(), cfg, backend)
        else:
            result = pipeline.run_baseline(post.to_context(), cfg, backend)
    except pipeline.PipelineError as exc:
        _fail(str(exc))
    click.echo(json.dumps(datasetio.result_to_json(result), indent=2))


@main.command()
@click.argument("dataset", type=click.Path(exists=True))
@click.argument("predictions", type=click.Path(exists=True))
@click.option("--a", "range_a", default=5.0, show_default=True, type=float)
def evaluate(dataset, predictions, range_a):
    """Score PREDICTIONS against DATASET gold values."""
    posts = {p.post_id: p for p in _load_dataset(dataset)}
    system, preds = _load_predictions(predictions)
    pairs = _pairs_from_predictions(preds, posts)
    factors = sorted({2.0, 5.0, 10.0, float(range_a)})
    try:
        table = metrics.results_table({system: pairs}, range_factors=factors)
    except metrics.MetricError as exc:
        _fail(str(exc))
    click.echo(json.dumps(table, indent=2, sort_keys=True))


@main.command(name="uncertainty")
@click.argument("dataset", type=click.Path(exists=True))
@click.option("--runs", default=5, show_default=True, type=int)
@click.option("--mode", default="reeval", show_default=True,
              type=click.Choice(["reeval", "self-consistency"]))
@click.option("--post", "post_id", default=None, help="Restrict to one post id.")
@_with_backend_options
def uncertainty_cmd(dataset, runs, mode, post_id, backend_kind, fixture, scenario):
    """Repeated-run uncertainty statistics for DATASET posts."""
    posts = _load_dataset(dataset)
    if post_id is not None:
        posts = [p for p in posts if p.post_id == post_id]
        if not posts:
            _fail(f"no post {post_id!r} in {dataset}")
    backend = _build_backend(backend_kind, fixture, scenario)
    cfg = RunConfig()
    rows = []
    for post in posts:
        ctx = post.to_context()
        try:
            if mode == "reeval":
                ens = uncertainty.reevaluate(ctx, cfg, backend, runs)
                interval = uncertainty.k_interval(ens)
                rows.append({
                    "id": post.post_id, "mode": mode, "samples": list(ens.samples),
                    "mean": ens.mean, "sd": ens.sd, "cv": ens.cv,
                    "interval": [interval.lo, interval.hi],
                })
            else:
                res = uncertainty.self_consistency(ctx, cfg, backend, runs)
                rows.append({
                    "id": post.post_id, "mode": mode, "k_bar": res.k_bar,
                    "k_hat": res.k_hat, "total_variance": res.total_variance,
                    "query_means": {k: v for k, v in res.query_means},
                })
        except (uncertainty.UncertaintyError, pipeline.PipelineError) as exc:
            _fail(f"{post.post_id}: {exc}")
    click.echo(json.dumps({"posts": rows}, indent=2))


@main.command()
@click.option("--attrs", default=4, show_default=True, type=int)
@click.option("--pop", "pop_size", default=100_000, show_default=True, type=int)
@click.option("--seed", default=1, show_default=True, type=int)
def simulate(attrs, pop_size, seed):
    """End-to-end oracle check on a random synthetic population."""
    gen = popsim.random_generator(attrs, seed)
    pop = popsim.sample_population(gen, pop_size, seed)
    ctx = popsim.scenario_context(pop, row=0)
    backend = popsim.make_oracle_backend(pop, gen)
    cfg = RunConfig(network_mode="fully_connected", query_history=False)
    try:
        result = pipeline.run(ctx, cfg, backend)
    except pipeline.PipelineError as exc:
        _fail(str(exc))
    truth = popsim.count_matching(pop, pop.assignment(0))
    ok = abs(result.raw_k - truth) < 0.5
    click.echo(json.dumps({
        "k_hat": result.k_hat, "raw_k": result.raw_k, "ground_truth": truth,
        "equation": result.equation, "exact": ok,
    }, indent=2))
    if not ok:
        _fail(f"estimate {result.raw_k} does not match enumerated count {truth}")


@main.command(name="validate")
@click.argument("dataset", type=click.Path(exists=True))
def validate_cmd(dataset):
    """Validate DATASET; nonzero exit when any post has issues."""
    posts = _load_dataset(dataset)
    all_issues = {}
    for post in posts:
        issues = datasetio.validate(post)
        if issues:
            all_issues[post.post_id] = issues
    click.echo(json.dumps({"posts": len(posts), "issues": all_issues}, indent=2))
    if all_issues:
        sys.exit(1)


@main.command()
@click.option("--port", default=8181, show_default=True, type=int)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--backend", "backend_kind", default="oracle", show_default=True,
              type=click.Choice(["live", "oracle", "scripted"]))
@click.option("--fixture-dir", default=None)
@click.option("--scenario", default=None)
@click.option("--journal", default=None, help="Append-only job journal file.")
@click.option("--workers", default=2, show_default=True, type=int)
@click.option("--ui", "ui_dir", default=None,
              help="Serve the built web client from this directory at /.")
def serve(port, host, backend_kind, fixture_dir, scenario, journal, workers, ui_dir):
    """Run the HTTP job service."""
    import uvicorn

    from .server import create_app

    try:
        app = create_app(
            backend_kind=backend_kind,
            fixture_dir=fixture_dir,
            scenario_path=scenario,
            journal_path=journal,
            workers=workers,
            ui_dir=ui_dir,
        )
    except (ValueError, OSError) as exc:
        _fail(str(exc))
    uvicorn.run(app, host=host, port=port, log_level="warning")


@main.command()
@click.argument("preds_a", type=click.Path(exists=True))
@click.argument("preds_b", type=click.Path(exists=True))
@click.option("--iters", default=100_000, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--a", "range_a", default=5.0, show_default=True, type=float)
@click.option("--dataset", default=None, type=click.Path(exists=True),
              help="Join gold k values from this dataset.")
def bootstrap(preds_a, preds_b, iters, seed, range_a, dataset):
    """Paired bootstrap comparing system A to system B on the range metric."""
    posts = {p.post_id: p for p in _load_dataset(dataset)} if dataset else None
    name_a, a = _load_predictions(preds_a)
    name_b, b = _load_predictions(preds_b)
    pairs_a = _pairs_from_predictions(a, posts)
    pairs_b = _pairs_from_predictions(b, posts)
    try:
        p = metrics.paired_bootstrap(
            pairs_a, pairs_b,
            metric=lambda pairs: metrics.range_metric(pairs, range_a),
            iterations=iters, seed=seed,
        )
    except metrics.MetricError as exc:
        _fail(str(exc))
    click.echo(json.dumps({
        "system_a": name_a, "system_b": name_b, "metric": f"range@{range_a:g}",
        "iterations": iters, "seed": seed, "p_value": p,
    }, indent=2))


if __name__ == "__main__":
    main()
