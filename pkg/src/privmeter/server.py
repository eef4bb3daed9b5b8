"""HTTP job service: submit a document, poll for the estimate, run what-ifs.

Jobs run on a small worker pool; clients poll GET /api/jobs/{id} at their own
pace (runs take seconds to minutes, so 1 Hz polling is plenty). The store is
in memory with an optional append-only journal for restart recovery. Which
backend answers the prompts (live HTTP, population oracle, or scripted
fixtures) is server configuration, so tests and the UI share endpoints.

Nothing a user submits is persisted beyond the optional journal: this service
analyzes sensitive text.
"""

from __future__ import annotations

import json
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import datasetio, pipeline, popsim
from .core import (
    Disclosure,
    DisclosureCategory,
    DocumentContext,
    RunConfig,
)
from .llm.backend import HttpChatBackend, ScriptedBackend

__all__ = ["JobStore", "Job", "create_app"]

_CONFIG_FIELDS = {
    "strategy",
    "temperature",
    "demonstrations",
    "simplification",
    "confidence_threshold",
    "max_simplify_iterations",
    "query_history",
    "discrete_subqueries",
    "network_mode",
    "default_population",
    "retry_limit",
}

_STATE_RANK = {"queued": 0, "running": 1, "done": 2, "failed": 2}


@dataclass
class Job:
    job_id: str
    state: str = "queued"
    request: Dict[str, Any] = field(default_factory=dict)
    result: Optional[dict] = None
    error: Optional[str] = None
    stages: List[dict] = field(default_factory=list)
    parent_job_id: Optional[str] = None

    def snapshot(self) -> dict:
        doc = {
            "job_id": self.job_id,
            "state": self.state,
            "stages": list(self.stages),
            "result": self.result,
            "error": self.error,
        }
        if self.parent_job_id:
            doc["parent_job_id"] = self.parent_job_id
        return doc


class JobStore:
    """Linearizable per-job store: states only move forward."""

    def __init__(self, journal_path: Optional[str] = None):
        self._jobs: Dict[str, Job] = {}
        self._lock = threading.Lock()
        self._journal_path = journal_path
        if journal_path:
            self._replay(journal_path)

    def _replay(self, path: str):
        try:
            with open(path, "r", encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    doc = json.loads(line)
                    job = self._jobs.setdefault(doc["job_id"], Job(job_id=doc["job_id"]))
                    self._apply(job, doc)
        except FileNotFoundError:
            pass

    @staticmethod
    def _apply(job: Job, doc: dict):
        if _STATE_RANK.get(doc.get("state", ""), -1) >= _STATE_RANK[job.state]:
            job.state = doc.get("state", job.state)
        job.result = doc.get("result", job.result)
        job.error = doc.get("error", job.error)
        job.request = doc.get("request", job.request)
        job.parent_job_id = doc.get("parent_job_id", job.parent_job_id)

    def _journal(self, job: Job):
        if not self._journal_path:
            return
        entry = {
            "job_id": job.job_id,
            "state": job.state,
            "result": job.result,
            "error": job.error,
            "request": job.request,
            "parent_job_id": job.parent_job_id,
        }
        with open(self._journal_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry) + "\n")

    def create(self, request: Dict[str, Any], parent_job_id: Optional[str] = None) -> Job:
        job = Job(job_id=uuid.uuid4().hex[:12], request=request, parent_job_id=parent_job_id)
        with self._lock:
            self._jobs[job.job_id] = job
            self._journal(job)
        return job

    def get(self, job_id: str) -> Optional[Job]:
        with self._lock:
            return self._jobs.get(job_id)

    def transition(self, job_id: str, state: str, **updates):
        with self._lock:
            job = self._jobs[job_id]
            if _STATE_RANK[state] < _STATE_RANK[job.state]:
                return  # never regress
            job.state = state
            for key, value in updates.items():
                setattr(job, key, value)
            self._journal(job)

    def add_stage(self, job_id: str, stage: dict):
        with self._lock:
            self._jobs[job_id].stages.append(stage)

    def count_active(self) -> int:
        with self._lock:
            return sum(1 for j in self._jobs.values() if j.state in ("queued", "running"))


def _parse_request(body: dict):
    """Validate an estimate request; raises ValueError with a reason."""
    if not isinstance(body, dict):
        raise ValueError("body must be a JSON object")
    document = body.get("document")
    if not isinstance(document, dict):
        raise ValueError("missing or invalid 'document'")
    text = document.get("text")
    if not isinstance(text, str) or not text:
        raise ValueError("document.text must be a non-empty string")
    raw_disclosures = body.get("disclosures")
    if not isinstance(raw_disclosures, list) or not raw_disclosures:
        raise ValueError("missing or empty 'disclosures'")
    disclosures = []
    for i, doc in enumerate(raw_disclosures):
        if not isinstance(doc, dict):
            raise ValueError(f"disclosures[{i}] must be an object")
        try:
            disclosures.append(
                Disclosure(
                    id=str(doc["id"]),
                    span=str(doc["span"]),
                    category=DisclosureCategory.from_label(str(doc["category"])),
                )
            )
        except (KeyError, ValueError) as exc:
            raise ValueError(f"disclosures[{i}]: {exc}")
    raw_config = body.get("config") or {}
    if not isinstance(raw_config, dict):
        raise ValueError("'config' must be an object")
    unknown = set(raw_config) - _CONFIG_FIELDS
    if unknown:
        raise ValueError(f"unknown config fields: {sorted(unknown)}")
    try:
        cfg = RunConfig(**raw_config)
        ctx = DocumentContext(
            document_id=str(document.get("id", "doc")),
            text=text,
            disclosures=tuple(disclosures),
            community=document.get("community"),
        )
    except (TypeError, ValueError) as exc:
        raise ValueError(str(exc))
    return ctx, cfg


def _make_backend(backend_kind: str, fixture_dir: Optional[str], scenario_path: Optional[str]):
    if backend_kind == "live":
        return HttpChatBackend()
    if backend_kind == "scripted":
        if not fixture_dir:
            raise ValueError("scripted backend needs --fixture-dir")
        import os

        path = os.path.join(fixture_dir, "scripted_backend.json")
        return ScriptedBackend.from_file(path)
    if backend_kind == "oracle":
        if not scenario_path:
            raise ValueError("oracle backend needs a scenario file")
        gen, size, seed, _row = popsim.load_scenario(scenario_path)
        pop = popsim.sample_population(gen, size, seed)
        return popsim.make_oracle_backend(pop, gen)
    raise ValueError(f"unknown backend kind {backend_kind!r}")


def create_app(
    backend=None,
    backend_kind: str = "oracle",
    fixture_dir: Optional[str] = None,
    scenario_path: Optional[str] = None,
    max_queue: int = 64,
    workers: int = 2,
    journal_path: Optional[str] = None,
    ui_dir: Optional[str] = None,
) -> FastAPI:
    app = FastAPI(title="privmeter")
    store = JobStore(journal_path=journal_path)
    pool = ThreadPoolExecutor(max_workers=workers)
    if backend is None:
        backend = _make_backend(backend_kind, fixture_dir, scenario_path)
    app.state.store = store
    app.state.backend = backend
    if ui_dir:
        _mount_ui(app, ui_dir)

    def execute(job: Job, ctx: DocumentContext, cfg: RunConfig):
        store.transition(job.job_id, "running")
        try:
            if cfg.strategy == "branch":
                result = pipeline.run(ctx, cfg, backend)
            else:
                result = pipeline.run_baseline(ctx, cfg, backend)
            for entry in result.transcript:
                store.add_stage(
                    job.job_id, {"stage": entry.stage, "retries": entry.retries}
                )
            store.transition(job.job_id, "done", result=datasetio.result_to_json(result))
        except pipeline.PipelineError as exc:
            for entry in exc.transcript:
                store.add_stage(
                    job.job_id, {"stage": entry.stage, "retries": entry.retries}
                )
            store.transition(job.job_id, "failed", error=str(exc))
        except Exception as exc:  # surface anything unexpected on the job
            store.transition(job.job_id, "failed", error=f"internal error: {exc}")

    def submit(body: dict, parent_job_id: Optional[str] = None):
        ctx, cfg = _parse_request(body)
        if store.count_active() >= max_queue:
            return None
        job = store.create(request=body, parent_job_id=parent_job_id)
        pool.submit(execute, job, ctx, cfg)
        return job

    @app.get("/api/health")
    def health():
        return {"status": "ok"}

    @app.post("/api/estimate")
    async def estimate(request: Request):
        try:
            body = await request.json()
        except Exception:
            return JSONResponse({"error": "body must be JSON"}, status_code=400)
        try:
            job = submit(body)
        except ValueError as exc:
            return JSONResponse({"error": str(exc)}, status_code=400)
        if job is None:
            return JSONResponse({"error": "queue full"}, status_code=503)
        return JSONResponse({"job_id": job.job_id}, status_code=202)

    @app.get("/api/jobs/{job_id}")
    def get_job(job_id: str):
        job = store.get(job_id)
        if job is None:
            return JSONResponse({"error": "unknown job id"}, status_code=404)
        return job.snapshot()

    @app.post("/api/whatif")
    async def whatif(request: Request):
        try:
            body = await request.json()
        except Exception:
            return JSONResponse({"error": "body must be JSON"}, status_code=400)
        job_id = body.get("job_id")
        include = body.get("include")
        parent = store.get(job_id) if isinstance(job_id, str) else None
        if parent is None:
            return JSONResponse({"error": "unknown job id"}, status_code=404)
        if parent.state != "done":
            return JSONResponse({"error": "referenced job is not done"}, status_code=400)
        if not isinstance(include, list) or not include:
            return JSONResponse({"error": "'include' must be a non-empty list"}, status_code=400)
        include_set = {str(i) for i in include}
        original = parent.request
        kept = [d for d in original.get("disclosures", []) if str(d.get("id")) in include_set]
        if not kept:
            return JSONResponse({"error": "no known disclosure ids in 'include'"}, status_code=400)
        new_body = dict(original)
        new_body["disclosures"] = kept
        try:
            job = submit(new_body, parent_job_id=parent.job_id)
        except ValueError as exc:
            return JSONResponse({"error": str(exc)}, status_code=400)
        if job is None:
            return JSONResponse({"error": "queue full"}, status_code=503)
        return JSONResponse({"job_id": job.job_id}, status_code=202)

    return app


def _mount_ui(app: FastAPI, ui_dir: str):
    """Serve the built web client (index.html plus dist/) if present."""
    import os

    from fastapi.responses import FileResponse
    from fastapi.staticfiles import StaticFiles

    index = os.path.join(ui_dir, "index.html")
    dist = os.path.join(ui_dir, "dist")
    if not os.path.isfile(index):
        raise ValueError(f"no index.html under {ui_dir!r} (build the frontend first)")

    @app.get("/")
    def root():
        return FileResponse(index)

    if os.path.isdir(dist):
        app.mount("/dist", StaticFiles(directory=dist), name="dist")
