import json
import time

import pytest
from fastapi.testclient import TestClient

from privmeter import popsim
from privmeter.server import create_app

from conftest import FIXTURES

SCENARIO = FIXTURES / "oracle_scenario.json"


@pytest.fixture(scope="module")
def scenario():
    gen, size, seed, row = popsim.load_scenario(SCENARIO)
    pop = popsim.sample_population(gen, size, seed)
    ctx = popsim.scenario_context(pop, row=row)
    return gen, pop, ctx


@pytest.fixture()
def client(scenario):
    gen, pop, _ = scenario
    app = create_app(backend=popsim.make_oracle_backend(pop, gen))
    with TestClient(app) as c:
        yield c


def estimate_body(ctx, config=None):
    return {
        "document": {"id": ctx.document_id, "text": ctx.text, "community": ctx.community},
        "disclosures": [
            {"id": d.id, "span": d.span, "category": d.category.value} for d in ctx.disclosures
        ],
        "config": config or {"network_mode": "fully_connected"},
    }


def poll(client, job_id, timeout=30.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        doc = client.get(f"/api/jobs/{job_id}").json()
        if doc["state"] in ("done", "failed"):
            return doc
        time.sleep(0.05)
    raise TimeoutError(f"job {job_id} did not settle")


class TestHealth:
    def test_health(self, client):
        assert client.get("/api/health").json() == {"status": "ok"}


class TestEstimate:
    def test_valid_body_gets_job_id(self, client, scenario):
        _, _, ctx = scenario
        resp = client.post("/api/estimate", json=estimate_body(ctx))
        assert resp.status_code == 202
        assert "job_id" in resp.json()

    def test_missing_disclosures_is_400(self, client, scenario):
        _, _, ctx = scenario
        body = estimate_body(ctx)
        del body["disclosures"]
        assert client.post("/api/estimate", json=body).status_code == 400

    def test_unknown_config_field_is_400(self, client, scenario):
        _, _, ctx = scenario
        body = estimate_body(ctx, config={"bogus": 1})
        assert client.post("/api/estimate", json=body).status_code == 400

    def test_queue_full_is_503(self, scenario):
        gen, pop, ctx = scenario
        app = create_app(backend=popsim.make_oracle_backend(pop, gen), max_queue=0)
        with TestClient(app) as c:
            resp = c.post("/api/estimate", json=estimate_body(ctx))
            assert resp.status_code == 503

    def test_job_completes_with_exact_oracle_k(self, client, scenario):
        _, pop, ctx = scenario
        resp = client.post("/api/estimate", json=estimate_body(ctx))
        doc = poll(client, resp.json()["job_id"])
        assert doc["state"] == "done"
        truth = popsim.count_matching(pop, pop.assignment(0))
        assert doc["result"]["k_hat"] == truth
        assert doc["result"]["equation"]
        assert doc["stages"], "stage transcript should be exposed"


class TestJobs:
    def test_unknown_job_is_404(self, client):
        assert client.get("/api/jobs/nope").status_code == 404

    def test_states_never_regress(self, client, scenario):
        _, _, ctx = scenario
        job_id = client.post("/api/estimate", json=estimate_body(ctx)).json()["job_id"]
        rank = {"queued": 0, "running": 1, "done": 2, "failed": 2}
        last = 0
        for _ in range(50):
            state = client.get(f"/api/jobs/{job_id}").json()["state"]
            assert rank[state] >= last
            last = rank[state]
            if rank[state] == 2:
                break
            time.sleep(0.02)


class TestWhatIf:
    def test_dropping_a_disclosure(self, client, scenario):
        _, pop, ctx = scenario
        job_id = client.post("/api/estimate", json=estimate_body(ctx)).json()["job_id"]
        done = poll(client, job_id)
        assert done["state"] == "done"
        keep = [d.id for d in ctx.disclosures[:-1]]
        resp = client.post("/api/whatif", json={"job_id": job_id, "include": keep})
        assert resp.status_code == 202
        follow = poll(client, resp.json()["job_id"])
        assert follow["state"] == "done"
        assert follow["parent_job_id"] == job_id
        assert set(follow["result"]["order"]) == set(keep)
        truth = popsim.count_matching(pop, {k: pop.assignment(0)[k] for k in keep})
        assert follow["result"]["k_hat"] == truth

    def test_unknown_parent_is_404(self, client):
        resp = client.post("/api/whatif", json={"job_id": "nope", "include": ["a"]})
        assert resp.status_code == 404

    def test_empty_subset_is_400(self, client, scenario):
        _, _, ctx = scenario
        job_id = client.post("/api/estimate", json=estimate_body(ctx)).json()["job_id"]
        poll(client, job_id)
        resp = client.post("/api/whatif", json={"job_id": job_id, "include": []})
        assert resp.status_code == 400


class TestJournal:
    def test_done_jobs_survive_restart(self, scenario, tmp_path):
        gen, pop, ctx = scenario
        journal = tmp_path / "journal.jsonl"
        app = create_app(backend=popsim.make_oracle_backend(pop, gen), journal_path=str(journal))
        with TestClient(app) as c:
            job_id = c.post("/api/estimate", json=estimate_body(ctx)).json()["job_id"]
            done = poll(c, job_id)
        app2 = create_app(backend=popsim.make_oracle_backend(pop, gen), journal_path=str(journal))
        with TestClient(app2) as c2:
            doc = c2.get(f"/api/jobs/{job_id}").json()
            assert doc["state"] == "done"
            assert doc["result"]["k_hat"] == done["result"]["k_hat"]
