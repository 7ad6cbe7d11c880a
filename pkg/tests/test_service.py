import threading

import numpy as np
import pytest
from fastapi.testclient import TestClient

from fontid.config import load_config
from fontid.ingest import CLASSES
from fontid.service import build_service, synthetic_service_dataset


@pytest.fixture
def cfg(tmp_path):
    cfg = load_config(None)
    cfg.state_dir = str(tmp_path / "state")
    cfg.harness_max_iter = 60  # keep retrains fast in tests
    cfg.seed = 7
    return cfg


@pytest.fixture
def client(cfg):
    app = build_service(cfg)
    with TestClient(app) as c:
        yield c


def create_session(client, **body):
    r = client.post("/sessions", json=body or {"strategy": "S5"})
    assert r.status_code == 200
    return r.json()["session_id"]


def label_full_batch(client, sid, label="Roman"):
    batch = client.get(f"/sessions/{sid}/batch").json()
    assert batch["status"] == "pending"
    subs = [{"page_id": p["page_id"], "label": label} for p in batch["pages"]]
    r = client.post(f"/sessions/{sid}/labels", json={"labels": subs})
    assert r.status_code == 200
    return batch, r.json()


class TestSessions:
    def test_create_returns_seed_counts(self, client):
        r = client.post("/sessions", json={"strategy": "S1", "seed": 3})
        body = r.json()
        assert body["labeled_count"] == 3  # one seed label per class
        assert body["pool_size"] == 60

    def test_unknown_session_404(self, client):
        r = client.get("/sessions/nope/metrics")
        assert r.status_code == 404
        assert r.json()["error"]["code"] == "not_found"

    def test_bad_strategy_rejected(self, client):
        r = client.post("/sessions", json={"strategy": "S9"})
        assert r.status_code == 400
        assert "error" in r.json()


class TestBatch:
    def test_fresh_session_batch_of_20(self, client):
        sid = create_session(client)
        batch = client.get(f"/sessions/{sid}/batch").json()
        assert batch["status"] == "pending"
        assert len(batch["pages"]) == 20
        page = batch["pages"][0]
        assert {"uncertainty", "dissimilarity", "diversity", "total"} <= set(page["scores"])
        assert page["thumbnail_url"].endswith("/thumbnail")

    def test_idempotent_until_labels(self, client):
        sid = create_session(client)
        a = client.get(f"/sessions/{sid}/batch").json()
        b = client.get(f"/sessions/{sid}/batch").json()
        assert [p["page_id"] for p in a["pages"]] == [p["page_id"] for p in b["pages"]]

    def test_small_remaining_pool(self, client):
        sid = create_session(client, strategy="S2", batch_size=25)
        label_full_batch(client, sid)
        label_full_batch(client, sid)
        batch = client.get(f"/sessions/{sid}/batch").json()
        assert len(batch["pages"]) == 10  # 60 - 2*25

    def test_pool_exhausted_status(self, client):
        sid = create_session(client)
        for _ in range(3):
            label_full_batch(client, sid)
        final = client.get(f"/sessions/{sid}/batch").json()
        assert final["status"] == "pool_exhausted"
        assert final["labeled_count"] == 63


class TestSubmitLabels:
    def test_full_round(self, client):
        sid = create_session(client)
        _, summary = label_full_batch(client, sid)
        assert summary["status"] == "round_completed"
        assert summary["round"] == 1
        assert summary["labeled_count"] == 23
        assert summary["accuracy"] is not None

    def test_partial_accumulates(self, client):
        sid = create_session(client)
        batch = client.get(f"/sessions/{sid}/batch").json()
        half = [{"page_id": p["page_id"], "label": "Mixed"} for p in batch["pages"][:10]]
        r = client.post(f"/sessions/{sid}/labels", json={"labels": half}).json()
        assert r["status"] == "partial"
        assert len(r["awaiting"]) == 10
        metrics = client.get(f"/sessions/{sid}/metrics").json()
        assert len(metrics["curve"]) == 1  # no retrain yet

    def test_unknown_page_rejected_others_kept(self, client):
        sid = create_session(client)
        batch = client.get(f"/sessions/{sid}/batch").json()
        subs = [
            {"page_id": "bogus", "label": "Roman"},
            {"page_id": batch["pages"][0]["page_id"], "label": "Roman"},
        ]
        r = client.post(f"/sessions/{sid}/labels", json={"labels": subs}).json()
        assert r["rejected"] == [{"page_id": "bogus", "reason": "not_pending"}]
        assert r["accepted"] == [batch["pages"][0]["page_id"]]

    def test_duplicate_last_write_wins(self, client):
        sid = create_session(client)
        batch = client.get(f"/sessions/{sid}/batch").json()
        pid = batch["pages"][0]["page_id"]
        client.post(f"/sessions/{sid}/labels", json={"labels": [{"page_id": pid, "label": "Roman"}]})
        r = client.post(
            f"/sessions/{sid}/labels", json={"labels": [{"page_id": pid, "label": "Mixed"}]}
        ).json()
        assert r["echo"][pid] == "Mixed"

    def test_labels_echo_what_was_sent(self, client, rng):
        sid = create_session(client)
        batch = client.get(f"/sessions/{sid}/batch").json()
        assignment = {
            p["page_id"]: CLASSES[int(rng.integers(3))] for p in batch["pages"]
        }
        subs = [{"page_id": k, "label": v} for k, v in assignment.items()]
        r = client.post(f"/sessions/{sid}/labels", json={"labels": subs}).json()
        assert r["status"] == "round_completed"
        assert r["echo"] == assignment

    def test_resubmission_is_safe(self, client):
        sid = create_session(client)
        batch, _ = label_full_batch(client, sid)
        # client did not see the response and resubmits the same payload
        subs = [{"page_id": p["page_id"], "label": "Roman"} for p in batch["pages"]]
        r = client.post(f"/sessions/{sid}/labels", json={"labels": subs}).json()
        assert all(item["reason"] == "not_pending" for item in r["rejected"])
        metrics = client.get(f"/sessions/{sid}/metrics").json()
        assert metrics["labeled_count"] == 23  # no duplicates


class TestMetrics:
    def test_fresh_session_single_point(self, client):
        sid = create_session(client)
        m = client.get(f"/sessions/{sid}/metrics").json()
        assert len(m["curve"]) == 1
        assert m["curve"][0]["labeled_count"] == 3

    def test_two_rounds_three_points(self, client):
        sid = create_session(client)
        label_full_batch(client, sid)
        label_full_batch(client, sid, label="Blackletter")
        m = client.get(f"/sessions/{sid}/metrics").json()
        assert len(m["curve"]) == 3
        assert [p["labeled_count"] for p in m["curve"]] == [3, 23, 43]
        assert [p["round"] for p in m["curve"]] == [0, 1, 2]

    def test_concurrent_reads_never_torn(self, cfg):
        app = build_service(cfg)
        with TestClient(app) as client:
            sid = create_session(client)
            errors = []

            def reader():
                for _ in range(40):
                    m = client.get(f"/sessions/{sid}/metrics").json()
                    counts = [p["labeled_count"] for p in m["curve"]]
                    if counts != sorted(counts) or len(set(counts)) != len(counts):
                        errors.append(counts)

            threads = [threading.Thread(target=reader) for _ in range(4)]
            for t in threads:
                t.start()
            for _ in range(2):
                label_full_batch(client, sid)
            for t in threads:
                t.join()
            assert errors == []


class TestThumbnails:
    def test_png_served_and_cached(self, client):
        a = client.get("/pages/page-0000/thumbnail")
        assert a.status_code == 200
        assert a.headers["content-type"] == "image/png"
        b = client.get("/pages/page-0000/thumbnail")
        assert a.content == b.content

    def test_unknown_page_404(self, client):
        assert client.get("/pages/never/thumbnail").status_code == 404


class TestEventLog:
    def test_events_appended(self, cfg, tmp_path):
        app = build_service(cfg)
        with TestClient(app) as client:
            sid = create_session(client)
            label_full_batch(client, sid)
        import json
        from pathlib import Path

        log_file = Path(cfg.state_dir) / f"session-{sid}.jsonl"
        events = [json.loads(line) for line in log_file.read_text().splitlines()]
        kinds = [e["event"] for e in events]
        assert kinds[0] == "session_created"
        assert "batch_selected" in kinds
        assert "label_submitted" in kinds
        assert kinds.count("round_completed") == 2  # seed round + one batch


class TestDataset:
    def test_synthetic_dataset_shape(self, cfg):
        ds = synthetic_service_dataset(cfg)
        assert len(ds.page_ids) == 63
        assert ds.bofs.shape == (63, 20)
        assert len(ds.seed_labels) == 3
        assert set(ds.seed_labels.values()) == set(CLASSES)
        assert ds.eval_bofs.shape[0] == 36
