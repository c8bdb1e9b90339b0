from __future__ import annotations

import time
import uuid
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from defectlab.dataset import save_manifest, scan_directory
from defectlab.errors import NotFoundError
from defectlab.service import SessionManager, create_app

from synth import build_image_tree

TINY_CLASSIFIER = {"backbone": "tiny_cnn", "head_widths": [8, 4],
                   "l2_lambda": 0.001, "input_side": 32}

SESSION_CONFIG = {
    "query_size": 4,
    "max_queries": 3,
    "strategy": "uncertainty",
    "fine_tune_epochs": 1,
    "train_cfg": {"optimizer": "adam", "learning_rate": 0.003,
                  "batch_size": 4, "epochs": 1, "rng_seed": 2},
    "rng_seed": 7,
}


@pytest.fixture
def manifest_path(tmp_path) -> Path:
    root = tmp_path / "data"
    build_image_tree(root, {"train": 12, "validation": 8, "test": 4}, side=32,
                     seed=11)
    manifest = scan_directory(root)
    path = tmp_path / "manifest.csv"
    save_manifest(manifest, path)
    return path


@pytest.fixture
def store(tmp_path) -> Path:
    return tmp_path / "store"


def _wait_status(client, sid: str, statuses, timeout: float = 30.0) -> dict:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        summary = client.get(f"/api/v1/sessions/{sid}").json()
        if summary["status"] in statuses:
            return summary
        time.sleep(0.05)
    raise TimeoutError(f"session {sid} never reached {statuses}")


def _create(client, manifest_path, config=None) -> str:
    body = {
        "manifest_path": str(manifest_path),
        "config": config or SESSION_CONFIG,
        "classifier": TINY_CLASSIFIER,
        "model_seed": 1,
    }
    response = client.post("/api/v1/sessions", json=body)
    assert response.status_code == 201, response.text
    return response.json()["session_id"]


class TestSessionLifecycle:
    def test_empty_store_lists_nothing(self, store):
        with TestClient(create_app(store)) as client:
            assert client.get("/api/v1/sessions").json() == []

    def test_create_then_pending_batch(self, store, manifest_path):
        with TestClient(create_app(store)) as client:
            sid = _create(client, manifest_path)
            summary = _wait_status(client, sid, {"awaiting_labels"})
            assert summary["pool_remaining"] == 12
            assert summary["labeled_count"] == 0
            assert summary["class_names"] == ["defect", "ok"]

            pending = client.get(f"/api/v1/sessions/{sid}/pending").json()
            assert pending["status"] == "awaiting_labels"
            assert pending["iteration"] == 1
            assert len(pending["items"]) == 4
            item = pending["items"][0]
            assert set(item) == {"sample_id", "image_url", "score"}
            image = client.get(item["image_url"])
            assert image.status_code == 200
            assert image.headers["content-type"] == "image/png"

    def test_unknown_session_404(self, store):
        with TestClient(create_app(store)) as client:
            response = client.get("/api/v1/sessions/nope/pending")
            assert response.status_code == 404
            assert response.json()["error_code"] == "NotFoundError"

    def test_label_cycle_and_history(self, store, manifest_path):
        with TestClient(create_app(store)) as client:
            sid = _create(client, manifest_path)
            for iteration in range(1, 4):
                _wait_status(client, sid, {"awaiting_labels"})
                pending = client.get(f"/api/v1/sessions/{sid}/pending").json()
                labels = {item["sample_id"]: 1 for item in pending["items"]}
                response = client.post(
                    f"/api/v1/sessions/{sid}/labels",
                    json={"labels": labels, "idempotency_key": uuid.uuid4().hex},
                )
                assert response.status_code == 200
                assert response.json()["status"] == "training"
                _wait_status(client, sid, {"awaiting_labels", "exhausted"})
                history = client.get(f"/api/v1/sessions/{sid}/history").json()
                assert len(history) == iteration
                assert history[-1]["labeled_count"] == 4 * iteration
            summary = client.get(f"/api/v1/sessions/{sid}").json()
            assert summary["status"] == "exhausted"  # 3 queries x 4 = pool size

    def test_pending_empty_while_training(self, store, manifest_path):
        with TestClient(create_app(store)) as client:
            sid = _create(client, manifest_path)
            pending = client.get(f"/api/v1/sessions/{sid}/pending").json()
            if pending["status"] == "training":  # race: bg step may be done
                assert pending["items"] == []


class TestSubmission:
    def test_partial_body_422_lists_missing(self, store, manifest_path):
        with TestClient(create_app(store)) as client:
            sid = _create(client, manifest_path)
            _wait_status(client, sid, {"awaiting_labels"})
            pending = client.get(f"/api/v1/sessions/{sid}/pending").json()
            items = pending["items"]
            labels = {item["sample_id"]: 0 for item in items[:-1]}
            response = client.post(
                f"/api/v1/sessions/{sid}/labels",
                json={"labels": labels, "idempotency_key": "k1"},
            )
            assert response.status_code == 422
            body = response.json()
            assert body["error_code"] == "BatchMismatchError"
            assert body["details"]["missing"] == [items[-1]["sample_id"]]

    def test_idempotent_replay_no_double_apply(self, store, manifest_path):
        with TestClient(create_app(store)) as client:
            sid = _create(client, manifest_path)
            _wait_status(client, sid, {"awaiting_labels"})
            pending = client.get(f"/api/v1/sessions/{sid}/pending").json()
            labels = {item["sample_id"]: 0 for item in pending["items"]}
            key = "replay-key"
            first = client.post(f"/api/v1/sessions/{sid}/labels",
                                json={"labels": labels, "idempotency_key": key})
            assert first.status_code == 200
            replay = client.post(f"/api/v1/sessions/{sid}/labels",
                                 json={"labels": labels, "idempotency_key": key})
            assert replay.status_code == 200
            assert replay.json() == first.json()
            summary = _wait_status(client, sid, {"awaiting_labels"})
            assert summary["labeled_count"] == 4  # applied exactly once

    def test_concurrent_duplicate_submissions_apply_once(self, store,
                                                         manifest_path):
        from concurrent.futures import ThreadPoolExecutor

        with TestClient(create_app(store)) as client:
            sid = _create(client, manifest_path)
            _wait_status(client, sid, {"awaiting_labels"})
            pending = client.get(f"/api/v1/sessions/{sid}/pending").json()
            labels = {item["sample_id"]: 1 for item in pending["items"]}

            def submit(_):
                return client.post(
                    f"/api/v1/sessions/{sid}/labels",
                    json={"labels": labels, "idempotency_key": "same-key"},
                )

            with ThreadPoolExecutor(max_workers=4) as pool:
                responses = list(pool.map(submit, range(4)))
            assert all(r.status_code == 200 for r in responses)
            bodies = [r.json() for r in responses]
            assert all(b == bodies[0] for b in bodies)
            summary = _wait_status(client, sid, {"awaiting_labels"})
            assert summary["labeled_count"] == 4  # exactly one pool mutation

    def test_stale_resubmission_conflicts(self, store, manifest_path):
        with TestClient(create_app(store)) as client:
            sid = _create(client, manifest_path)
            _wait_status(client, sid, {"awaiting_labels"})
            pending = client.get(f"/api/v1/sessions/{sid}/pending").json()
            labels = {item["sample_id"]: 0 for item in pending["items"]}
            client.post(f"/api/v1/sessions/{sid}/labels",
                        json={"labels": labels, "idempotency_key": "a"})
            _wait_status(client, sid, {"awaiting_labels"})
            stale = client.post(f"/api/v1/sessions/{sid}/labels",
                                json={"labels": labels, "idempotency_key": "b"})
            assert stale.status_code in (409, 422)  # batch changed underneath


class TestStop:
    def test_stop_while_awaiting_is_immediate(self, store, manifest_path):
        with TestClient(create_app(store)) as client:
            sid = _create(client, manifest_path)
            _wait_status(client, sid, {"awaiting_labels"})
            summary = client.post(f"/api/v1/sessions/{sid}/stop").json()
            assert summary["status"] == "converged_stopped"
            assert summary["pending_count"] == 0
            assert summary["pool_remaining"] == 12  # batch returned to pool

    def test_double_stop_conflicts(self, store, manifest_path):
        with TestClient(create_app(store)) as client:
            sid = _create(client, manifest_path)
            _wait_status(client, sid, {"awaiting_labels"})
            client.post(f"/api/v1/sessions/{sid}/stop")
            second = client.post(f"/api/v1/sessions/{sid}/stop")
            assert second.status_code == 409


class TestPersistence:
    def test_restart_shows_same_pending_batch(self, store, manifest_path):
        with TestClient(create_app(store)) as client:
            sid = _create(client, manifest_path)
            _wait_status(client, sid, {"awaiting_labels"})
            before = client.get(f"/api/v1/sessions/{sid}/pending").json()

        with TestClient(create_app(store)) as client:
            after = client.get(f"/api/v1/sessions/{sid}/pending").json()
            assert after == before

    def test_restart_preserves_history(self, store, manifest_path):
        with TestClient(create_app(store)) as client:
            sid = _create(client, manifest_path)
            _wait_status(client, sid, {"awaiting_labels"})
            pending = client.get(f"/api/v1/sessions/{sid}/pending").json()
            labels = {item["sample_id"]: 1 for item in pending["items"]}
            client.post(f"/api/v1/sessions/{sid}/labels",
                        json={"labels": labels, "idempotency_key": "x"})
            _wait_status(client, sid, {"awaiting_labels"})
            history = client.get(f"/api/v1/sessions/{sid}/history").json()

        with TestClient(create_app(store)) as client:
            assert client.get(f"/api/v1/sessions/{sid}/history").json() == history


class TestImages:
    def test_unknown_sample_404(self, store):
        with TestClient(create_app(store)) as client:
            assert client.get("/images/girl/with/pearl.png").status_code == 404

    def test_escaping_ref_rejected(self, tmp_path):
        manager = SessionManager(tmp_path / "s")
        manager._image_index["evil"] = (tmp_path / "s", "../outside.png")
        (tmp_path / "outside.png").write_bytes(b"x")
        with pytest.raises(NotFoundError):
            manager.resolve_image("evil")


class TestAuth:
    def test_token_required_when_configured(self, store, manifest_path):
        with TestClient(create_app(store, token="hunter2")) as client:
            denied = client.get("/api/v1/sessions")
            assert denied.status_code == 401
            allowed = client.get("/api/v1/sessions",
                                 headers={"X-Auth-Token": "hunter2"})
            assert allowed.status_code == 200
