import base64
import json
import threading

import numpy as np
import pytest
from fastapi.testclient import TestClient

from blockcascade import CascadeConfig, with_fields
from blockcascade.gateway import (SessionManager, create_app,
                                  events_from_trace)


@pytest.fixture(scope="module")
def service_config():
    return CascadeConfig(total_frames=39, workers=2, pass_cost_base=1.0)


@pytest.fixture()
def client():
    return TestClient(create_app())


def sse_lines(response_iter):
    for raw in response_iter:
        if raw.startswith("data: "):
            yield json.loads(raw[len("data: "):])


class TestProjection:
    def test_live_stream_equals_trace_replay(self, service_config):
        manager = SessionManager()
        session = manager.create(service_config, "a red cube", start=False)
        collected = []
        collector = threading.Thread(
            target=lambda: collected.extend(session.log.subscribe()))
        collector.start()
        session.thread.start()
        session.thread.join()
        collector.join()
        replay = events_from_trace(session.result.trace, service_config,
                                   session.result.outputs)
        assert collected == replay

    def test_block_event_payload(self, service_config):
        manager = SessionManager()
        session = manager.create(service_config, "a red cube", start=False)
        session.thread.start()
        session.thread.join()
        lines = events_from_trace(session.result.trace, service_config,
                                  session.result.outputs)
        blocks = [json.loads(l) for l in lines if json.loads(l)["type"] == "block"]
        assert len(blocks) == 13
        assert [b["index"] for b in blocks] == list(range(13))
        first = blocks[0]
        assert first["video_frames"] == 12
        pixels = np.frombuffer(base64.b64decode(first["pixels"]["data"]),
                               dtype="<f4").reshape(first["pixels"]["shape"])
        assert pixels.shape == (12, 16)
        assert first["fps"] > 0

    def test_metrics_events_before_first_block(self, service_config):
        manager = SessionManager()
        session = manager.create(service_config, "p", start=False)
        session.thread.start()
        session.thread.join()
        lines = [json.loads(l) for l in events_from_trace(
            session.result.trace, service_config, session.result.outputs)]
        first_block = next(i for i, d in enumerate(lines) if d["type"] == "block")
        metrics_before = [d for d in lines[:first_block] if d["type"] == "metrics"]
        # the first emission closes the fill phase: one metrics event per
        # earlier iteration plus the emitting iteration's own
        assert len(metrics_before) == service_config.passes - 1

    def test_seq_strictly_increasing(self, service_config):
        manager = SessionManager()
        session = manager.create(service_config, "p", start=False)
        session.thread.start()
        session.thread.join()
        lines = [json.loads(l) for l in events_from_trace(
            session.result.trace, service_config, session.result.outputs)]
        seqs = [d["seq"] for d in lines]
        assert seqs == list(range(len(lines)))
        done = lines[-1]
        assert done["type"] == "done"
        assert done["blocks"] == 13


class TestEndpoints:
    def test_create_and_stream(self, client):
        resp = client.post("/sessions", json={
            "prompt": "a red cube",
            "config": {"total_frames": 15, "workers": 1},
        })
        assert resp.status_code == 201
        sid = resp.json()["id"]
        events = []
        with client.stream("GET", f"/sessions/{sid}/events") as stream:
            for doc in sse_lines(stream.iter_lines()):
                events.append(doc)
                if doc["type"] == "done":
                    break
        blocks = [e for e in events if e["type"] == "block"]
        assert [b["index"] for b in blocks] == list(range(5))
        status = client.get(f"/sessions/{sid}").json()
        assert status["status"] == "done"
        assert status["blocks_emitted"] == 5

    def test_invalid_config_rejected_with_fields(self, client):
        resp = client.post("/sessions", json={
            "prompt": "x",
            "config": {"window_blocks": 2, "offset": 1},
        })
        assert resp.status_code == 400
        detail = resp.json()["detail"]
        assert "offset" in detail["fields"]

    def test_duplicate_creates_distinct_ids(self, client):
        body = {"prompt": "x", "config": {"total_frames": 3}}
        a = client.post("/sessions", json=body).json()["id"]
        b = client.post("/sessions", json=body).json()["id"]
        assert a != b

    def test_unknown_session_404(self, client):
        assert client.get("/sessions/nope").status_code == 404
        assert client.post("/sessions/nope/prompt",
                           json={"prompt": "x"}).status_code == 404

    def test_switch_after_done_conflicts(self, client):
        resp = client.post("/sessions", json={
            "prompt": "x", "config": {"total_frames": 3}})
        sid = resp.json()["id"]
        # wait for completion
        for _ in range(100):
            if client.get(f"/sessions/{sid}").json()["status"] == "done":
                break
        resp = client.post(f"/sessions/{sid}/prompt",
                           json={"prompt": "y", "mode": "cascade"})
        assert resp.status_code == 409

    def test_live_switch_ack_carries_boundary(self, client):
        resp = client.post("/sessions", json={
            "prompt": "first",
            "config": {"total_frames": 39, "workers": 1},
            "pace_seconds": 0.01,
        })
        sid = resp.json()["id"]
        ack = client.post(f"/sessions/{sid}/prompt",
                          json={"prompt": "second", "mode": "cascade"})
        assert ack.status_code == 200
        doc = ack.json()
        assert doc["extra_passes"] == 0
        assert doc["mode"] == "cascade"
        assert 0 <= doc["boundary_block"] < 13


class TestSubscribers:
    def test_two_subscribers_identical(self, service_config):
        manager = SessionManager()
        session = manager.create(with_fields(service_config, total_frames=15),
                                 "p", start=False)
        seen_a, seen_b = [], []
        ta = threading.Thread(target=lambda: seen_a.extend(session.log.subscribe()))
        tb = threading.Thread(target=lambda: seen_b.extend(session.log.subscribe()))
        ta.start()
        tb.start()
        session.thread.start()
        session.thread.join()
        ta.join()
        tb.join()
        assert seen_a == seen_b

    def test_late_subscriber_gets_block_replay(self, service_config):
        manager = SessionManager()
        session = manager.create(with_fields(service_config, total_frames=15), "p")
        session.thread.join()
        lines = list(session.log.subscribe())
        docs = [json.loads(l) for l in lines]
        blocks = [d["index"] for d in docs if d["type"] == "block"]
        assert blocks == list(range(5))
        # tail-only metrics are gone for late joiners; block replay is complete
        assert all(d["type"] == "block" for d in docs)

    def test_mid_run_subscriber_replays_then_tails(self, service_config):
        import time

        manager = SessionManager()
        session = manager.create(service_config, "p", pace_seconds=0.01)
        while session.blocks_emitted < 5:
            time.sleep(0.005)
        docs = [json.loads(l) for l in session.log.subscribe()]
        session.thread.join()
        blocks = [d["index"] for d in docs if d["type"] == "block"]
        # replay covers everything emitted before the join, the tail the rest;
        # no duplicates, no gaps
        assert blocks == list(range(13))
        assert docs[-1]["type"] == "done"
        # the replayed head is block events only
        assert docs[0]["type"] == "block"
