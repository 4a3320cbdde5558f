from __future__ import annotations

import json
import random

import httpx
import pytest

from crashground.mock_vlm import (
    GARBAGE_TEXT,
    Behavior,
    MockVLMServer,
    ScriptEntry,
    failure_draw,
    forced_failure_ids,
    load_script,
    record_fixture,
    write_script,
)
from crashground.types import CrashGroundError, InvalidInputError, PassKind


def post(server, vid, kind, text="hi"):
    body = {"model": "m", "messages": [{"role": "user", "content": [{"type": "text", "text": text}]}]}
    return httpx.post(server.url, json=body, headers={"X-Video-Id": vid, "X-Pass-Kind": kind}, timeout=5)


class TestScript:
    def test_round_trip(self, tmp_path):
        entries = [ScriptEntry("a", PassKind.COARSE, '{"time": 1}'),
                   ScriptEntry("a", PassKind.FINE, "x", sequence=(Behavior.HTTP500, Behavior.OK)),
                   ScriptEntry("b", PassKind.TYPE, behavior=Behavior.GARBAGE)]
        path = tmp_path / "s.jsonl"
        write_script(path, entries)
        loaded = load_script(path)
        assert list(loaded.values()) == entries

    def test_duplicate_key(self, tmp_path):
        path = tmp_path / "s.jsonl"
        line = json.dumps({"video_id": "a", "pass": "coarse", "response": "x"})
        path.write_text(line + "\n" + line + "\n")
        with pytest.raises(InvalidInputError, match="duplicate"):
            load_script(path)

    @pytest.mark.parametrize("line", [
        {"video_id": "a", "pass": "coarse", "sequence": []},
        {"video_id": "a", "pass": "sideways"},
        {"video_id": "a", "pass": "coarse", "behavior": "explode"},
        {"pass": "coarse"},
    ])
    def test_bad_entries(self, tmp_path, line):
        path = tmp_path / "s.jsonl"
        path.write_text(json.dumps(line) + "\n")
        with pytest.raises(InvalidInputError):
            load_script(path)

    def test_sequence_last_element_repeats(self):
        e = ScriptEntry("a", PassKind.FINE, sequence=(Behavior.HTTP500, Behavior.OK))
        assert [e.behavior_at(i) for i in range(4)] == [Behavior.HTTP500, Behavior.OK, Behavior.OK, Behavior.OK]


class TestForcedFailures:
    def test_subset_depends_only_on_seed_and_id(self):
        ids = [f"v{i:03d}" for i in range(100)]
        a = forced_failure_ids(ids, 0.17, 42)
        shuffled = ids[:]
        random.Random(3).shuffle(shuffled)
        assert forced_failure_ids(shuffled, 0.17, 42) == a
        assert 5 <= len(a) <= 35
        assert forced_failure_ids(ids, 0.17, 43) != a

    def test_draw_in_unit_interval(self):
        assert all(0 <= failure_draw(s, f"v{i}") < 1 for s in range(3) for i in range(50))

    def test_extremes(self):
        ids = [str(i) for i in range(50)]
        assert forced_failure_ids(ids, 0.0, 1) == set()
        assert forced_failure_ids(ids, 1.0, 1) == set(ids)

    def test_rate_validated(self):
        with pytest.raises(InvalidInputError):
            MockVLMServer({}, failure_rate=1.5)

    def test_server_forces_500_on_coarse_only(self):
        srv = MockVLMServer({}, failure_rate=1.0, seed=1)
        try:
            assert srv.respond("v", "coarse", {})[0] is Behavior.HTTP500
            assert srv.respond("v", "fine", {})[0] is Behavior.OK
        finally:
            srv.stop()


class TestServer:
    def test_scripted_ok(self):
        with MockVLMServer({("a", PassKind.COARSE): ScriptEntry("a", PassKind.COARSE, "scripted")}) as srv:
            r = post(srv, "a", "coarse")
        assert r.status_code == 200
        assert r.json()["choices"][0]["message"]["content"] == "scripted"

    def test_unscripted_echo(self):
        with MockVLMServer({}) as srv:
            r = post(srv, "zzz", "fine", text="the prompt")
        assert r.json()["choices"][0]["message"]["content"] == "echo: the prompt"

    def test_error_behaviors(self):
        script = {("a", PassKind.FINE): ScriptEntry("a", PassKind.FINE, behavior=Behavior.HTTP429),
                  ("b", PassKind.FINE): ScriptEntry("b", PassKind.FINE, "x", behavior=Behavior.GARBAGE)}
        with MockVLMServer(script) as srv:
            assert post(srv, "a", "fine").status_code == 429
            g = post(srv, "b", "fine")
        assert g.status_code == 200 and g.json()["choices"][0]["message"]["content"] == GARBAGE_TEXT

    def test_timeout_holds_past_client_timeout(self):
        script = {("a", PassKind.FINE): ScriptEntry("a", PassKind.FINE, behavior=Behavior.TIMEOUT)}
        with MockVLMServer(script, hold_seconds=2.0) as srv:
            with pytest.raises(httpx.TimeoutException):
                httpx.post(srv.url, json={}, headers={"X-Video-Id": "a", "X-Pass-Kind": "fine"}, timeout=0.2)

    def test_non_json_body(self):
        with MockVLMServer({}) as srv:
            assert httpx.post(srv.url, content=b"{nope", timeout=5).status_code == 400

    def test_port_busy(self):
        with MockVLMServer({}) as first:
            with pytest.raises(CrashGroundError):
                MockVLMServer({}, port=first.port)

    def test_response_keyed_by_content_not_order(self):
        script = {(f"v{i}", PassKind.COARSE): ScriptEntry(f"v{i}", PassKind.COARSE, f"r{i}") for i in range(6)}
        with MockVLMServer(script) as srv:
            fwd = {i: post(srv, f"v{i}", "coarse").json()["choices"][0]["message"]["content"] for i in range(6)}
        with MockVLMServer(script) as srv:
            rev = {i: post(srv, f"v{i}", "coarse").json()["choices"][0]["message"]["content"]
                   for i in reversed(range(6))}
        assert fwd == rev


class TestRecordFixture:
    def test_record_and_replay(self, tmp_path):
        upstream_script = {
            ("a", PassKind.COARSE): ScriptEntry("a", PassKind.COARSE, "coarse a"),
            ("a", PassKind.FINE): ScriptEntry("a", PassKind.FINE, behavior=Behavior.HTTP500),
            ("b", PassKind.TYPE): ScriptEntry("b", PassKind.TYPE, behavior=Behavior.HTTP429),
        }
        requests = [{"video_id": "a", "pass": "coarse", "payload": {"messages": []}},
                    {"video_id": "a", "pass": "fine", "payload": {"messages": []}},
                    {"video_id": "b", "pass": "type", "payload": {"messages": []}}]
        out = tmp_path / "rec.jsonl"
        with MockVLMServer(upstream_script) as upstream:
            entries = record_fixture(upstream.url, requests, out)
        assert [(e.video_id, e.pass_kind, e.behavior) for e in entries] == [
            ("a", PassKind.COARSE, Behavior.OK), ("a", PassKind.FINE, Behavior.HTTP500),
            ("b", PassKind.TYPE, Behavior.HTTP429)]
        with MockVLMServer(out) as replay:
            assert post(replay, "a", "coarse").json()["choices"][0]["message"]["content"] == "coarse a"
            assert post(replay, "a", "fine").status_code == 500
            assert post(replay, "b", "type").status_code == 429

    def test_unreachable_upstream_recorded_as_error(self, tmp_path):
        with MockVLMServer({}) as srv:
            url = srv.url
        entries = record_fixture(url, [{"video_id": "a", "pass": "coarse", "payload": {}}], tmp_path / "r.jsonl",
                                 timeout=1.0)
        assert entries[0].behavior is Behavior.HTTP500
