"""Deterministic stand-in for the two model endpoints.

Responses are looked up by ``(X-Video-Id, X-Pass-Kind)`` in a JSONL script::

    {"video_id": "v001", "pass": "coarse", "response": "{\\"time\\": 12, ...}"}
    {"video_id": "v002", "pass": "fine", "sequence": ["http500", "ok"], "response": "..."}

``behavior`` (or the attempt-indexed ``sequence``, whose last element repeats)
is one of ``ok``, ``http500``, ``http429``, ``timeout``, ``garbage``.
Unscripted requests get a 200 echo of the prompt text.

With ``failure_rate > 0`` a pseudo-random subset of videos answers every
coarse request with HTTP 500. Membership depends only on ``(seed, video_id)``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any, Iterable

import httpx

from .types import CrashGroundError, InvalidInputError, PassKind

log = logging.getLogger(__name__)

GARBAGE_TEXT = "I am unable to determine that from these frames."


class Behavior(str, Enum):
    OK = "ok"
    HTTP500 = "http500"
    HTTP429 = "http429"
    TIMEOUT = "timeout"
    GARBAGE = "garbage"


@dataclass(frozen=True)
class ScriptEntry:
    video_id: str
    pass_kind: PassKind
    response: str = ""
    behavior: Behavior = Behavior.OK
    sequence: tuple[Behavior, ...] | None = None

    def behavior_at(self, attempt: int) -> Behavior:
        if self.sequence:
            return self.sequence[min(attempt, len(self.sequence) - 1)]
        return self.behavior

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"video_id": self.video_id, "pass": self.pass_kind.value,
                             "response": self.response, "behavior": self.behavior.value}
        if self.sequence:
            d["sequence"] = [b.value for b in self.sequence]
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ScriptEntry":
        seq = d.get("sequence")
        if seq is not None and not seq:
            raise InvalidInputError(f"empty behavior sequence for {d.get('video_id')!r}")
        return cls(
            video_id=str(d["video_id"]),
            pass_kind=PassKind(d["pass"]),
            response=d.get("response", ""),
            behavior=Behavior(d.get("behavior", "ok")),
            sequence=tuple(Behavior(b) for b in seq) if seq else None,
        )


def load_script(path: str | Path | None) -> dict[tuple[str, PassKind], ScriptEntry]:
    entries: dict[tuple[str, PassKind], ScriptEntry] = {}
    if path is None:
        return entries
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                entry = ScriptEntry.from_dict(json.loads(line))
            except (ValueError, KeyError) as exc:
                raise InvalidInputError(f"{path}:{lineno}: bad script entry: {exc}") from exc
            key = (entry.video_id, entry.pass_kind)
            if key in entries:
                raise InvalidInputError(f"{path}:{lineno}: duplicate entry for {key[0]}/{key[1].value}")
            entries[key] = entry
    return entries


def write_script(path: str | Path, entries: Iterable[ScriptEntry]) -> None:
    with open(path, "w") as fh:
        for e in entries:
            fh.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")


def failure_draw(seed: int, video_id: str) -> float:
    digest = hashlib.sha256(f"{seed}:{video_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


def forced_failure_ids(video_ids: Iterable[str], failure_rate: float, seed: int) -> set[str]:
    return {v for v in video_ids if failure_draw(seed, v) < failure_rate}


def completion_body(content: str, model: str = "mock") -> dict[str, Any]:
    return {
        "id": "mock-" + hashlib.sha256(content.encode()).hexdigest()[:12],
        "object": "chat.completion",
        "model": model,
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content},
                     "finish_reason": "stop"}],
    }


def _last_text(payload: dict[str, Any]) -> str:
    try:
        parts = payload["messages"][-1]["content"]
    except (KeyError, IndexError, TypeError):
        return ""
    if isinstance(parts, str):
        return parts
    texts = [p.get("text", "") for p in parts if isinstance(p, dict) and p.get("type") == "text"]
    return texts[-1] if texts else ""


class MockVLMServer:
    def __init__(
        self,
        script: dict[tuple[str, PassKind], ScriptEntry] | str | Path | None = None,
        failure_rate: float = 0.0,
        seed: int = 0,
        port: int = 0,
        host: str = "127.0.0.1",
        hold_seconds: float = 30.0,
    ):
        if not 0.0 <= failure_rate <= 1.0:
            raise InvalidInputError("failure_rate must lie in [0, 1]")
        if not isinstance(script, dict):
            script = load_script(script)
        self.script = script
        self.failure_rate = failure_rate
        self.seed = seed
        self.hold_seconds = hold_seconds
        self.hits: Counter[tuple[str, str]] = Counter()
        self._lock = threading.Lock()
        self._stopping = threading.Event()
        try:
            self._httpd = ThreadingHTTPServer((host, port), self._handler_class())
        except OSError as exc:
            raise CrashGroundError(f"mock server cannot bind {host}:{port}: {exc}") from exc
        self._httpd.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    @property
    def url(self) -> str:
        host = self._httpd.server_address[0]
        return f"http://{host}:{self.port}/v1/chat/completions"

    def forced_to_fail(self, video_id: str) -> bool:
        return self.failure_rate > 0 and failure_draw(self.seed, video_id) < self.failure_rate

    def _next_attempt(self, key: tuple[str, str]) -> int:
        with self._lock:
            n = self.hits[key]
            self.hits[key] += 1
        return n

    def respond(self, video_id: str, pass_name: str, payload: dict[str, Any]) -> tuple[Behavior, str]:
        """Decide behavior and content for one request (no I/O)."""
        attempt = self._next_attempt((video_id, pass_name))
        if pass_name == PassKind.COARSE.value and self.forced_to_fail(video_id):
            return Behavior.HTTP500, ""
        try:
            entry = self.script.get((video_id, PassKind(pass_name)))
        except ValueError:
            entry = None
        if entry is None:
            return Behavior.OK, "echo: " + _last_text(payload)
        return entry.behavior_at(attempt), entry.response

    def _handler_class(self):
        server = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, fmt, *args):  # keep test output quiet
                log.debug("mock: " + fmt, *args)

            def _send(self, status: int, body: dict[str, Any]) -> None:
                data = json.dumps(body).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def do_GET(self):
                self._send(200, {"ok": True})

            def do_POST(self):
                length = int(self.headers.get("Content-Length") or 0)
                raw = self.rfile.read(length)
                try:
                    payload = json.loads(raw or b"{}")
                except json.JSONDecodeError:
                    self._send(400, {"error": "body is not JSON"})
                    return
                video_id = self.headers.get("X-Video-Id", "")
                pass_name = self.headers.get("X-Pass-Kind", "")
                behavior, content = server.respond(video_id, pass_name, payload)
                model = payload.get("model", "mock") if isinstance(payload, dict) else "mock"
                if behavior is Behavior.OK:
                    self._send(200, completion_body(content, model))
                elif behavior is Behavior.GARBAGE:
                    self._send(200, completion_body(GARBAGE_TEXT, model))
                elif behavior is Behavior.HTTP500:
                    self._send(500, {"error": "injected server error"})
                elif behavior is Behavior.HTTP429:
                    self._send(429, {"error": "injected rate limit"})
                elif behavior is Behavior.TIMEOUT:
                    server._stopping.wait(server.hold_seconds)
                    try:
                        self._send(504, {"error": "injected timeout"})
                    except OSError:
                        pass

        return Handler

    def start(self) -> "MockVLMServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, kwargs={"poll_interval": 0.05},
                                        name="mock-vlm", daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._httpd.serve_forever()

    def stop(self) -> None:
        self._stopping.set()
        if self._thread is not None:  # shutdown() blocks unless serve_forever is running
            self._httpd.shutdown()
            self._thread.join(timeout=5)
        self._httpd.server_close()

    def __enter__(self) -> "MockVLMServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def serve(
    script: str | Path | None,
    failure_rate: float = 0.0,
    seed: int = 0,
    port: int = 8099,
    host: str = "127.0.0.1",
    hold_seconds: float = 30.0,
) -> MockVLMServer:
    """Bind and start the mock in a background thread; call ``stop()`` when done."""
    return MockVLMServer(script, failure_rate, seed, port, host, hold_seconds).start()


def record_fixture(
    upstream: str,
    requests: Iterable[dict[str, Any]],
    out_path: str | Path,
    api_key: str | None = None,
    timeout: float = 120.0,
) -> list[ScriptEntry]:
    """Send each request to a real endpoint once and freeze the answers.

    Each request is ``{"video_id", "pass", "payload"}``. Upstream errors are
    recorded as the matching failure behavior so replay reproduces them.
    """
    headers = {"Content-Type": "application/json"}
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    entries: dict[tuple[str, PassKind], ScriptEntry] = {}
    with httpx.Client() as client:
        for req in requests:
            vid, kind = str(req["video_id"]), PassKind(req["pass"])
            hdrs = {**headers, "X-Video-Id": vid, "X-Pass-Kind": kind.value}
            try:
                resp = client.post(upstream, json=req["payload"], headers=hdrs, timeout=timeout)
            except httpx.TimeoutException:
                entry = ScriptEntry(vid, kind, behavior=Behavior.TIMEOUT)
            except httpx.HTTPError:
                entry = ScriptEntry(vid, kind, behavior=Behavior.HTTP500)
            else:
                if resp.status_code == 200:
                    try:
                        content = resp.json()["choices"][0]["message"]["content"]
                        entry = ScriptEntry(vid, kind, response=str(content))
                    except (ValueError, KeyError, IndexError, TypeError):
                        entry = ScriptEntry(vid, kind, behavior=Behavior.GARBAGE)
                elif resp.status_code == 429:
                    entry = ScriptEntry(vid, kind, behavior=Behavior.HTTP429)
                else:
                    entry = ScriptEntry(vid, kind, behavior=Behavior.HTTP500)
            entries[(vid, kind)] = entry
    ordered = [entries[k] for k in sorted(entries, key=lambda k: (k[0], k[1].value))]
    write_script(out_path, ordered)
    return ordered
