from __future__ import annotations

from pathlib import Path
from typing import Any, Callable

import pytest
from PIL import Image

from crashground.config import RunConfig
from crashground.gateway import CallOutcome, CallStatus, request_payload
from crashground.gateway import grounding_profile, typing_profile
from crashground.sampler import Frame, FrameSet, SamplingPlan
from crashground.types import PassKind, VideoRecord

GOLDEN = Path(__file__).parent / "golden"


def make_stills(directory: Path, duration: float, size=(64, 36)) -> Path:
    """One solid-color still per whole second, named ``<s>.jpg``."""
    directory.mkdir(parents=True, exist_ok=True)
    for s in range(int(duration) + 1):
        Image.new("RGB", size, ((40 * s) % 256, 90, 160)).save(directory / f"{s}.jpg")
    return directory


@pytest.fixture
def stills_video(tmp_path) -> VideoRecord:
    d = make_stills(tmp_path / "clip", 20.0)
    return VideoRecord("clip", str(d), 20.0, 1280, 720)


def blank_extractor(plan: SamplingPlan, video: VideoRecord) -> FrameSet:
    """Skips decoding entirely; enough for gateway fakes that ignore images."""
    return FrameSet(plan, tuple(Frame(t, b"\xff\xd8jpg", 8, 8) for t in plan.timestamps))


class FakeGateway:
    """In-process gateway: ``replies[kind]`` is text, None (call fails) or a callable."""

    def __init__(self, replies: dict[PassKind, Any], cfg: RunConfig | None = None):
        cfg = cfg or RunConfig()
        self.replies = replies
        self.calls: list[tuple[PassKind, str, dict]] = []
        self._profiles = {PassKind.COARSE: grounding_profile(cfg, "http://fake"),
                          PassKind.FINE: grounding_profile(cfg, "http://fake"),
                          PassKind.TYPE: typing_profile(cfg, "http://fake")}

    def payload_for(self, kind: PassKind, message: dict) -> dict:
        return request_payload(self._profiles[kind], message)

    def call(self, kind: PassKind, video_id: str, message: dict) -> CallOutcome:
        self.calls.append((kind, video_id, message))
        reply = self.replies.get(kind)
        if callable(reply):
            reply = reply(video_id, message)
        if reply is None:
            return CallOutcome(CallStatus.FAILED, "", 4, 0.0, "http 500")
        return CallOutcome(CallStatus.OK, reply, 1, 0.0)


@pytest.fixture
def fake_gateway() -> Callable[..., FakeGateway]:
    return FakeGateway


def run_corpus(corpus, out_dir, *, failure_rate=0.17, seed=42, cfg=None, stop_after=None, fallback=None):
    """Full batch over the scripted mock; retries do not sleep."""
    from crashground.gateway import VLMGateway
    from crashground.mock_vlm import MockVLMServer
    from crashground.pipeline import NaiveFill, run_batch

    cfg = cfg or RunConfig(retry_base_delay=0.0)
    with MockVLMServer(corpus.script_path, failure_rate, seed) as srv:
        with VLMGateway(grounding_profile(cfg, srv.url, "k"), typing_profile(cfg, srv.url, "k")) as gw:
            return run_batch(corpus.videos, cfg, gw, fallback or NaiveFill(), out_dir, stop_after=stop_after)


@pytest.fixture(scope="session")
def corpus100(tmp_path_factory):
    from crashground.synthetic import make_corpus

    return make_corpus(tmp_path_factory.mktemp("corpus100"), n=100, seed=42)


@pytest.fixture(scope="session")
def corpus_run(corpus100, tmp_path_factory):
    """One reference run of the 100-video corpus, shared by read-only tests."""
    return run_corpus(corpus100, tmp_path_factory.mktemp("run_a"))


# -- acceptance summary: one PASS/FAIL/SKIP line per criterion -------------------

_CRITERIA: dict[int, dict[str, Any]] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            item.user_properties.append(("criterion", (m.args[0], m.args[1])))


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    number, name = props["criterion"]
    entry = _CRITERIA.setdefault(number, {"name": name, "outcome": "PASS"})
    if report.failed:
        entry["outcome"] = "FAIL"
    elif report.skipped and entry["outcome"] != "FAIL":
        entry["outcome"] = "SKIP"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:>2}: {e['outcome']:<4}  {e['name']}")
