"""Per-video two-pass grounding and the batch runner around it.

Each video produces one trace line holding every model reply verbatim plus
the parsed values. The final prediction is always derived from the trace by
``assemble_prediction``, both online and when re-gating offline, so sweeps
and ablations reproduce a run exactly without any network access.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import shlex
import subprocess
import threading
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Protocol

from .config import FallbackMode, RunConfig
from .evaluator import write_predictions
from .gateway import CallOutcome, build_message, fingerprint
from .gates import apply_gates
from .parser import (
    PASS2_SENTINEL,
    Pass1Result,
    Pass2Result,
    normalize_type,
    parse_pass1,
    parse_pass2,
    parse_type,
)
from .prompts import render_prompt
from .sampler import (
    FrameSet,
    SamplingPlan,
    build_pass1_plan,
    build_pass2_plan,
    build_type_clip_plan,
    extract_frames,
)
from .types import (
    FALLBACK_PROVENANCE,
    CollisionType,
    ConfigError,
    CrashGroundError,
    ExtractionError,
    InvalidInputError,
    ParseError,
    PassKind,
    Prediction,
    Provenance,
    TraceError,
    TypeSource,
    VideoRecord,
)

log = logging.getLogger(__name__)

OK = "ok"
CALL_FAILED = "call_failed"
PARSE_FAILED = "parse_failed"
EXTRACT_FAILED = "extract_failed"
SKIPPED = "skipped"


class Gateway(Protocol):
    def call(self, kind: PassKind, video_id: str, message: dict[str, Any]) -> CallOutcome: ...

    def payload_for(self, kind: PassKind, message: dict[str, Any]) -> dict[str, Any]: ...


Extractor = Callable[[SamplingPlan, VideoRecord], FrameSet]


# -- fallbacks -------------------------------------------------------------------


def naive_fill(video: VideoRecord) -> Prediction:
    return Prediction(video.video_id, video.duration / 2.0, 0.5, 0.5, CollisionType.SINGLE,
                      FALLBACK_PROVENANCE)


class NaiveFill:
    name = "naive"

    def __call__(self, video: VideoRecord) -> Prediction:
        return naive_fill(video)


def _row_to_prediction(video: VideoRecord, fields: list[str]) -> Prediction:
    if len(fields) == 5:
        vid, t, x, y, c = fields
        if vid.strip() != video.video_id:
            raise ValueError(f"plugin answered for {vid!r}")
    elif len(fields) == 4:
        t, x, y, c = fields
    else:
        raise ValueError(f"expected 4 or 5 fields, got {len(fields)}")
    return Prediction(video.video_id, float(t), float(x), float(y), normalize_type(c),
                      FALLBACK_PROVENANCE)


class CommandFallback:
    """External predictor; prints one ``video_id,time,x,y,type`` row on stdout.

    Placeholders: ``{video_id}``, ``{path}``, ``{duration}``, ``{width}``, ``{height}``.
    Any failure degrades to naive fill.
    """

    name = "plugin"

    def __init__(self, cmd: str, timeout: float = 600.0):
        self.cmd = cmd
        self.timeout = timeout

    def __call__(self, video: VideoRecord) -> Prediction:
        values = {"video_id": video.video_id, "path": video.path, "duration": repr(video.duration),
                  "width": str(video.width), "height": str(video.height)}
        argv = [tok.format(**values) for tok in shlex.split(self.cmd)]
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=self.timeout)
            if proc.returncode != 0:
                raise RuntimeError(f"exit status {proc.returncode}")
            lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
            rows = [r for r in csv.reader(lines) if r and r[0].strip() != "video_id"]
            if not rows:
                raise RuntimeError("no prediction row on stdout")
            return _row_to_prediction(video, [f.strip() for f in rows[-1]])
        except Exception as exc:  # any plugin problem means naive fill
            log.warning("fallback plugin failed for %s (%s); using naive fill", video.video_id, exc)
            return naive_fill(video)


class ScriptedFallback:
    """Canned fallback answers keyed by video id, for tests and demos."""

    name = "scripted"

    def __init__(self, rows: dict[str, tuple[float, float, float, str]]):
        self.rows = rows

    def __call__(self, video: VideoRecord) -> Prediction:
        try:
            return _row_to_prediction(video, [str(v) for v in self.rows[video.video_id]])
        except (KeyError, ValueError, ParseError):
            return naive_fill(video)


def make_fallback(cfg: RunConfig) -> Callable[[VideoRecord], Prediction]:
    if cfg.fallback_mode is FallbackMode.PHYSICS_PLUGIN:
        if not cfg.fallback_cmd:
            raise ConfigError("fallback_mode 'plugin' needs fallback_cmd")
        return CommandFallback(cfg.fallback_cmd)
    return NaiveFill()


# -- trace <-> prediction --------------------------------------------------------


def _call_record(kind: PassKind, status: str, *, payload=None, outcome: CallOutcome | None = None,
                 parsed: dict[str, Any] | None = None, error: str | None = None) -> dict[str, Any]:
    return {
        "kind": kind.value,
        "status": status,
        "request_fingerprint": fingerprint(payload) if payload is not None else None,
        "raw_text": outcome.raw_text if outcome else "",
        "attempts": outcome.attempts if outcome else 0,
        "parsed": parsed,
        "error": error if error is not None else (outcome.error if outcome else None),
    }


def _pass1_from(record: dict[str, Any]) -> Pass1Result:
    p = record["parsed"]
    return Pass1Result(float(p["t1"]), float(p["raw_x1"]), float(p["raw_y1"]), CollisionType(p["c1"]))


def _pass2_from(record: dict[str, Any] | None, duration: float) -> tuple[Pass2Result, bool]:
    """Gate input from a Pass-2 record.

    A refined time outside the video is read as an abstention (-1), so Gate 1
    keeps the Pass-1 time and t* stays within [0, duration].
    """
    if record is None or record.get("status") != OK:
        return PASS2_SENTINEL, False
    p = record["parsed"]
    t2 = float(p["t2"])
    if not 0.0 <= t2 <= duration:
        t2 = -1.0
    return Pass2Result(t2, float(p["raw_x2"]), float(p["raw_y2"])), True


def assemble_prediction(trace: dict[str, Any], cfg: RunConfig) -> Prediction:
    """Final tuple for one video from its trace under the gate settings in ``cfg``."""
    vid = trace["video_id"]
    calls = trace.get("calls") or {}
    coarse = calls.get(PassKind.COARSE.value)
    if coarse is None:
        raise TraceError(vid, "trace has no Pass-1 record")
    if coarse["status"] != OK:
        fb = trace.get("fallback")
        if not fb or "prediction" not in fb:
            raise TraceError(vid, "Pass 1 failed but the trace holds no fallback prediction")
        return Prediction.from_dict(fb["prediction"])

    p1 = _pass1_from(coarse)
    p2, pass2_ok = _pass2_from(calls.get(PassKind.FINE.value), float(trace["duration"]))
    window = tuple(trace["window"])
    decision = apply_gates(
        p1.t1, (p1.raw_x1, p1.raw_y1), p2, window, cfg.tau, cfg.margin,
        use_pass2_time=cfg.use_pass2_time, use_pass2_space=cfg.use_pass2_space,
    )
    typed = calls.get(PassKind.TYPE.value)
    typing_ok = typed is not None and typed.get("status") == OK
    if cfg.use_specialist_type and typing_ok:
        c_star, type_source = CollisionType(typed["parsed"]["type"]), TypeSource.SPECIALIST
    else:
        c_star, type_source = p1.c1, TypeSource.PASS1_BACKUP
    prov = Provenance(
        pass1_ok=True,
        pass2_ok=pass2_ok,
        typing_ok=typing_ok,
        time_source=decision.time_source,
        space_source=decision.space_source,
        type_source=type_source,
    )
    return Prediction(vid, decision.t_star, decision.point_star[0], decision.point_star[1], c_star, prov)


def dumps_trace(trace: dict[str, Any]) -> str:
    return json.dumps(trace, sort_keys=True, separators=(",", ":"))


# -- one video ---------------------------------------------------------------------


class StageLimits:
    """Caps concurrent work per stage; a video holds one stage at a time."""

    def __init__(self, pass1: int, pass2: int, typing: int):
        self._sems = {
            PassKind.COARSE: threading.BoundedSemaphore(pass1),
            PassKind.FINE: threading.BoundedSemaphore(pass2),
            PassKind.TYPE: threading.BoundedSemaphore(typing),
        }

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "StageLimits":
        return cls(cfg.workers.pass1, cfg.workers.pass2, cfg.workers.typing)

    def __call__(self, kind: PassKind):
        return self._sems[kind]


def _default_extractor(cfg: RunConfig) -> Extractor:
    def extract(plan: SamplingPlan, video: VideoRecord) -> FrameSet:
        return extract_frames(plan, video, cfg.extractor_cmd)

    return extract


def _run_call(kind, video, plan, prompt, gateway, extractor, parse, timings):
    """Extract, send, parse. Returns ``(record, parsed_value_or_None)``."""
    try:
        frames = extractor(plan, video)
    except ExtractionError as exc:
        return _call_record(kind, EXTRACT_FAILED, error=str(exc)), None
    message = build_message(prompt, frames, kind)
    payload = gateway.payload_for(kind, message)
    outcome = gateway.call(kind, video.video_id, message)
    timings[kind.value] = {"latency": outcome.latency, "attempts": outcome.attempts}
    if not outcome.ok:
        return _call_record(kind, CALL_FAILED, payload=payload, outcome=outcome), None
    try:
        value, parsed = parse(outcome.raw_text)
    except ParseError as exc:
        return _call_record(kind, PARSE_FAILED, payload=payload, outcome=outcome, error=str(exc)), None
    return _call_record(kind, OK, payload=payload, outcome=outcome, parsed=parsed), value


def ground_video(
    video: VideoRecord,
    cfg: RunConfig,
    gateway: Gateway,
    fallback: Callable[[VideoRecord], Prediction],
    extractor: Extractor | None = None,
    limits: StageLimits | None = None,
) -> tuple[Prediction, dict[str, Any], dict[str, Any]]:
    """Run the coarse pass, the fine pass, both gates and specialist typing.

    Returns the prediction, the trace (JSON-ready) and per-call timings.
    """
    extractor = extractor or _default_extractor(cfg)
    stage = limits or (lambda kind: nullcontext())
    timings: dict[str, Any] = {}
    trace: dict[str, Any] = {
        "video_id": video.video_id,
        "duration": video.duration,
        "calls": {},
        "window": None,
        "fallback": None,
    }
    calls = trace["calls"]

    def p1_parse(text):
        r = parse_pass1(text, video.duration)
        return r, {"t1": r.t1, "raw_x1": r.raw_x1, "raw_y1": r.raw_y1, "c1": r.c1.value}

    with stage(PassKind.COARSE):
        plan1 = build_pass1_plan(video, cfg)
        rec, p1 = _run_call(PassKind.COARSE, video, plan1, render_prompt(PassKind.COARSE, video),
                            gateway, extractor, p1_parse, timings)
    calls[PassKind.COARSE.value] = rec

    if p1 is None:
        fb = fallback(video)
        fb = Prediction(video.video_id, fb.t_star, fb.x_star, fb.y_star, fb.c_star, FALLBACK_PROVENANCE)
        trace["fallback"] = {"source": getattr(fallback, "name", type(fallback).__name__),
                             "prediction": fb.to_dict()}
        pred = assemble_prediction(trace, cfg)
        trace["prediction"] = pred.to_dict()
        return pred, trace, timings

    plan2 = build_pass2_plan(video, p1.t1, cfg)
    trace["window"] = list(plan2.window)

    def p2_parse(text):
        r = parse_pass2(text)
        return r, {"t2": r.t2, "raw_x2": r.raw_x2, "raw_y2": r.raw_y2}

    if cfg.use_pass2_time or cfg.use_pass2_space:
        with stage(PassKind.FINE):
            rec, _ = _run_call(PassKind.FINE, video, plan2,
                               render_prompt(PassKind.FINE, video, plan2.window),
                               gateway, extractor, p2_parse, timings)
    else:
        rec = _call_record(PassKind.FINE, SKIPPED)
    calls[PassKind.FINE.value] = rec

    if cfg.use_specialist_type:
        p2, _ = _pass2_from(rec, video.duration)
        decision = apply_gates(p1.t1, (p1.raw_x1, p1.raw_y1), p2, plan2.window, cfg.tau, cfg.margin,
                               cfg.use_pass2_time, cfg.use_pass2_space)
        # crop follows the clamped coarse point, not the merged one
        center = (p1.raw_x1 / 1000.0, p1.raw_y1 / 1000.0)
        plan3 = build_type_clip_plan(video, decision.t_star, center, cfg)

        def type_parse(text):
            c = parse_type(text)
            return c, {"type": c.value}

        with stage(PassKind.TYPE):
            rec, _ = _run_call(PassKind.TYPE, video, plan3, render_prompt(PassKind.TYPE, video),
                               gateway, extractor, type_parse, timings)
        trace["type_clip"] = {"window": list(plan3.window), "crop": list(plan3.crop)}
    else:
        rec = _call_record(PassKind.TYPE, SKIPPED)
    calls[PassKind.TYPE.value] = rec

    pred = assemble_prediction(trace, cfg)
    trace["prediction"] = pred.to_dict()
    return pred, trace, timings


# -- batch -------------------------------------------------------------------------------


def read_manifest(path: str | Path) -> list[VideoRecord]:
    base = Path(path).resolve().parent
    videos = []
    seen = set()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"video_id", "path", "duration"}
        if not need <= set(reader.fieldnames or []):
            raise InvalidInputError(f"{path}: manifest needs columns video_id,path,duration[,width,height]")
        for row in reader:
            vid = row["video_id"].strip()
            if vid in seen:
                raise InvalidInputError(f"{path}: duplicate video_id {vid!r}")
            seen.add(vid)
            media = Path(row["path"].strip())
            if not media.is_absolute():
                media = base / media
            try:
                videos.append(VideoRecord(
                    vid, str(media), float(row["duration"]),
                    int(row.get("width") or 1280), int(row.get("height") or 720),
                ))
            except ValueError as exc:
                raise InvalidInputError(f"{path}: bad row for {vid!r}: {exc}") from exc
    return videos


def write_manifest(path: str | Path, videos: Iterable[VideoRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["video_id", "path", "duration", "width", "height"])
        for v in videos:
            w.writerow([v.video_id, v.path, repr(v.duration), v.width, v.height])


def load_traces(path: str | Path, strict: bool = True) -> dict[str, dict[str, Any]]:
    """Read a trace file. With ``strict=False`` torn or incomplete lines are dropped."""
    traces: dict[str, dict[str, Any]] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                trace = json.loads(line)
            except json.JSONDecodeError:
                if strict:
                    raise InvalidInputError(f"{path}:{lineno}: malformed trace line") from None
                continue
            if not isinstance(trace, dict) or "video_id" not in trace:
                if strict:
                    raise InvalidInputError(f"{path}:{lineno}: trace line without video_id")
                continue
            if "prediction" not in trace and not strict:
                continue
            traces[trace["video_id"]] = trace
    return traces


def _stage_stats(traces: list[dict[str, Any]], kind: PassKind) -> dict[str, Any]:
    attempted = failed = 0
    for t in traces:
        rec = t["calls"].get(kind.value)
        if rec is None or rec["status"] == SKIPPED:
            continue
        attempted += 1
        if rec["status"] != OK:
            failed += 1
    return {"attempted": attempted, "failed": failed,
            "failure_rate": failed / attempted if attempted else 0.0}


def run_report(traces: list[dict[str, Any]], n_resumed: int = 0) -> dict[str, Any]:
    fallback_ids = sorted(t["video_id"] for t in traces if t.get("fallback"))
    return {
        "n_videos": len(traces),
        "n_resumed": n_resumed,
        "n_executed": len(traces) - n_resumed,
        "pass1": _stage_stats(traces, PassKind.COARSE),
        "pass2": _stage_stats(traces, PassKind.FINE),
        "typing": _stage_stats(traces, PassKind.TYPE),
        "fallback": {"count": len(fallback_ids), "video_ids": fallback_ids},
        "extract_failures": sorted(
            t["video_id"] for t in traces
            if any(r["status"] == EXTRACT_FAILED for r in t["calls"].values())
        ),
    }


@dataclass
class BatchResult:
    predictions: list[Prediction]
    traces: dict[str, dict[str, Any]]
    report: dict[str, Any]
    predictions_path: Path
    traces_path: Path
    report_path: Path


def run_batch(
    videos: list[VideoRecord],
    cfg: RunConfig,
    gateway: Gateway,
    fallback: Callable[[VideoRecord], Prediction],
    out_dir: str | Path,
    extractor: Extractor | None = None,
    stop_after: int | None = None,
) -> BatchResult:
    """Ground every video, resuming from any complete traces already in ``out_dir``.

    Traces are appended as videos finish; at the end every output file is
    rewritten sorted by video id, so the outputs do not depend on completion
    order. ``stop_after`` aborts after that many new videos (used to test resume).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    traces_path = out / "traces.jsonl"
    ids = [v.video_id for v in videos]
    if len(set(ids)) != len(ids):
        raise InvalidInputError("manifest has duplicate video ids")

    done: dict[str, dict[str, Any]] = {}
    if traces_path.exists():
        done = {k: v for k, v in load_traces(traces_path, strict=False).items() if k in set(ids)}
    n_resumed = len(done)
    if n_resumed:
        log.info("resuming: %d of %d videos already traced", n_resumed, len(videos))
        # drop torn lines before appending
        with open(traces_path, "w") as fh:
            for vid in sorted(done):
                fh.write(dumps_trace(done[vid]) + "\n")

    (out / "config.json").write_text(cfg.to_json() + "\n")
    todo = [v for v in videos if v.video_id not in done]
    if stop_after is not None:
        todo = todo[:stop_after]

    limits = StageLimits.from_config(cfg)
    sink_lock = threading.Lock()
    results: dict[str, dict[str, Any]] = dict(done)
    progress = {"n": 0}

    def work(video: VideoRecord) -> None:
        _, trace, timing = ground_video(video, cfg, gateway, fallback, extractor, limits)
        line = dumps_trace(trace)
        with sink_lock:
            with open(traces_path, "a") as fh:
                fh.write(line + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            with open(out / "timings.jsonl", "a") as fh:
                fh.write(json.dumps({"video_id": video.video_id, **timing}) + "\n")
            results[video.video_id] = trace
            progress["n"] += 1
            if progress["n"] % 25 == 0 or progress["n"] == len(todo):
                log.info("grounded %d/%d", progress["n"], len(todo))

    pool_size = cfg.workers.pass1 + cfg.workers.pass2 + cfg.workers.typing
    with ThreadPoolExecutor(max_workers=pool_size, thread_name_prefix="ground") as pool:
        futures = [pool.submit(work, v) for v in todo]
        errors = []
        for f in futures:
            exc = f.exception()
            if exc is not None:
                errors.append(exc)
    if errors:
        raise CrashGroundError(f"{len(errors)} videos failed unexpectedly; first: {errors[0]!r}")

    ordered = [results[k] for k in sorted(results)]
    tmp = traces_path.with_suffix(".jsonl.tmp")
    with open(tmp, "w") as fh:
        for t in ordered:
            fh.write(dumps_trace(t) + "\n")
    os.replace(tmp, traces_path)

    predictions = [Prediction.from_dict(t["prediction"]) for t in ordered]
    pred_path = out / "predictions.csv"
    write_predictions(pred_path, predictions)
    report = run_report(ordered, n_resumed)
    report["complete"] = len(ordered) == len(videos)
    report_path = out / "run_report.json"
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return BatchResult(predictions, {t["video_id"]: t for t in ordered}, report, pred_path,
                       traces_path, report_path)


def regate_all(traces: dict[str, dict[str, Any]] | Iterable[dict[str, Any]], cfg: RunConfig) -> list[Prediction]:
    items = traces.values() if isinstance(traces, dict) else traces
    return [assemble_prediction(t, cfg) for t in sorted(items, key=lambda t: t["video_id"])]
