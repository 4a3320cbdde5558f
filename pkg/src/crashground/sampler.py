"""Frame sampling plans for the three model calls, and frame extraction.

Plans are pure arithmetic on the video duration. Extraction has two backends:
a directory of pre-decoded stills named ``<seconds>.jpg`` (used by the tests
and the bundled demo), and an external decoder command such as ffmpeg.
"""

from __future__ import annotations

import io
import math
import os
import shlex
import subprocess
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

from PIL import Image

from .config import RunConfig
from .types import ExtractionError, InvalidInputError, PassKind, VideoRecord

MAX_FRAMES = 30
PASS1_FPS = 1.0
PASS1_LONG_EDGE = 720
PASS2_FPS = 5.0
PASS2_LONG_EDGE = 1024
TYPE_CLIP_BEFORE = 3.0
TYPE_CLIP_AFTER = 2.0

IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png")

DEFAULT_FFMPEG_CMD = (
    "ffmpeg -v error -ss {timestamp} -i {input} -frames:v 1 -vf {vf} -f image2pipe -c:v mjpeg -"
)


@dataclass(frozen=True)
class SamplingPlan:
    pass_kind: PassKind
    timestamps: tuple[float, ...]
    long_edge_px: int
    window: tuple[float, float]
    crop: tuple[float, float, float, float] | None = None

    def __post_init__(self) -> None:
        ts = self.timestamps
        if not ts:
            raise InvalidInputError("a sampling plan needs at least one timestamp")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise InvalidInputError("plan timestamps must be strictly increasing")
        if ts[0] < 0:
            raise InvalidInputError("plan timestamps must be non-negative")
        if self.pass_kind is not PassKind.TYPE and len(ts) > MAX_FRAMES:
            raise InvalidInputError(f"grounding plans are capped at {MAX_FRAMES} frames")
        if self.long_edge_px <= 0:
            raise InvalidInputError("long_edge_px must be positive")
        if self.crop is not None:
            x0, y0, x1, y1 = self.crop
            if not (0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1):
                raise InvalidInputError(f"crop {self.crop} must have positive area inside [0,1]^2")

    def tag(self, t: float) -> str:
        """Frame tag text, e.g. ``[Frame at 3s]`` or ``[Frame at 7.2s]``."""
        return f"[Frame at {format_timestamp(t, self.pass_kind)}s]"


@dataclass(frozen=True)
class Frame:
    timestamp: float
    data: bytes
    width: int
    height: int


@dataclass(frozen=True)
class FrameSet:
    plan: SamplingPlan
    frames: tuple[Frame, ...]

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)


def format_timestamp(t: float, kind: PassKind) -> str:
    # Coarse tags name whole seconds; strided long-video samples keep a decimal.
    if kind is PassKind.COARSE and abs(t - round(t)) < 1e-9:
        return str(int(round(t)))
    return f"{t:.1f}"


def _grid(start: float, stop: float, fps: float, cap: int | None) -> tuple[float, ...]:
    """``start + k/fps`` for every k with the sample strictly before ``stop``."""
    out = []
    k = 0
    while True:
        # rounding keeps decimal tags clean; it must not step before the window
        t = max(round(start + k / fps, 6), start)
        if t >= stop - 1e-9 and k > 0:
            break
        out.append(t)
        k += 1
        if cap is not None and len(out) >= cap:
            break
        if t >= stop:
            break
    return tuple(out)


def build_pass1_plan(video: VideoRecord, cfg: RunConfig | None = None) -> SamplingPlan:
    D = video.duration
    if not D > 0:
        raise InvalidInputError(f"{video.video_id}: duration must be > 0")
    whole = math.floor(D + 1e-9)
    if whole + 1 <= MAX_FRAMES:
        ts = tuple(float(s) for s in range(whole + 1))
    else:
        stride = D / MAX_FRAMES
        ts = tuple(round(i * stride, 6) for i in range(MAX_FRAMES))
    return SamplingPlan(PassKind.COARSE, ts, PASS1_LONG_EDGE, (0.0, D))


def refinement_window(t1: float, duration: float, delta: float) -> tuple[float, float]:
    return (max(0.0, t1 - delta), min(duration, t1 + delta))


def build_pass2_plan(video: VideoRecord, t1: float, cfg: RunConfig) -> SamplingPlan:
    D = video.duration
    if not 0 <= t1 <= D:
        raise InvalidInputError(f"{video.video_id}: t1={t1} outside [0, {D}]")
    window = refinement_window(t1, D, cfg.window_delta)
    ts = _grid(window[0], window[1], PASS2_FPS, MAX_FRAMES)
    return SamplingPlan(PassKind.FINE, ts, PASS2_LONG_EDGE, window)


def crop_box(
    center: tuple[float, float], width: int, height: int, crop_factor: float
) -> tuple[float, float, float, float]:
    """Square crop of side ``min(width, height) / crop_factor`` pixels.

    The square is shifted, never shrunk, to stay inside the frame.
    """
    side_px = min(width, height) / crop_factor
    sx, sy = side_px / width, side_px / height
    cx, cy = center
    x0 = min(max(cx - sx / 2, 0.0), 1.0 - sx)
    y0 = min(max(cy - sy / 2, 0.0), 1.0 - sy)
    return (x0, y0, x0 + sx, y0 + sy)


def build_type_clip_plan(
    video: VideoRecord, t_star: float, center: tuple[float, float], cfg: RunConfig
) -> SamplingPlan:
    D = video.duration
    if not 0 <= t_star <= D:
        raise InvalidInputError(f"{video.video_id}: t*={t_star} outside [0, {D}]")
    cx, cy = center
    if not (0 <= cx <= 1 and 0 <= cy <= 1):
        raise InvalidInputError(f"{video.video_id}: crop center {center} outside [0,1]^2")
    window = (max(0.0, t_star - TYPE_CLIP_BEFORE), min(D, t_star + TYPE_CLIP_AFTER))
    ts = _grid(window[0], window[1], cfg.type_clip_fps, None)
    crop = crop_box(center, video.width, video.height, cfg.crop_factor)
    return SamplingPlan(PassKind.TYPE, ts, cfg.type_clip_long_edge, window, crop)


# -- extraction ----------------------------------------------------------------


def _finish(img: Image.Image, crop, long_edge: int) -> tuple[bytes, int, int]:
    img = img.convert("RGB")
    if crop is not None:
        w, h = img.size
        x0, y0, x1, y1 = crop
        box = (round(x0 * w), round(y0 * h), max(round(x1 * w), round(x0 * w) + 1),
               max(round(y1 * h), round(y0 * h) + 1))
        img = img.crop(box)
    w, h = img.size
    scale = long_edge / max(w, h)
    size = (max(1, round(w * scale)), max(1, round(h * scale)))
    if size != (w, h):
        img = img.resize(size, Image.BILINEAR)
    buf = io.BytesIO()
    img.save(buf, format="JPEG", quality=90)
    return buf.getvalue(), img.size[0], img.size[1]


@lru_cache(maxsize=64)
def _still_index(directory: str, mtime_ns: int) -> tuple[tuple[float, str], ...]:
    stills = []
    for name in os.listdir(directory):
        stem, suffix = os.path.splitext(name)
        if suffix.lower() not in IMAGE_SUFFIXES:
            continue
        try:
            stills.append((float(stem), os.path.join(directory, name)))
        except ValueError:
            continue
    return tuple(sorted(stills))


@lru_cache(maxsize=4096)
def _render_still(path: str, crop, long_edge: int) -> tuple[bytes, int, int]:
    with Image.open(path) as img:
        return _finish(img, crop, long_edge)


def _extract_from_stills(plan: SamplingPlan, video: VideoRecord) -> FrameSet:
    directory = video.path
    try:
        stills = _still_index(directory, os.stat(directory).st_mtime_ns)
    except OSError as exc:
        raise ExtractionError(video.video_id, f"cannot list frame directory: {exc}") from exc
    if not stills:
        raise ExtractionError(video.video_id, "frame directory holds no stills")
    frames = []
    for t in plan.timestamps:
        # nearest still at or before t; the first still for anything earlier
        chosen = stills[0][1]
        for s, path in stills:
            if s <= t + 1e-9:
                chosen = path
            else:
                break
        try:
            data, w, h = _render_still(chosen, plan.crop, plan.long_edge_px)
        except OSError as exc:
            raise ExtractionError(video.video_id, f"cannot decode {chosen}: {exc}") from exc
        frames.append(Frame(t, data, w, h))
    return FrameSet(plan, tuple(frames))


def _ffmpeg_filter(crop, long_edge: int) -> str:
    parts = []
    if crop is not None:
        x0, y0, x1, y1 = crop
        parts.append(f"crop=iw*{x1 - x0:.6f}:ih*{y1 - y0:.6f}:iw*{x0:.6f}:ih*{y0:.6f}")
    parts.append(
        f"scale='if(gt(iw,ih),{long_edge},-2)':'if(gt(iw,ih),-2,{long_edge})'"
    )
    return ",".join(parts)


def _run_decoder(cmd: str, video: VideoRecord, t: float, plan: SamplingPlan, timeout: float) -> bytes:
    crop = "" if plan.crop is None else ",".join(f"{v:.6f}" for v in plan.crop)
    values = {
        "input": video.path,
        "timestamp": f"{t:.3f}",
        "long_edge": str(plan.long_edge_px),
        "crop": crop,
        "vf": _ffmpeg_filter(plan.crop, plan.long_edge_px),
    }
    argv = [token.format(**values) for token in shlex.split(cmd)]
    proc = subprocess.run(argv, capture_output=True, timeout=timeout)
    if proc.returncode != 0:
        return b""
    return proc.stdout


def _extract_with_command(
    plan: SamplingPlan, video: VideoRecord, cmd: str, timeout: float, step_back: float = 0.5
) -> FrameSet:
    if not os.path.exists(video.path):
        raise ExtractionError(video.video_id, f"media file not found: {video.path}")
    frames = []
    for t in plan.timestamps:
        probe = t
        data = b""
        # container durations drift: walk back to the last decodable frame
        while True:
            try:
                data = _run_decoder(cmd, video, probe, plan, timeout)
            except (OSError, subprocess.TimeoutExpired) as exc:
                raise ExtractionError(video.video_id, f"decoder failed: {exc}") from exc
            if data or probe <= 0:
                break
            probe = max(0.0, probe - step_back)
        if not data:
            raise ExtractionError(video.video_id, f"decoder produced no frame at {t:.3f}s")
        try:
            with Image.open(io.BytesIO(data)) as img:
                img.load()
                w, h = img.size
                if max(w, h) != plan.long_edge_px:
                    data, w, h = _finish(img, None, plan.long_edge_px)
        except OSError as exc:
            raise ExtractionError(video.video_id, f"decoder output is not an image: {exc}") from exc
        frames.append(Frame(t, data, w, h))
    return FrameSet(plan, tuple(frames))


def extract_frames(
    plan: SamplingPlan,
    video: VideoRecord,
    extractor_cmd: str | None = None,
    timeout: float = 60.0,
) -> FrameSet:
    """Materialize one encoded frame per plan timestamp, in plan order.

    A directory path selects the stills backend; any other path needs
    ``extractor_cmd`` (placeholders ``{input}``, ``{timestamp}``,
    ``{long_edge}``, ``{crop}`` and the ffmpeg filter chain ``{vf}``).
    """
    if Path(video.path).is_dir():
        return _extract_from_stills(plan, video)
    if not extractor_cmd:
        raise ExtractionError(video.video_id, "not a frame directory and no extractor_cmd configured")
    return _extract_with_command(plan, video, extractor_cmd, timeout)
