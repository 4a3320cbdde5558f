"""Seeded synthetic corpus: stills, manifest, ground truth and a mock script.

Scripted answers are built around each video's ground truth so the scores are
informative, and a share of them exercises every failure path: fine-pass
abstentions, boundary hedges, edge-clamped or invalid coordinates, garbage
replies and transient HTTP errors.
"""

from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass
from pathlib import Path

from PIL import Image

from .mock_vlm import Behavior, ScriptEntry, write_script
from .pipeline import write_manifest
from .sampler import refinement_window
from .types import CollisionType, GroundTruth, PassKind, VideoRecord

TYPES = CollisionType.ordered()


@dataclass
class Corpus:
    root: Path
    videos: list[VideoRecord]
    gts: dict[str, GroundTruth]
    manifest_path: Path
    gt_path: Path
    script_path: Path


def _write_gt(path: Path, gts: dict[str, GroundTruth]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["video_id", "time", "x", "y", "type"])
        for g in sorted(gts.values(), key=lambda g: g.video_id):
            w.writerow([g.video_id, repr(g.t_gt), repr(g.x_gt), repr(g.y_gt), g.c_gt.value])


def _write_stills(directory: Path, duration: float, rng: random.Random) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    base = [rng.randrange(256) for _ in range(3)]
    for s in range(int(duration) + 1):
        color = tuple((c + 17 * s) % 256 for c in base)
        Image.new("RGB", (32, 18), color).save(directory / f"{s}.jpg", quality=80)


def make_corpus(root: str | Path, n: int = 100, seed: int = 42, delta: float = 3.0) -> Corpus:
    rng = random.Random(seed)
    root = Path(root).resolve()
    root.mkdir(parents=True, exist_ok=True)
    videos, gts, entries = [], {}, []
    for i in range(n):
        vid = f"v{i:03d}"
        D = round(rng.uniform(4.0, 45.0), 1)
        video = VideoRecord(vid, str(root / "media" / vid), D, 1280, 720)
        _write_stills(Path(video.path), D, rng)
        videos.append(video)

        t_gt = round(rng.uniform(0.5, D - 0.5), 2)
        gt = GroundTruth(vid, t_gt, round(rng.uniform(0.1, 0.9), 3), round(rng.uniform(0.1, 0.9), 3),
                         rng.choice(TYPES))
        gts[vid] = gt

        # coarse: integer second with a late bias, noisy point, type right ~half the time
        t1 = min(max(0, round(t_gt + rng.choice([-1, 0, 0, 1, 1, 2, 4]))), int(D))
        x1 = min(max(0, round(gt.x_gt * 1000 + rng.gauss(0, 60))), 1000)
        y1 = min(max(0, round(gt.y_gt * 1000 + rng.gauss(0, 60))), 1000)
        c1 = gt.c_gt if rng.random() < 0.5 else rng.choice(TYPES)
        coarse = json.dumps({"time": t1, "x": x1, "y": y1, "type": c1.value.replace("-", "_")})
        if rng.random() < 0.05:
            coarse = f"Sure! Here is my answer:\n```json\n{coarse}\n```"
        entries.append(ScriptEntry(vid, PassKind.COARSE, coarse))

        w_min, w_max = refinement_window(float(t1), D, delta)
        roll = rng.random()
        x2 = round(gt.x_gt * 1000 + rng.gauss(0, 30))
        y2 = round(gt.y_gt * 1000 + rng.gauss(0, 30))
        # keep refined times either exactly on an edge or > 0.4 s inside it
        inner_lo, inner_hi = w_min + 0.4, w_max - 0.4
        t2 = round(min(max(t_gt + rng.gauss(0, 0.3), inner_lo), inner_hi), 1)
        if inner_hi < inner_lo:
            t2 = round((w_min + w_max) / 2, 1)
        fine_behavior, fine_seq = Behavior.OK, None
        if roll < 0.08:
            t2 = -1
        elif roll < 0.14:
            t2 = round(rng.choice([w_min, w_max]), 1)
        elif roll < 0.20:
            x2, y2 = -1, -1
        elif roll < 0.25:
            x2 = rng.choice([0, 3, 997, 1000])
        elif roll < 0.28:
            fine_behavior = Behavior.GARBAGE
        elif roll < 0.31:
            fine_seq = (Behavior.HTTP500, Behavior.HTTP429, Behavior.OK)
        elif roll < 0.33:
            fine_behavior = Behavior.HTTP500
        fine = json.dumps({"time": t2, "x": x2, "y": y2})
        entries.append(ScriptEntry(vid, PassKind.FINE, fine, fine_behavior, fine_seq))

        roll = rng.random()
        c_type = gt.c_gt if rng.random() < 0.65 else rng.choice(TYPES)
        type_text = rng.choice([c_type.value.replace("-", "_"), f"**{c_type.value}**",
                                f'{{"type": "{c_type.value}"}}'])
        type_behavior = Behavior.OK
        if roll < 0.05:
            type_behavior = Behavior.GARBAGE
        elif roll < 0.08:
            type_behavior = Behavior.HTTP500
        entries.append(ScriptEntry(vid, PassKind.TYPE, type_text, type_behavior))

    manifest_path = root / "manifest.csv"
    write_manifest(manifest_path, videos)
    gt_path = root / "gt.csv"
    _write_gt(gt_path, gts)
    script_path = root / "script.jsonl"
    write_script(script_path, entries)
    return Corpus(root, videos, gts, manifest_path, gt_path, script_path)
