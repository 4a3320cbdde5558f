"""Benchmark metric: Gaussian time/space similarity, type accuracy, per-video HM.

The dataset score is the mean over videos of each video's harmonic mean. It is
not the harmonic mean of the component means.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .parser import normalize_type
from .types import CollisionType, GroundTruth, InvalidInputError, JoinError, ParseError, Prediction


@dataclass(frozen=True)
class ScoreRow:
    video_id: str
    T: float
    S: float
    C: float
    hm: float


def temporal_score(t_pred: float, t_gt: float, sigma_t: float = 1.0) -> float:
    if not sigma_t > 0:
        raise ValueError("sigma_t must be > 0")
    d = t_pred - t_gt
    return math.exp(-(d * d) / (2.0 * sigma_t * sigma_t))


def spatial_score(
    p_pred: tuple[float, float],
    p_gt: tuple[float, float],
    sigma_x: float = 0.127,
    sigma_y: float = 0.119,
) -> float:
    if not (sigma_x > 0 and sigma_y > 0):
        raise ValueError("spatial sigmas must be > 0")
    dx = p_pred[0] - p_gt[0]
    dy = p_pred[1] - p_gt[1]
    return math.exp(-((dx * dx) / (2.0 * sigma_x * sigma_x) + (dy * dy) / (2.0 * sigma_y * sigma_y)))


def type_score(c_pred: CollisionType, c_gt: CollisionType) -> float:
    return 1.0 if c_pred == c_gt else 0.0


def harmonic_mean3(T: float, S: float, C: float) -> float:
    if T <= 0 or S <= 0 or C <= 0:
        return 0.0
    return 3.0 / (1.0 / T + 1.0 / S + 1.0 / C)


def score_video(
    pred: Prediction,
    gt: GroundTruth,
    sigma_t: float = 1.0,
    sigma_x: float = 0.127,
    sigma_y: float = 0.119,
) -> ScoreRow:
    if pred.video_id != gt.video_id:
        raise JoinError(f"prediction {pred.video_id!r} scored against ground truth {gt.video_id!r}")
    T = temporal_score(pred.t_star, gt.t_gt, sigma_t)
    S = spatial_score((pred.x_star, pred.y_star), (gt.x_gt, gt.y_gt), sigma_x, sigma_y)
    C = type_score(pred.c_star, gt.c_gt)
    return ScoreRow(pred.video_id, T, S, C, harmonic_mean3(T, S, C))


def join(preds: Iterable[Prediction], gts: Mapping[str, GroundTruth] | Iterable[GroundTruth]):
    """Pair predictions with ground truth by id; both sides must cover the same ids."""
    gt_map = gts if isinstance(gts, Mapping) else {g.video_id: g for g in gts}
    pred_map = {p.video_id: p for p in preds}
    missing = sorted(set(gt_map) - set(pred_map))
    extra = sorted(set(pred_map) - set(gt_map))
    if missing or extra:
        raise JoinError(
            f"id sets differ: {len(missing)} ground-truth ids without prediction "
            f"(e.g. {missing[:3]}), {len(extra)} predictions without ground truth (e.g. {extra[:3]})"
        )
    return [(pred_map[k], gt_map[k]) for k in sorted(gt_map)]


def score_all(preds, gts, sigma_t=1.0, sigma_x=0.127, sigma_y=0.119) -> list[ScoreRow]:
    return [score_video(p, g, sigma_t, sigma_x, sigma_y) for p, g in join(preds, gts)]


def dataset_summary(rows: Sequence[ScoreRow]) -> dict[str, float]:
    if not rows:
        raise InvalidInputError("cannot summarise an empty score table")
    n = len(rows)
    mean_T = math.fsum(r.T for r in rows) / n
    mean_S = math.fsum(r.S for r in rows) / n
    mean_C = math.fsum(r.C for r in rows) / n
    return {
        "n": n,
        "mean_T": mean_T,
        "mean_S": mean_S,
        "mean_C": mean_C,
        "ACC_S": math.fsum(r.hm for r in rows) / n,
        "hm_of_means": harmonic_mean3(mean_T, mean_S, mean_C),
    }


def bootstrap_ci(
    rows: Sequence[ScoreRow],
    n_resamples: int = 1000,
    level: float = 0.95,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile CI of the mean per-video HM over video resamples."""
    if not rows:
        raise InvalidInputError("cannot bootstrap an empty score table")
    hm = np.array([r.hm for r in rows], dtype=float)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, hm.size, size=(n_resamples, hm.size))
    means = hm[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def paired_bootstrap(
    rows_a: Sequence[ScoreRow],
    rows_b: Sequence[ScoreRow],
    n_resamples: int = 1000,
    seed: int = 0,
    level: float = 0.95,
) -> dict[str, float]:
    """Resample videos jointly; p is the doubled tail of sign flips, floored at 1/n."""
    a = {r.video_id: r.hm for r in rows_a}
    b = {r.video_id: r.hm for r in rows_b}
    if set(a) != set(b):
        raise JoinError(f"paired bootstrap needs identical video sets ({len(set(a) ^ set(b))} ids differ)")
    if not a:
        raise InvalidInputError("cannot bootstrap empty score tables")
    ids = sorted(a)
    diff = np.array([a[k] - b[k] for k in ids], dtype=float)
    observed = float(diff.mean())
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, diff.size, size=(n_resamples, diff.size))
    deltas = diff[idx].mean(axis=1)
    if observed >= 0:
        tail = float(np.mean(deltas <= 0))
    else:
        tail = float(np.mean(deltas >= 0))
    p = min(1.0, max(2.0 * tail, 1.0 / n_resamples))
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(deltas, [alpha, 1.0 - alpha])
    return {"delta_mean": observed, "p_two_sided": p, "ci_lo": float(lo), "ci_hi": float(hi)}


# -- CSV I/O -----------------------------------------------------------------

PRED_HEADER = ["video_id", "time", "x", "y", "type"]


def _read_rows(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [h for h in PRED_HEADER if h not in header]
        if missing:
            raise InvalidInputError(f"{path}: missing columns {missing}")
        return [{k.strip(): (v or "").strip() for k, v in row.items() if k} for row in reader]


def _parse_row(row: dict[str, str], path) -> tuple[str, float, float, float, CollisionType]:
    try:
        return (
            row["video_id"],
            float(row["time"]),
            float(row["x"]),
            float(row["y"]),
            normalize_type(row["type"]),
        )
    except (ValueError, ParseError) as exc:
        raise InvalidInputError(f"{path}: bad row for {row.get('video_id')!r}: {exc}") from exc


def read_ground_truth(path: str | Path) -> dict[str, GroundTruth]:
    out: dict[str, GroundTruth] = {}
    for row in _read_rows(path):
        vid, t, x, y, c = _parse_row(row, path)
        if vid in out:
            raise InvalidInputError(f"{path}: duplicate video_id {vid!r}")
        out[vid] = GroundTruth(vid, t, x, y, c)
    return out


def read_predictions(path: str | Path) -> list[Prediction]:
    preds = []
    seen = set()
    for row in _read_rows(path):
        vid, t, x, y, c = _parse_row(row, path)
        if vid in seen:
            raise InvalidInputError(f"{path}: duplicate video_id {vid!r}")
        seen.add(vid)
        preds.append(Prediction(vid, t, x, y, c))
    return preds


def write_predictions(path: str | Path, preds: Iterable[Prediction]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PRED_HEADER)
        for p in sorted(preds, key=lambda p: p.video_id):
            w.writerow([p.video_id, repr(p.t_star), repr(p.x_star), repr(p.y_star), p.c_star.value])
