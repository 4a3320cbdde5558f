"""Failure analyses computed from predictions, ground truth and traces.

Everything here is offline: the sweep and ablation tables re-run the gates
over stored traces and never contact a model.
"""

from __future__ import annotations

import csv
import io
import math
import statistics
from dataclasses import replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .config import RunConfig
from .evaluator import ScoreRow, dataset_summary, join, score_all, score_video
from .pipeline import assemble_prediction, naive_fill
from .types import CollisionType, GroundTruth, InvalidInputError, Prediction, TraceError, VideoRecord

DEFAULT_TAU_GRID = (0.1, 0.2, 0.3, 0.5, 1.0)
DEFAULT_M_GRID = (0.0, 5.0, 10.0, 20.0, 50.0)
DURATION_EDGES = (0.0, 10.0, 20.0)
HIST_WIDTH = 0.5
HIST_RANGE = 10.0


def _summary_row(label_key: str, label: Any, rows: Sequence[ScoreRow]) -> dict[str, Any]:
    s = dataset_summary(rows)
    return {label_key: label, "n": s["n"], "T": s["mean_T"], "S": s["mean_S"], "C": s["mean_C"],
            "ACC_S": s["ACC_S"]}


def signed_errors(preds: Iterable[Prediction], gts: Mapping[str, GroundTruth]) -> dict[str, float]:
    pairs = join(preds, gts)
    return {p.video_id: p.t_star - g.t_gt for p, g in pairs}


def signed_error_stats(preds: Iterable[Prediction], gts: Mapping[str, GroundTruth]) -> dict[str, Any]:
    """Mean/median of predicted minus true time, plus a 0.5 s histogram on [-10, 10]."""
    errs = list(signed_errors(preds, gts).values())
    if not errs:
        raise InvalidInputError("no joined rows to summarise")
    n_bins = int(round(2 * HIST_RANGE / HIST_WIDTH))
    counts = [0] * n_bins
    under = over = 0
    for e in errs:
        if e < -HIST_RANGE:
            under += 1
        elif e >= HIST_RANGE:
            over += 1
        else:
            counts[min(int(math.floor((e + HIST_RANGE) / HIST_WIDTH)), n_bins - 1)] += 1
    bins = [{"lo": -math.inf, "hi": -HIST_RANGE, "count": under}]
    bins += [{"lo": -HIST_RANGE + i * HIST_WIDTH, "hi": -HIST_RANGE + (i + 1) * HIST_WIDTH, "count": c}
             for i, c in enumerate(counts)]
    bins.append({"lo": HIST_RANGE, "hi": math.inf, "count": over})
    return {"n": len(errs), "mean": math.fsum(errs) / len(errs), "median": statistics.median(errs),
            "bins": bins}


def mae_by_duration(
    preds: Iterable[Prediction],
    gts: Mapping[str, GroundTruth],
    durations: Mapping[str, float],
    edges: Sequence[float] = DURATION_EDGES,
) -> list[dict[str, Any]]:
    """Temporal MAE per duration bucket ``[edge_i, edge_i+1)``; the last bucket is open.

    Buckets with no videos are left out of the table.
    """
    bounds = list(zip(edges, list(edges[1:]) + [math.inf]))
    groups: list[list[float]] = [[] for _ in bounds]
    for vid, e in signed_errors(preds, gts).items():
        if vid not in durations:
            raise InvalidInputError(f"no duration known for {vid!r}")
        d = durations[vid]
        for i, (lo, hi) in enumerate(bounds):
            if lo <= d < hi:
                groups[i].append(abs(e))
                break
    table = []
    for (lo, hi), g in zip(bounds, groups):
        if g:
            label = f"[{lo:g},{hi:g})" if math.isfinite(hi) else f"[{lo:g},inf)"
            table.append({"bucket": label, "lo": lo, "hi": hi, "n": len(g), "mae": math.fsum(g) / len(g)})
    return table


def confusion_matrix(preds: Iterable[Prediction], gts: Mapping[str, GroundTruth]) -> dict[str, Any]:
    """Rows are ground truth, columns predictions, in ``CollisionType`` order."""
    labels = CollisionType.ordered()
    k = len(labels)
    counts = [[0] * k for _ in range(k)]
    for p, g in join(preds, gts):
        counts[g.c_gt.index][p.c_star.index] += 1
    normalized = []
    for row in counts:
        total = sum(row)
        normalized.append([c / total if total else 0.0 for c in row])
    return {"labels": [c.value for c in labels], "counts": counts, "normalized": normalized}


def per_type_table(
    preds: Iterable[Prediction], gts: Mapping[str, GroundTruth], cfg: RunConfig | None = None
) -> list[dict[str, Any]]:
    """Component means and mean HM per ground-truth class.

    The N-weighted mean of the group ACC_S values is the pooled ACC_S, but the
    group T/S/C means cannot be recombined into it through the harmonic mean.
    """
    cfg = cfg or RunConfig()
    rows = score_all(preds, gts, cfg.sigma_t, cfg.sigma_x, cfg.sigma_y)
    table = []
    for c in CollisionType.ordered():
        group = [r for r in rows if gts[r.video_id].c_gt is c]
        if group:
            table.append(_summary_row("type", c.value, group))
    return table


def oracle_mae(errors_a: Mapping[str, float], errors_b: Mapping[str, float]) -> dict[str, float]:
    """MAE of each series and of the per-video best of the two."""
    if set(errors_a) != set(errors_b):
        raise InvalidInputError("oracle needs both error series over the same videos")
    if not errors_a:
        raise InvalidInputError("empty error series")
    ids = sorted(errors_a)
    n = len(ids)
    a = [abs(errors_a[k]) for k in ids]
    b = [abs(errors_b[k]) for k in ids]
    return {
        "n": n,
        "mae_a": math.fsum(a) / n,
        "mae_b": math.fsum(b) / n,
        "mae_oracle": math.fsum(min(x, y) for x, y in zip(a, b)) / n,
    }


def fallback_decomposition(
    preds: Sequence[Prediction],
    gts: Mapping[str, GroundTruth],
    videos: Mapping[str, VideoRecord] | Mapping[str, float],
    cfg: RunConfig | None = None,
) -> list[dict[str, Any]]:
    """Scores for the VLM subset, the fallback subset, everything, and the
    counterfactual where every fallback row is replaced by naive fill."""
    cfg = cfg or RunConfig()
    sig = (cfg.sigma_t, cfg.sigma_x, cfg.sigma_y)
    rows = {r.video_id: r for r in score_all(preds, gts, *sig)}
    fallback_ids = {p.video_id for p in preds if p.provenance.is_fallback}
    vlm = [r for k, r in sorted(rows.items()) if k not in fallback_ids]
    fb = [r for k, r in sorted(rows.items()) if k in fallback_ids]

    def video_for(vid: str) -> VideoRecord:
        v = videos[vid]
        return v if isinstance(v, VideoRecord) else VideoRecord(vid, "", float(v))

    naive = []
    for p in sorted(preds, key=lambda p: p.video_id):
        if p.video_id in fallback_ids:
            naive.append(score_video(naive_fill(video_for(p.video_id)), gts[p.video_id], *sig))
        else:
            naive.append(rows[p.video_id])

    table = []
    if vlm:
        table.append(_summary_row("subset", "pass1_vlm_success", vlm))
    if fb:
        table.append(_summary_row("subset", "pass1_fallback", fb))
    table.append(_summary_row("subset", "full", [rows[k] for k in sorted(rows)]))
    table.append(_summary_row("subset", "vlm_plus_naive_fill", naive))
    return table


def check_traces(traces: Mapping[str, dict[str, Any]], video_ids: Iterable[str]) -> None:
    """Every video needs a trace with a Pass-1 record before offline re-gating."""
    for vid in sorted(video_ids):
        t = traces.get(vid)
        if t is None:
            raise TraceError(vid, "no trace for this video")
        if "coarse" not in (t.get("calls") or {}):
            raise TraceError(vid, "trace is missing its Pass-1 record")


def _regated_rows(traces, gts, cfg: RunConfig) -> list[ScoreRow]:
    preds = [assemble_prediction(traces[k], cfg) for k in sorted(gts)]
    return score_all(preds, gts, cfg.sigma_t, cfg.sigma_x, cfg.sigma_y)


def sweep_gates(
    traces: Mapping[str, dict[str, Any]],
    gts: Mapping[str, GroundTruth],
    tau_grid: Sequence[float] = DEFAULT_TAU_GRID,
    m_grid: Sequence[float] = DEFAULT_M_GRID,
    cfg: RunConfig | None = None,
) -> dict[str, list[dict[str, Any]]]:
    """Vary one gate threshold at a time, the other held at its ``cfg`` value."""
    cfg = cfg or RunConfig()
    check_traces(traces, gts)
    tau_rows = [_summary_row("tau", tau, _regated_rows(traces, gts, replace(cfg, tau=float(tau))))
                for tau in tau_grid]
    m_rows = [_summary_row("m", m, _regated_rows(traces, gts, replace(cfg, margin=float(m))))
              for m in m_grid]
    return {"tau": tau_rows, "m": m_rows}


ABLATION_STEPS = (
    ("pass1_only", dict(use_specialist_type=False, use_pass2_time=False, use_pass2_space=False)),
    ("+specialist_type", dict(use_specialist_type=True, use_pass2_time=False, use_pass2_space=False)),
    ("+pass2_time", dict(use_specialist_type=True, use_pass2_time=True, use_pass2_space=False)),
    ("+pass2_space", dict(use_specialist_type=True, use_pass2_time=True, use_pass2_space=True)),
)


def ablation_report(
    traces: Mapping[str, dict[str, Any]],
    gts: Mapping[str, GroundTruth],
    cfg: RunConfig | None = None,
    sigma_ts: Sequence[float] = (1.0, 2.0),
) -> list[dict[str, Any]]:
    """The cumulative component lattice, each step re-derived from traces.

    ``T@<sigma>`` columns report temporal score at each σ_t; S, C and ACC_S
    use ``cfg.sigma_t``.
    """
    cfg = cfg or RunConfig()
    check_traces(traces, gts)
    table = []
    for name, switches in ABLATION_STEPS:
        step_cfg = replace(cfg, **switches)
        preds = [assemble_prediction(traces[k], step_cfg) for k in sorted(gts)]
        row = _summary_row("config", name, score_all(preds, gts, cfg.sigma_t, cfg.sigma_x, cfg.sigma_y))
        for s in sigma_ts:
            t_rows = score_all(preds, gts, s, cfg.sigma_x, cfg.sigma_y)
            row[f"T@{s:g}"] = math.fsum(r.T for r in t_rows) / len(t_rows)
        table.append(row)
    return table


# -- output helpers ----------------------------------------------------------------


def table_to_csv(rows: Sequence[Mapping[str, Any]]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def format_table(rows: Sequence[Mapping[str, Any]], title: str | None = None) -> str:
    if not rows:
        return (title + "\n" if title else "") + "  (empty)\n"
    cols = list(rows[0].keys())

    def cell(v: Any) -> str:
        if isinstance(v, float):
            return f"{v:.4f}"
        return str(v)

    cells = [[cell(r.get(c, "")) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    lines = [title] if title else []
    lines.append("  ".join(c.rjust(w) for c, w in zip(cols, widths)))
    lines += ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines) + "\n"


def write_table(path: str | Path, rows: Sequence[Mapping[str, Any]]) -> None:
    Path(path).write_text(table_to_csv(rows))


def read_error_series(path: str | Path) -> dict[str, float]:
    """Two-column CSV ``video_id,error`` (signed or absolute seconds)."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if not {"video_id", "error"} <= set(reader.fieldnames or []):
            raise InvalidInputError(f"{path}: need columns video_id,error")
        for row in reader:
            out[row["video_id"].strip()] = float(row["error"])
    return out
